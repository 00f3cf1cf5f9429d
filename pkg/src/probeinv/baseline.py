"""Iterative least-squares identification baseline.

Parameterizes each unknown signal as piecewise-constant bin values and
minimizes the integrated squared output mismatch by finite-difference
gradient descent. Unlike the inverse-system method this needs an initial
guess and repeated forward simulations; it exists as the comparison point
for convergence/trapping behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .forward import IntegratorConfig, SimulationError, propagate_batch
from .signals import (
    MeasurementRecord,
    PiecewiseConstant,
    ProbeModel,
    SignalTrace,
    eval_signal,
)

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class FixedStep:
    eta: float


@dataclass(frozen=True)
class Backtracking:
    initial: float | None = None  # None: scaled from the first gradient
    shrink: float = 0.5
    grow: float = 2.0
    armijo: float = 1e-4
    max_halvings: int = 40


@dataclass(frozen=True)
class LsqConfig:
    n_bins: int = 50
    initial_guess: tuple = (0.0,)  # per channel: float (rad/ns) or SignalSpec
    max_iters: int = 200
    step_rule: Union[FixedStep, Backtracking] = field(default_factory=Backtracking)
    tol: float = 0.0  # stop once an accepted step improves the cost by less than this
    fd_step_scale: float = 1e-4

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        object.__setattr__(self, "initial_guess", tuple(self.initial_guess))


def _record_cost(y_sim: np.ndarray, record: MeasurementRecord) -> np.ndarray:
    """Trapezoid-rule integral of the squared output mismatch, summed over channels."""
    mismatch = ((y_sim - record.values[None]) ** 2).sum(axis=-1)
    return _trapezoid(mismatch, dx=record.dt, axis=-1)


def _stage_grids(record: MeasurementRecord, integrator: IntegratorConfig):
    n_steps = (record.values.shape[0] - 1) * integrator.sample_every
    grid = record.t0 + integrator.dt * np.arange(n_steps + 1)
    mids = grid[:-1] + 0.5 * integrator.dt
    return grid, mids


def _default_integrator(record: MeasurementRecord) -> IntegratorConfig:
    return IntegratorConfig(dt=record.dt, sample_every=1)


def lsq_cost(
    model: ProbeModel,
    candidates: Sequence,
    record: MeasurementRecord,
    integrator: IntegratorConfig | None = None,
) -> float:
    """Cost of candidate signals: forward-simulate and integrate the mismatch.

    Candidates are signal specs or SignalTraces (interpreted through linear
    interpolation), one per control channel.
    """
    if len(candidates) != model.n_inputs:
        raise ValueError(f"need {model.n_inputs} candidate signals, got {len(candidates)}")
    integrator = integrator or _default_integrator(record)
    specs = [
        _as_spec(c) for c in candidates
    ]
    grid, mids = _stage_grids(record, integrator)
    u_grid = np.stack([eval_signal(s, grid) for s in specs], axis=-1)[None]
    u_mid = np.stack([eval_signal(s, mids) for s in specs], axis=-1)[None]
    _, y = propagate_batch(
        model, u_grid, u_mid, model.initial_state.matrix, integrator.dt,
        integrator.sample_every, store_states=False,
    )
    return float(_record_cost(y, record)[0])


def _as_spec(candidate):
    from .signals import Samples

    if isinstance(candidate, SignalTrace):
        return Samples(candidate)
    return candidate


def lsq_identify(
    model: ProbeModel,
    record: MeasurementRecord,
    cfg: LsqConfig,
    integrator: IntegratorConfig | None = None,
):
    """Gradient-descent identification over piecewise-constant bin values.

    Gradients come from forward finite differences (one extra simulation per
    bin, batched into a single propagation). Returns (traces, history):
    the best signals evaluated on the record grid and the cost per accepted
    iterate. Non-convergence is a reported outcome, not an error.
    """
    if len(cfg.initial_guess) != model.n_inputs:
        raise ValueError(f"need {model.n_inputs} initial guesses, got {len(cfg.initial_guess)}")
    integrator = integrator or _default_integrator(record)
    m = model.n_inputs
    horizon = record.dt * (record.values.shape[0] - 1)
    bin_width = horizon / cfg.n_bins
    centers = record.t0 + bin_width * (np.arange(cfg.n_bins) + 0.5)

    x = np.empty((m, cfg.n_bins))
    for k, guess in enumerate(cfg.initial_guess):
        x[k] = guess if np.isscalar(guess) else eval_signal(guess, centers)

    grid, mids = _stage_grids(record, integrator)
    bin_of_grid = np.clip(((grid - record.t0) / bin_width).astype(int), 0, cfg.n_bins - 1)
    bin_of_mid = np.clip(((mids - record.t0) / bin_width).astype(int), 0, cfg.n_bins - 1)

    def batch_costs(xs: np.ndarray) -> np.ndarray:
        # xs: (B, m, n_bins) -> piecewise-constant control values at the stage times
        u_grid = xs[:, :, bin_of_grid].transpose(0, 2, 1)
        u_mid = xs[:, :, bin_of_mid].transpose(0, 2, 1)
        _, y = propagate_batch(
            model, u_grid, u_mid, model.initial_state.matrix, integrator.dt,
            integrator.sample_every, store_states=False,
        )
        return _record_cost(y, record)

    def gradient(x_now: np.ndarray, cost_now: float):
        scales = np.maximum(np.max(np.abs(x_now), axis=1), 1e-6)
        h = cfg.fd_step_scale * scales
        batch = np.repeat(x_now[None], m * cfg.n_bins, axis=0)
        for k in range(m):
            for b in range(cfg.n_bins):
                batch[k * cfg.n_bins + b, k, b] += h[k]
        costs = batch_costs(batch)
        grad = (costs - cost_now).reshape(m, cfg.n_bins) / h[:, None]
        return grad

    def safe_cost(xs: np.ndarray) -> float:
        # a wild line-search trial can destabilize the integrator; that is
        # just a rejected step, not a failure of the identification
        try:
            return float(batch_costs(xs[None])[0])
        except SimulationError:
            return np.inf

    cost = float(batch_costs(x[None])[0])
    history = [cost]
    eta = None
    if isinstance(cfg.step_rule, FixedStep):
        eta = cfg.step_rule.eta
    elif cfg.step_rule.initial is not None:
        eta = cfg.step_rule.initial

    for _ in range(cfg.max_iters):
        grad = gradient(x, cost)
        gnorm2 = float(np.sum(grad**2))
        if gnorm2 == 0.0:
            break
        if isinstance(cfg.step_rule, FixedStep):
            x = x - cfg.step_rule.eta * grad
            cost = safe_cost(x)
            history.append(cost)
            continue
        if eta is None:
            # first step moves the largest bin by ~10% of the signal scale
            scale = max(np.max(np.abs(x)), 1e-6)
            eta = 0.1 * scale / np.max(np.abs(grad))
        accepted = False
        for _ in range(cfg.step_rule.max_halvings):
            trial = x - eta * grad
            trial_cost = safe_cost(trial)
            if trial_cost <= cost - cfg.step_rule.armijo * eta * gnorm2:
                accepted = True
                break
            eta *= cfg.step_rule.shrink
        if not accepted:
            break
        improvement = cost - trial_cost
        x, cost = trial, trial_cost
        history.append(cost)
        eta *= cfg.step_rule.grow
        if improvement < cfg.tol:
            break

    times = record.times
    idx = np.clip(((times - record.t0) / bin_width).astype(int), 0, cfg.n_bins - 1)
    traces = [SignalTrace(record.t0, record.dt, x[k, idx]) for k in range(m)]
    return traces, history


def record_energy(record: MeasurementRecord) -> float:
    """Trapezoid-rule integral of |y|^2, the scale against which costs are judged."""
    return float(_trapezoid((record.values**2).sum(axis=-1), dx=record.dt))
