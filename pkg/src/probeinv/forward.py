"""Forward integration of the controlled master equation and noise injection.

Fixed-step RK4 with time-dependent coefficients evaluated at the RK stage
times. Fixed stepping (rather than adaptive) keeps the output uniformly
sampled, which the downstream finite-difference differentiation requires.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .operators import (
    HAMILTONIAN,
    LINDBLAD,
    DensityState,
    GeneratorTerm,
    as_operator,
)
from .signals import (
    MeasurementRecord,
    Multisine,
    ProbeModel,
    SignalSpec,
    SumSignal,
    eval_signal,
)

TRACE_DRIFT_TOL = 1e-6


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.1  # ns
    sample_every: int = 5
    method: str = "rk4"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.method != "rk4":
            raise ValueError(f"unsupported integration method {self.method!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Band-limited random-phase multisine noise.

    ``fundamental`` is the angular frequency (rad/ns) of the signal being
    identified; the band edges are defined relative to it. ``variance`` is
    dimensionless for measurement noise, (rad/ns)^2 for evolution noise.
    """

    target: str  # "evolution" | "measurement"
    band: str  # "low" | "high"
    variance: float
    seed: int
    fundamental: float
    channel: int = 0
    n_components: int = 16

    BAND_EDGES = {"low": (0.5, 2.0), "high": (25.0, 30.0)}

    def __post_init__(self):
        if self.target not in ("evolution", "measurement"):
            raise ValueError(f"unknown noise target {self.target!r}")
        if self.band not in self.BAND_EDGES:
            raise ValueError(f"unknown noise band {self.band!r}")
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")
        if not self.fundamental > 0:
            raise ValueError("fundamental frequency must be positive")


def synthesize_multisine(spec: NoiseSpec, rng=None) -> Multisine:
    """Draw one multisine realization for ``spec``.

    Equal amplitudes, frequencies uniform over the band, phases uniform over
    [0, 2*pi). The amplitude is set analytically so the random-phase process
    has the requested variance: each of the N components contributes a^2/2.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    lo, hi = spec.BAND_EDGES[spec.band]
    freqs = rng.uniform(lo * spec.fundamental, hi * spec.fundamental, spec.n_components)
    phases = rng.uniform(0.0, 2.0 * np.pi, spec.n_components)
    amp = np.sqrt(2.0 * spec.variance / spec.n_components)
    return Multisine(np.full(spec.n_components, amp), freqs, phases)


def inject_noise(target, spec: NoiseSpec):
    """Apply a noise spec to a measurement record or to a list of input signals.

    Measurement target: returns a new record with an independent multisine
    trace added to every output channel. Evolution target: returns a new
    input list with the multisine summed onto the designated control channel.
    Variance 0 returns the input unchanged.
    """
    if spec.variance == 0.0:
        return target
    rng = np.random.default_rng(spec.seed)
    if spec.target == "measurement":
        if not isinstance(target, MeasurementRecord):
            raise TypeError("measurement noise applies to a MeasurementRecord")
        t = target.times
        noisy = target.values.copy()
        for ch in range(target.n_channels):
            noisy[:, ch] += eval_signal(synthesize_multisine(spec, rng), t)
        return replace(target, values=noisy)
    if isinstance(target, MeasurementRecord):
        raise TypeError("evolution noise applies to the input signal list, not a record")
    inputs = list(target)
    if not 0 <= spec.channel < len(inputs):
        raise ValueError(f"noise channel {spec.channel} out of range for {len(inputs)} inputs")
    inputs[spec.channel] = SumSignal((inputs[spec.channel], synthesize_multisine(spec, rng)))
    return inputs


def _split_terms(terms: Sequence[GeneratorTerm], dim: int):
    """Collapse Hamiltonian terms into one matrix; keep Lindblad terms as (L+, L, L+L) triples."""
    h = np.zeros((dim, dim), dtype=complex)
    lindblads = []
    for term in terms:
        if term.kind == HAMILTONIAN:
            h = h + term.operator
        else:
            ld = term.operator.conj().T
            lindblads.append((term.operator, ld, ld @ term.operator))
    return h, lindblads


def _stage_times(n_steps: int, dt: float, t0: float = 0.0):
    grid = t0 + dt * np.arange(n_steps + 1)
    mids = grid[:-1] + 0.5 * dt
    return grid, mids


def _rhs_factory(h_drift, drift_lindblads, control_hs, control_lindblads):
    """Batched master-equation right-hand side: rho (..., d, d), u (..., m)."""

    def rhs(rho, u):
        h = h_drift
        if control_hs is not None and control_hs.shape[0]:
            h = h + np.einsum("...m,mij->...ij", u, control_hs)
        out = -1.0j * (h @ rho - rho @ h)
        for op, ld, ldop in drift_lindblads:
            out += 2.0 * (op @ rho @ ld) - ldop @ rho - rho @ ldop
        for k, (op, ld, ldop) in control_lindblads:
            uk = u[..., k, None, None]
            out += uk * (2.0 * (op @ rho @ ld) - ldop @ rho - rho @ ldop)
        return out

    return rhs


def _prepare_model_rhs(model: ProbeModel):
    dim = model.dim
    h_drift, drift_lb = _split_terms(model.drift, dim)
    ham_controls = []
    lb_controls = []
    for k, term in enumerate(model.controls):
        if term.kind == HAMILTONIAN:
            ham_controls.append((k, term.operator))
        else:
            ld = term.operator.conj().T
            lb_controls.append((k, (term.operator, ld, ld @ term.operator)))
    if ham_controls:
        hs = np.zeros((model.n_inputs, dim, dim), dtype=complex)
        for k, op in ham_controls:
            hs[k] = op
    else:
        hs = np.zeros((0, dim, dim), dtype=complex)
    return _rhs_factory(h_drift, drift_lb, hs, lb_controls)


def propagate_batch(
    model: ProbeModel, u_grid, u_mid, rho0, dt: float, sample_every: int = 1,
    store_states: bool = True,
):
    """RK4-propagate a batch of input realizations through one probe model.

    ``u_grid`` has shape (B, n_steps + 1, m) with control values at the grid
    times, ``u_mid`` shape (B, n_steps, m) at the midpoints; ``rho0`` is the
    shared initial density matrix. Returns (rho_samples, y_samples) with
    shapes (B, n_samples, d, d) and (B, n_samples, n_obs); ``rho_samples``
    is None when ``store_states`` is off.
    """
    u_grid = np.asarray(u_grid, dtype=float)
    u_mid = np.asarray(u_mid, dtype=float)
    batch, n_steps = u_mid.shape[0], u_mid.shape[1]
    rhs = _prepare_model_rhs(model)
    obs = np.stack(model.observables)

    rho = np.broadcast_to(rho0, (batch,) + rho0.shape).copy()
    sample_idx = range(0, n_steps + 1, sample_every)
    n_samples = len(sample_idx)
    rho_samples = (
        np.empty((batch, n_samples, rho0.shape[0], rho0.shape[1]), dtype=complex)
        if store_states
        else None
    )
    y_samples = np.empty((batch, n_samples, obs.shape[0]))

    def observe(slot, rho_now):
        if store_states:
            rho_samples[:, slot] = rho_now
        y_samples[:, slot] = np.einsum("bij,kji->bk", rho_now, obs).real

    slot = 0
    observe(slot, rho)
    slot += 1
    for i in range(n_steps):
        u0, um, u1 = u_grid[:, i], u_mid[:, i], u_grid[:, i + 1]
        k1 = rhs(rho, u0)
        k2 = rhs(rho + 0.5 * dt * k1, um)
        k3 = rhs(rho + 0.5 * dt * k2, um)
        k4 = rhs(rho + dt * k3, u1)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (i + 1) % sample_every == 0 or i == n_steps - 1:
            traces = np.einsum("bii->b", rho).real
            drift = np.max(np.abs(traces - 1.0))
            if not np.isfinite(drift) or drift > TRACE_DRIFT_TOL:
                raise SimulationError(
                    f"trace drift {drift:.3e} at t={dt * (i + 1):.4g} ns "
                    "exceeds tolerance; reduce dt or check the model"
                )
        if (i + 1) % sample_every == 0:
            observe(slot, rho)
            slot += 1
    return rho_samples, y_samples


def simulate(model: ProbeModel, inputs: Sequence[SignalSpec], T: float, cfg: IntegratorConfig):
    """Integrate the controlled master equation and sample the outputs.

    Returns (trajectory, record): the list of DensityState snapshots and the
    MeasurementRecord at the sample times. The horizon is rounded to a whole
    number of integration steps.
    """
    if len(inputs) != model.n_inputs:
        raise ValueError(f"model has {model.n_inputs} inputs, got {len(inputs)} signals")
    if not T > 0:
        raise ValueError("horizon must be positive")
    n_steps = max(1, int(round(T / cfg.dt)))
    grid, mids = _stage_times(n_steps, cfg.dt)
    u_grid = np.stack([eval_signal(s, grid) for s in inputs], axis=-1)[None]
    u_mid = np.stack([eval_signal(s, mids) for s in inputs], axis=-1)[None]
    rho_samples, y_samples = propagate_batch(
        model, u_grid, u_mid, model.initial_state.matrix, cfg.dt, cfg.sample_every
    )
    trajectory = [DensityState(0.5 * (r + r.conj().T)) for r in rho_samples[0]]
    record = MeasurementRecord(0.0, cfg.dt * cfg.sample_every, y_samples[0])
    return trajectory, record


def closed_state_simulate(model: ProbeModel, inputs: Sequence[SignalSpec], T: float, cfg: IntegratorConfig):
    """Schrodinger-equation RK4 path for pure-state models.

    The initial state must be pure and the model free of Lindblad terms.
    The norm is renormalized each step; returns (psis, record, max_norm_drift).
    """
    for term in model.drift + model.controls:
        if term.kind == LINDBLAD:
            raise ValueError("closed-system integration requires a Lindblad-free model")
    if len(inputs) != model.n_inputs:
        raise ValueError(f"model has {model.n_inputs} inputs, got {len(inputs)} signals")
    rho0 = model.initial_state.matrix
    vals, vecs = np.linalg.eigh(rho0)
    if vals[-1] < 1.0 - 1e-9:
        raise ValueError("initial state is not pure")
    psi = vecs[:, -1].astype(complex)

    h_drift, _ = _split_terms(model.drift, model.dim)
    hs = np.stack([t.operator for t in model.controls])

    n_steps = max(1, int(round(T / cfg.dt)))
    grid, mids = _stage_times(n_steps, cfg.dt)
    u_grid = np.stack([eval_signal(s, grid) for s in inputs], axis=-1)
    u_mid = np.stack([eval_signal(s, mids) for s in inputs], axis=-1)

    def deriv(p, u):
        h = h_drift + np.einsum("m,mij->ij", u, hs)
        return -1.0j * (h @ p)

    obs = np.stack(model.observables)
    psis = [psi.copy()]
    ys = [np.einsum("i,kij,j->k", psi.conj(), obs, psi).real]
    max_drift = 0.0
    dt = cfg.dt
    for i in range(n_steps):
        k1 = deriv(psi, u_grid[i])
        k2 = deriv(psi + 0.5 * dt * k1, u_mid[i])
        k3 = deriv(psi + 0.5 * dt * k2, u_mid[i])
        k4 = deriv(psi + dt * k3, u_grid[i + 1])
        psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        norm = np.linalg.norm(psi)
        max_drift = max(max_drift, abs(norm - 1.0))
        psi = psi / norm
        if (i + 1) % cfg.sample_every == 0:
            psis.append(psi.copy())
            ys.append(np.einsum("i,kij,j->k", psi.conj(), obs, psi).real)
    record = MeasurementRecord(0.0, cfg.dt * cfg.sample_every, np.asarray(ys))
    return psis, record, max_drift


# ---------------------------------------------------------------------------
# record serialization: CSV with header t,y1,...,yn, 12 significant digits


def write_record_csv(record: MeasurementRecord, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"y{k + 1}" for k in range(record.n_channels)])
        for t, row in zip(record.times, record.values):
            writer.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in row])


def read_record_csv(path) -> MeasurementRecord:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    t = data[:, 0]
    if len(t) < 2:
        raise ValueError("record CSV needs at least two samples")
    return MeasurementRecord(float(t[0]), float(t[1] - t[0]), data[:, 1:])
