"""Signal reconstruction by integrating the inverse input-output system.

The reconstruction co-integrates a state surrogate with RK4: at every stage
the instantaneous inputs are read out by solving the linear system
M(t) u = rhs(t), where M_kj = <Lj* Pk> is built from the transformed
observable rows and rhs combines measured-output derivatives with drift
expectations. Steps where M(t) loses rank (smallest singular value below
threshold) are flagged as singular windows; inside them the inputs follow
the configured hold policy instead of the ill-posed readout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import savgol_filter

from .forward import _prepare_model_rhs
from .invertibility import InvertibilityVerdict
from .operators import DensityState, apply_adjoint, apply_adjoint_sum
from .signals import MeasurementRecord, ProbeModel, SignalTrace

ABS_SINGULAR_FLOOR = 1e-14


class UnrecoverableStepError(RuntimeError):
    pass


class InversionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThreePoint:
    """Central differences with one-sided second-order stencils at the ends."""


@dataclass(frozen=True)
class SavitzkyGolay:
    window: int
    degree: int

    def __post_init__(self):
        if self.window < 5 or self.window % 2 == 0:
            raise ValueError("Savitzky-Golay window must be odd and >= 5")
        if not 0 < self.degree < self.window:
            raise ValueError("polynomial degree must be positive and below the window size")


@dataclass(frozen=True)
class InversionConfig:
    derivative_scheme: object = ThreePoint()
    singular_threshold: float = 1e-3  # relative smallest-singular-value cutoff
    hold_policy: str = "hold_last"  # input value used inside flagged windows

    def __post_init__(self):
        if self.hold_policy not in ("hold_last", "zero"):
            raise ValueError(f"unknown hold policy {self.hold_policy!r}")
        if not 0 < self.singular_threshold < 1:
            raise ValueError("singular_threshold must be in (0, 1)")


def _three_point(y: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(y)
    out[1:-1] = (y[2:] - y[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dt)
    out[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (2.0 * dt)
    return out


def estimate_derivatives(record: MeasurementRecord, order: int, cfg: InversionConfig) -> np.ndarray:
    """Estimate d^k y / dt^k for k = 1..order on the record grid.

    Returns an array of shape (order, N, n_channels). The three-point scheme
    applies the first-derivative stencil repeatedly for higher orders.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    y = record.values
    if y.shape[0] < 2 * order + 1:
        raise ValueError(f"record too short: need at least {2 * order + 1} samples for order {order}")
    scheme = cfg.derivative_scheme
    out = np.empty((order,) + y.shape)
    if isinstance(scheme, ThreePoint):
        current = y
        for k in range(order):
            current = _three_point(current, record.dt)
            out[k] = current
    elif isinstance(scheme, SavitzkyGolay):
        if scheme.degree < order:
            raise ValueError("Savitzky-Golay degree must be >= the requested derivative order")
        for k in range(1, order + 1):
            out[k - 1] = savgol_filter(
                y, scheme.window, scheme.degree, deriv=k, delta=record.dt, axis=0, mode="interp"
            )
    else:
        raise TypeError(f"unknown derivative scheme {type(scheme).__name__}")
    return out


@dataclass(frozen=True)
class ReadoutPlan:
    """Precomputed operator data for the per-step input readout.

    ``adjoint_rows[k, j]`` is Lj* Pk, ``drift_rows[k]`` is L0* Pk, and
    ``sigma_ref`` is the largest singular value of the matrix of spectral
    norms of the adjoint rows: a fixed scale against which the smallest
    singular value of M(t) is judged. (Judging against the instantaneous
    largest singular value would never flag the m = n = 1 singularity.)
    """

    rows: tuple
    adjoint_rows: np.ndarray  # (K, m, d, d)
    drift_rows: np.ndarray  # (K, d, d)
    sigma_ref: float

    @property
    def n_rows(self) -> int:
        return self.adjoint_rows.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.adjoint_rows.shape[1]


def make_readout_plan(model: ProbeModel, verdict: InvertibilityVerdict) -> ReadoutPlan:
    if not verdict.invertible:
        raise InversionError("cannot build a readout plan for a non-invertible verdict")
    rows = verdict.rows
    adj = np.stack(
        [[apply_adjoint(ctrl, row.operator) for ctrl in model.controls] for row in rows]
    )
    drift = np.stack([apply_adjoint_sum(model.drift, row.operator) for row in rows])
    norm_matrix = np.linalg.norm(adj, ord=2, axis=(2, 3))
    sigma_ref = float(np.linalg.svd(norm_matrix, compute_uv=False)[0])
    return ReadoutPlan(rows, adj, drift, sigma_ref)


def _solve_readout(M: np.ndarray, b: np.ndarray, rcond: float):
    u, *_ , s = np.linalg.lstsq(M, b, rcond=rcond)
    return u, s


def readout_inputs(state, plan: ReadoutPlan, data_rhs) -> tuple:
    """Least-squares input readout at one state.

    ``data_rhs`` holds, per transformed row, the measured-derivative
    combination f_k[y]; the drift expectation is subtracted here. Returns
    (inputs, singular values). Raises when every singular value is below the
    absolute floor (nothing recoverable at this step).
    """
    rho = state.matrix if isinstance(state, DensityState) else np.asarray(state, dtype=complex)
    M = np.einsum("kjab,ba->kj", plan.adjoint_rows, rho).real
    b = np.asarray(data_rhs, dtype=float) - np.einsum("kab,ba->k", plan.drift_rows, rho).real
    u, s = _solve_readout(M, b, rcond=None)
    if s[0] < ABS_SINGULAR_FLOOR:
        raise UnrecoverableStepError("all readout singular values below the absolute floor")
    return u, s


@dataclass(frozen=True)
class InversionReport:
    reconstructed: SignalTrace
    condition_trace: np.ndarray  # (N, 2): smallest, largest singular value of M(t)
    singular_windows: tuple  # ((t_start, t_end), ...) maximal flagged intervals
    state_path: np.ndarray  # (N, d, d) inverse-system state surrogate
    sigma_ref: float
    threshold: float
    hold_policy: str

    def flags(self) -> np.ndarray:
        t = self.reconstructed.times
        mask = np.zeros(t.shape, dtype=bool)
        for a, b in self.singular_windows:
            mask |= (t >= a - 1e-12) & (t <= b + 1e-12)
        return mask

    def window_measure(self) -> float:
        return float(sum(b - a for a, b in self.singular_windows) + self.reconstructed.dt * len(self.singular_windows))


def _windows_from_flags(flags: np.ndarray, times: np.ndarray):
    windows = []
    idx = np.where(flags)[0]
    if idx.size == 0:
        return tuple(windows)
    start = prev = idx[0]
    for i in idx[1:]:
        if i == prev + 1:
            prev = i
            continue
        windows.append((float(times[start]), float(times[prev])))
        start = prev = i
    windows.append((float(times[start]), float(times[prev])))
    return tuple(windows)


def invert(
    model: ProbeModel,
    verdict: InvertibilityVerdict,
    record: MeasurementRecord,
    cfg: InversionConfig = InversionConfig(),
) -> InversionReport:
    """Reconstruct the input signals from a measurement record.

    The state surrogate starts from the model's (exactly known) initial
    state and is RK4-propagated on the record grid; measured-derivative
    combinations are interpolated linearly to the half-step stage times.
    Inside singular windows the hold policy replaces the readout. The
    surrogate's trace must stay within 1e-6 of one; positivity is allowed to
    dip transiently inside singular windows, so the state path is returned
    as raw matrices.
    """
    if record.n_channels != model.n_outputs:
        raise InversionError(
            f"record has {record.n_channels} channels but the model defines {model.n_outputs} observables"
        )
    if not verdict.invertible:
        raise InversionError("model is not invertible; nothing to reconstruct")
    plan = make_readout_plan(model, verdict)
    m = plan.n_inputs
    n_samples = record.values.shape[0]
    dt = record.dt

    max_order = max(row.order for row in plan.rows)
    derivs = estimate_derivatives(record, max_order, cfg)

    rhs_data = np.zeros((plan.n_rows, n_samples))
    for k, row in enumerate(plan.rows):
        for q, c in row.coeffs.items():
            rhs_data[k] += derivs[q - 1] @ c
    rhs_mid = 0.5 * (rhs_data[:, :-1] + rhs_data[:, 1:])

    threshold = cfg.singular_threshold * plan.sigma_ref
    hold = np.zeros(m)
    u_hat = np.empty((n_samples, m))
    cond = np.empty((n_samples, 2))
    flags = np.zeros(n_samples, dtype=bool)
    path = np.empty((n_samples,) + model.initial_state.matrix.shape, dtype=complex)

    rhs_fn = _prepare_model_rhs(model)
    rho = model.initial_state.matrix.copy()

    def readout(rho_now, data_vec, fallback):
        M = np.einsum("kjab,ba->kj", plan.adjoint_rows, rho_now).real
        b = data_vec - np.einsum("kab,ba->k", plan.drift_rows, rho_now).real
        s = np.linalg.svd(M, compute_uv=False)
        singular = s[-1] < threshold or s[0] < ABS_SINGULAR_FLOOR
        if singular:
            return fallback, s, True
        u, _ = _solve_readout(M, b, rcond=cfg.singular_threshold)
        return u, s, False

    for i in range(n_samples):
        path[i] = rho
        u_i, s_i, singular = readout(rho, rhs_data[:, i], hold)
        u_hat[i] = u_i
        cond[i] = s_i[-1], s_i[0]
        flags[i] = singular
        if not singular and cfg.hold_policy == "hold_last":
            hold = u_i
        if i == n_samples - 1:
            break
        tr = np.trace(rho).real
        if abs(tr - 1.0) > 1e-6:
            raise InversionError(
                f"inverse-state trace drifted to {tr:.8f} at t={record.times[i]:.4g} ns"
            )

        def stage_u(rho_stage, data_vec):
            if singular:
                return hold
            u, _, _ = readout(rho_stage, data_vec, hold)
            return u

        k1 = rhs_fn(rho, u_i if not singular else hold)
        k2 = rhs_fn(rho + 0.5 * dt * k1, stage_u(rho + 0.5 * dt * k1, rhs_mid[:, i]))
        k3 = rhs_fn(rho + 0.5 * dt * k2, stage_u(rho + 0.5 * dt * k2, rhs_mid[:, i]))
        k4 = rhs_fn(rho + dt * k3, stage_u(rho + dt * k3, rhs_data[:, i + 1]))
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)

    windows = _windows_from_flags(flags, record.times)
    return InversionReport(
        reconstructed=SignalTrace(record.t0, dt, u_hat),
        condition_trace=cond,
        singular_windows=windows,
        state_path=path,
        sigma_ref=plan.sigma_ref,
        threshold=threshold,
        hold_policy=cfg.hold_policy,
    )


# ---------------------------------------------------------------------------
# Ramsey-style direct identification (the ambiguous baseline)


@dataclass(frozen=True)
class RamseyBranches:
    branches: tuple  # two SignalTrace candidates, (+, -)
    branch_point_times: np.ndarray  # samples where the square-root argument vanishes


def ramsey_direct(record: MeasurementRecord, cfg: InversionConfig = InversionConfig()) -> RamseyBranches:
    """Both sign branches of the direct phase-readout formula.

    Valid for the pure-phase probe (H = u(t) sz measured through <sx> from
    an equal superposition), where y = cos(Phi) with Phi = 2 * integral(u).
    The accumulated phase is unwrapped by following the candidate closest to
    the previous sample; the two branches are the +/- phase solutions, which
    the record alone cannot distinguish. Samples where 1 - y^2 < 1e-12 are
    reported as branch points.
    """
    if record.n_channels != 1:
        raise ValueError("ramsey_direct expects a scalar record")
    y = np.clip(record.values[:, 0], -1.0, 1.0)
    arg = 1.0 - y**2
    branch_points = record.times[arg < 1e-12]

    # Unwrap the accumulated phase by linear prediction: at every sample the
    # candidates are +/- arccos(y) + 2*pi*k, and the one closest to the
    # extrapolated phase is taken. Position-only matching would reflect at
    # |y| = 1 touches; velocity continuation transits them, which defines
    # the branch convention (maximally smooth continuation).
    phi_raw = np.arccos(y)
    phi = np.empty_like(phi_raw)
    phi[0] = phi_raw[0]
    two_pi = 2.0 * np.pi
    for i in range(1, phi.size):
        predicted = phi[i - 1] if i == 1 else 2.0 * phi[i - 1] - phi[i - 2]
        best = None
        for sign in (1.0, -1.0):
            k = np.round((predicted - sign * phi_raw[i]) / two_pi)
            cand = two_pi * k + sign * phi_raw[i]
            if best is None or abs(cand - predicted) < abs(best - predicted):
                best = cand
        phi[i] = best

    u_plus = _three_point(phi, record.dt) / 2.0
    plus = SignalTrace(record.t0, record.dt, u_plus)
    minus = SignalTrace(record.t0, record.dt, -u_plus)
    return RamseyBranches((plus, minus), branch_points)


# ---------------------------------------------------------------------------
# report serialization


def write_report_csv(report: InversionReport, path):
    m = report.reconstructed.n_channels
    flags = report.flags()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"u{k + 1}_hat" for k in range(m)] + ["smin", "smax", "flag"])
        for i, t in enumerate(report.reconstructed.times):
            row = [f"{t:.12g}"]
            row += [f"{v:.12g}" for v in report.reconstructed.values[i]]
            row += [f"{report.condition_trace[i, 0]:.12g}", f"{report.condition_trace[i, 1]:.12g}"]
            row.append(str(int(flags[i])))
            writer.writerow(row)


def write_windows_json(report: InversionReport, path):
    payload = {
        "singular_windows": [[a, b] for a, b in report.singular_windows],
        "threshold": report.threshold,
        "sigma_ref": report.sigma_ref,
        "hold_policy": report.hold_policy,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
