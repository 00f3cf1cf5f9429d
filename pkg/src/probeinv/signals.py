"""Time-varying input signals, sampled time series, and probe model assembly."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .operators import (
    HAMILTONIAN,
    DensityState,
    GeneratorTerm,
    as_operator,
    exchange_coupling,
    hamiltonian_term,
    is_hermitian,
    on_qubit,
    pauli,
)


@dataclass(frozen=True)
class SignalTrace:
    """Uniformly sampled real vector signal: values[i] is the sample at t0 + i*dt (ns)."""

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"trace values must be (N,) or (N, m), got shape {np.shape(self.values)}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[0])

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MeasurementRecord:
    """Sampled expectation values y(t); entries are dimensionless.

    Values outside [-1, 1] beyond ``allowance`` trigger a warning (noise can
    push legitimate records slightly out of range), never an error.
    """

    t0: float
    dt: float
    values: np.ndarray
    allowance: float = 0.05

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"record values must be (N,) or (N, n), got shape {np.shape(self.values)}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        overshoot = np.max(np.abs(v)) - 1.0
        if overshoot > self.allowance:
            warnings.warn(
                f"measurement record exceeds [-1, 1] by {overshoot:.3g}; "
                "check observables or noise levels",
                stacklevel=2,
            )

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[0])

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# signal specs


@dataclass(frozen=True)
class Constant:
    value: float  # rad/ns


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float  # rad/ns
    frequency: float  # rad/ns
    phase: float = 0.0  # rad


@dataclass(frozen=True)
class DistortedStep:
    """Step through a single-pole line: A*(1 - exp(-(t - ts)/tau)) for t >= ts, else 0."""

    amplitude: float  # rad/ns
    step_time: float = 0.0  # ns
    rise_tau: float = 20.0  # ns

    def __post_init__(self):
        if not self.rise_tau > 0:
            raise ValueError("rise_tau must be positive")


@dataclass(frozen=True)
class Samples:
    """A sampled signal; evaluation interpolates linearly and holds the end values."""

    trace: SignalTrace
    channel: int = 0


@dataclass(frozen=True)
class PiecewiseConstant:
    """Bin values on a uniform grid over [t0, t0 + n_bins*bin_width); holds end values."""

    t0: float
    bin_width: float
    values: np.ndarray  # (n_bins,)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1 or not self.bin_width > 0:
            raise ValueError("need at least one bin and positive bin_width")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Multisine:
    """Sum of sinusoids; used for synthesized band-limited noise."""

    amplitudes: np.ndarray
    frequencies: np.ndarray  # rad/ns
    phases: np.ndarray  # rad

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=float).ravel()
        f = np.asarray(self.frequencies, dtype=float).ravel()
        p = np.asarray(self.phases, dtype=float).ravel()
        if not (a.size == f.size == p.size):
            raise ValueError("amplitudes, frequencies, phases must have equal length")
        for arr in (a, f, p):
            arr.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "phases", p)


@dataclass(frozen=True)
class SumSignal:
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))


SignalSpec = Union[Constant, Sinusoid, DistortedStep, Samples, PiecewiseConstant, Multisine, SumSignal]


def eval_signal(spec: SignalSpec, t):
    """Evaluate a signal spec at time(s) t (ns); accepts scalars or arrays."""
    t = np.asarray(t, dtype=float)
    if isinstance(spec, Constant):
        out = np.full(t.shape, spec.value)
    elif isinstance(spec, Sinusoid):
        out = spec.amplitude * np.sin(spec.frequency * t + spec.phase)
    elif isinstance(spec, DistortedStep):
        dt = np.maximum(t - spec.step_time, 0.0)
        out = np.where(t >= spec.step_time, spec.amplitude * (1.0 - np.exp(-dt / spec.rise_tau)), 0.0)
    elif isinstance(spec, Samples):
        tr = spec.trace
        out = np.interp(t, tr.times, tr.values[:, spec.channel])
    elif isinstance(spec, PiecewiseConstant):
        idx = np.clip(np.floor((t - spec.t0) / spec.bin_width).astype(int), 0, spec.values.size - 1)
        out = spec.values[idx]
    elif isinstance(spec, Multisine):
        out = np.sum(
            spec.amplitudes * np.sin(np.multiply.outer(t, spec.frequencies) + spec.phases),
            axis=-1,
        )
    elif isinstance(spec, SumSignal):
        out = sum(eval_signal(p, t) for p in spec.parts)
    else:
        raise TypeError(f"unknown signal spec {type(spec).__name__}")
    return float(out) if np.ndim(out) == 0 else np.asarray(out, dtype=float)


# ---------------------------------------------------------------------------
# probe model


@dataclass(frozen=True)
class ProbeModel:
    """The identification target: drift generators, control generators, observables, initial state.

    ``controls`` carry the operators whose (unknown) time-dependent
    coefficients are the signals to identify; known constant couplings
    belong in ``drift``.
    """

    drift: tuple
    controls: tuple
    observables: tuple
    initial_state: DensityState

    def __post_init__(self):
        drift = tuple(self.drift)
        controls = tuple(self.controls)
        observables = tuple(as_operator(o) for o in self.observables)
        for o in observables:
            o.setflags(write=False)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "observables", observables)
        if len(controls) < 1:
            raise ValueError("need at least one control generator")
        if len(observables) < 1:
            raise ValueError("need at least one observable")
        dim = self.initial_state.dim
        for term in drift + controls:
            if term.dim != dim:
                raise ValueError("all generator dimensions must match the initial state")
        for o in observables:
            if o.shape[0] != dim:
                raise ValueError("all observable dimensions must match the initial state")
            if not is_hermitian(o):
                raise ValueError("observables must be Hermitian")

    @property
    def dim(self) -> int:
        return self.initial_state.dim

    @property
    def n_inputs(self) -> int:
        return len(self.controls)

    @property
    def n_outputs(self) -> int:
        return len(self.observables)

    def with_observables(self, observables) -> "ProbeModel":
        return ProbeModel(self.drift, self.controls, tuple(observables), self.initial_state)


def build_two_qubit_model(
    w1,
    w2,
    g,
    observables: Sequence,
    initial_state: DensityState,
    dephasing: Sequence[GeneratorTerm] = (),
) -> ProbeModel:
    """Assemble the coupled-transmon probe H = w1/2 s1z + w2/2 s2z + g*(s1+s2- + s1-s2+).

    Each of ``w1``, ``w2``, ``g`` is either a known constant coefficient in
    rad/ns (folded into the drift) or ``None``, marking that coefficient as
    an unknown signal to identify; the unknowns become control channels in
    the order (w1, w2, g).
    """
    half_z1 = 0.5 * on_qubit(pauli("Z"), 0, 2)
    half_z2 = 0.5 * on_qubit(pauli("Z"), 1, 2)
    coupling = exchange_coupling()
    slots = [(w1, half_z1), (w2, half_z2), (g, coupling)]
    if all(value is not None for value, _ in slots):
        raise ValueError("all three coefficients are known constants; nothing to identify")

    drift_h = np.zeros((4, 4), dtype=complex)
    controls = []
    for value, op in slots:
        if value is None:
            controls.append(hamiltonian_term(op))
        else:
            drift_h += float(value) * op
    drift = []
    if np.any(drift_h):
        drift.append(hamiltonian_term(drift_h))
    drift.extend(dephasing)
    return ProbeModel(tuple(drift), tuple(controls), tuple(observables), initial_state)
