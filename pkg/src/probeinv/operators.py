"""Dense complex operator algebra for small quantum probes.

Conventions used throughout the package:

* Hamiltonian operators carry angular-frequency units (rad/ns); time is ns.
* Lindblad collapse operators absorb their rate, units sqrt(1/ns), and the
  dissipator is the unnormalized form ``2 L rho L+ - L+L rho - rho L+L``.
* Operators are plain complex ``numpy`` arrays; the helpers here validate
  shape and Hermiticity where the physics requires it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

HERMITICITY_TOL = 1e-9

HAMILTONIAN = "hamiltonian"
LINDBLAD = "lindblad"

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}
_PAULI["Plus"] = 0.5 * (_PAULI["X"] + 1.0j * _PAULI["Y"])
_PAULI["Minus"] = 0.5 * (_PAULI["X"] - 1.0j * _PAULI["Y"])


def pauli(which: str) -> np.ndarray:
    """Return a fresh 2x2 matrix by name: I, X, Y, Z, Plus, Minus."""
    try:
        return _PAULI[which].copy()
    except KeyError:
        raise ValueError(f"unknown Pauli label {which!r}") from None


def as_operator(entries) -> np.ndarray:
    """Coerce to a square complex matrix, validating the shape."""
    a = np.asarray(entries, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"operator must be a square matrix, got shape {a.shape}")
    return a


def tensor(a, b) -> np.ndarray:
    """Kronecker product of two operators; qubit 1 is the left factor."""
    return np.kron(as_operator(a), as_operator(b))


def on_qubit(op, index: int, n_qubits: int) -> np.ndarray:
    """Embed a single-qubit operator at position ``index`` (0-based) of an n-qubit register."""
    op = as_operator(op)
    out = np.array([[1.0 + 0.0j]])
    for k in range(n_qubits):
        out = np.kron(out, op if k == index else _PAULI["I"])
    return out


def exchange_coupling(dim: int = 4) -> np.ndarray:
    """Two-qubit excitation-exchange operator s1+ s2- + s1- s2+."""
    if dim != 4:
        raise ValueError("exchange coupling is defined for two qubits (dim 4)")
    return tensor(_PAULI["Plus"], _PAULI["Minus"]) + tensor(_PAULI["Minus"], _PAULI["Plus"])


def is_hermitian(a, tol: float = HERMITICITY_TOL) -> bool:
    a = np.asarray(a)
    return bool(np.max(np.abs(a - a.conj().T)) <= tol)


def operator_norm(a) -> float:
    """Spectral norm."""
    return float(np.linalg.norm(np.asarray(a), 2))


@dataclass(frozen=True)
class GeneratorTerm:
    """One superoperator term acting on density matrices.

    ``kind == "hamiltonian"``: ``operator`` is Hermitian (rad/ns) and the
    forward action is the commutator ``-i [H, rho]``.

    ``kind == "lindblad"``: ``operator`` is a collapse operator with the rate
    absorbed (sqrt(1/ns)); the forward action is the dissipator
    ``2 L rho L+ - L+L rho - rho L+L``.
    """

    kind: str
    operator: np.ndarray

    def __post_init__(self):
        op = as_operator(self.operator)
        op.setflags(write=False)
        object.__setattr__(self, "operator", op)
        if self.kind not in (HAMILTONIAN, LINDBLAD):
            raise ValueError(f"kind must be {HAMILTONIAN!r} or {LINDBLAD!r}, got {self.kind!r}")
        if self.kind == HAMILTONIAN and not is_hermitian(op):
            raise ValueError("Hamiltonian generator operator must be Hermitian")

    @property
    def dim(self) -> int:
        return self.operator.shape[0]


def hamiltonian_term(h) -> GeneratorTerm:
    return GeneratorTerm(HAMILTONIAN, as_operator(h))


def lindblad_term(collapse) -> GeneratorTerm:
    return GeneratorTerm(LINDBLAD, as_operator(collapse))


def _check_dim(term: GeneratorTerm, mat: np.ndarray):
    if mat.shape != term.operator.shape:
        raise ValueError(
            f"dimension mismatch: generator dim {term.dim}, matrix shape {mat.shape}"
        )


def apply_forward(term: GeneratorTerm, rho) -> np.ndarray:
    """Apply the generator to a state-like matrix.

    Hamiltonian kind returns ``-i [H, rho]``; Lindblad kind returns
    ``2 L rho L+ - L+L rho - rho L+L``. Both are traceless maps.
    """
    rho = np.asarray(rho, dtype=complex)
    _check_dim(term, rho)
    op = term.operator
    if term.kind == HAMILTONIAN:
        return -1.0j * (op @ rho - rho @ op)
    ld = op.conj().T
    ldop = ld @ op
    return 2.0 * (op @ rho @ ld) - ldop @ rho - rho @ ldop


def apply_adjoint(term: GeneratorTerm, obs) -> np.ndarray:
    """Apply the adjoint generator to an observable.

    Defined by ``Tr[(L rho) O] == Tr[rho (L* O)]`` for all ``rho``:
    Hamiltonian kind gives ``i [H, O]``, Lindblad kind gives
    ``2 L+ O L - L+L O - O L+L``. Preserves Hermiticity of ``O``.
    """
    obs = np.asarray(obs, dtype=complex)
    _check_dim(term, obs)
    op = term.operator
    if term.kind == HAMILTONIAN:
        return 1.0j * (op @ obs - obs @ op)
    ld = op.conj().T
    ldop = ld @ op
    return 2.0 * (ld @ obs @ op) - ldop @ obs - obs @ ldop


def apply_forward_sum(terms: Sequence[GeneratorTerm], rho) -> np.ndarray:
    """Sum of forward actions; the zero map for an empty term list."""
    rho = np.asarray(rho, dtype=complex)
    out = np.zeros_like(rho)
    for term in terms:
        out += apply_forward(term, rho)
    return out


def apply_adjoint_sum(terms: Sequence[GeneratorTerm], obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=complex)
    out = np.zeros_like(obs)
    for term in terms:
        out += apply_adjoint(term, obs)
    return out


@dataclass(frozen=True)
class DensityState:
    """A validated density matrix: Hermitian, unit trace, positive semidefinite."""

    matrix: np.ndarray

    def __post_init__(self):
        m = as_operator(self.matrix)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if not is_hermitian(m, HERMITICITY_TOL):
            raise ValueError("density matrix must be Hermitian")
        tr = np.trace(m)
        if abs(tr - 1.0) > 1e-9:
            raise ValueError(f"density matrix trace must be 1, got {tr}")
        if np.linalg.eigvalsh(m).min() < -1e-9:
            raise ValueError("density matrix must be positive semidefinite")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def pure_state(amplitudes) -> DensityState:
    """Density matrix |psi><psi| from a (not necessarily normalized) state vector."""
    psi = np.asarray(amplitudes, dtype=complex).ravel()
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise ValueError("state vector must be nonzero")
    psi = psi / norm
    return DensityState(np.outer(psi, psi.conj()))


def expectation(state, obs) -> float:
    """``Tr[rho O]`` as a real number.

    Accepts a DensityState or a bare matrix. An imaginary residue above
    1e-9 signals non-Hermitian inputs and raises.
    """
    rho = state.matrix if isinstance(state, DensityState) else np.asarray(state, dtype=complex)
    val = np.trace(rho @ np.asarray(obs, dtype=complex))
    if abs(val.imag) > 1e-9:
        raise ValueError(f"expectation value has imaginary residue {val.imag:.3e}")
    return float(val.real)
