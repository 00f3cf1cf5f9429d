"""Structural invertibility analysis at the operator level.

The measurement outputs respond to the inputs through adjoint-generator
operators: differentiating y_k once gives the row of operators
(L1* Ok, ..., Lm* Ok). Whether the m input signals can be read back from
the outputs is a rank question about these operator rows, independent of
the state trajectory. When the first-derivative rows are rank deficient,
dependent rows are eliminated against the independent ones and
differentiated again, producing new (virtual) observables at a higher
derivative order; the procedure halts once m independent rows exist.

Operator rows are compared as real vectors by stacking the real and
imaginary parts of all m entries, so "rank" always means rank of the real
span of those vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .operators import GeneratorTerm, apply_adjoint, apply_adjoint_sum, operator_norm
from .signals import ProbeModel

RANK_RTOL = 1e-9
SISO_NORM_TOL = 1e-10
ELIMINATION_RTOL = 1e-9


@dataclass(frozen=True)
class TransformedRow:
    """One row of the transformed observable system.

    ``operator`` is the (possibly virtual) observable P whose differentiated
    expectation gives the equation  <L0* P> + sum_j <Lj* P> u_j = rhs, where
    rhs is a linear combination of derivatives of the measured outputs:
    rhs = sum_q sum_l coeffs[q][l] * d^q y_l / dt^q. ``order`` is the highest
    derivative order appearing (the row's derivation order).
    """

    operator: np.ndarray
    coeffs: dict  # {derivative order: (n,) float array over original observables}

    def __post_init__(self):
        op = np.asarray(self.operator, dtype=complex)
        op.setflags(write=False)
        object.__setattr__(self, "operator", op)
        frozen = {}
        for q, c in self.coeffs.items():
            c = np.asarray(c, dtype=float)
            c.setflags(write=False)
            frozen[int(q)] = c
        object.__setattr__(self, "coeffs", frozen)

    @property
    def order(self) -> int:
        return max(self.coeffs)

    def source_indices(self):
        mask = np.zeros(next(iter(self.coeffs.values())).shape, dtype=bool)
        for c in self.coeffs.values():
            mask |= np.abs(c) > 0
        return [int(i) for i in np.where(mask)[0]]


@dataclass(frozen=True)
class InvertibilityVerdict:
    invertible: bool
    relative_degree: int | None  # None means infinite
    rows: tuple = ()
    notes: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))


class ObservableArray:
    """Rows of adjoint-control operators (L1* Ok, ..., Lm* Ok)."""

    def __init__(self, rows: Sequence[Sequence[np.ndarray]]):
        rows = [tuple(np.asarray(op, dtype=complex) for op in row) for row in rows]
        if not rows:
            raise ValueError("need at least one row")
        m = len(rows[0])
        dim = rows[0][0].shape[0]
        for row in rows:
            if len(row) != m or any(op.shape != (dim, dim) for op in row):
                raise ValueError("all rows must hold m operators of one dimension")
        self.rows = rows
        self.n_inputs = m
        self.dim = dim

    def vectorized(self) -> np.ndarray:
        """Real matrix with one row per operator row: stacked Re/Im of all entries."""
        out = []
        for row in self.rows:
            flat = np.concatenate([op.ravel() for op in row])
            out.append(np.concatenate([flat.real, flat.imag]))
        return np.asarray(out)


def adjoint_row(controls: Sequence[GeneratorTerm], obs) -> list:
    return [apply_adjoint(term, obs) for term in controls]


def _vectorize_row(row) -> np.ndarray:
    flat = np.concatenate([np.asarray(op, dtype=complex).ravel() for op in row])
    return np.concatenate([flat.real, flat.imag])


def operator_rank(rows, rtol: float = RANK_RTOL) -> int:
    """Numerical rank of the real span of operator rows.

    Nonzero rows are normalized first so that the rank is invariant under
    rescaling any single observable; rows below an absolute floor count as
    zero.
    """
    if isinstance(rows, ObservableArray):
        mat = rows.vectorized()
    else:
        mat = np.asarray([_vectorize_row(r) for r in rows])
    norms = np.linalg.norm(mat, axis=1)
    floor = 1e-12 * max(1.0, norms.max(initial=0.0))
    keep = norms > floor
    if not np.any(keep):
        return 0
    unit = mat[keep] / norms[keep, None]
    s = np.linalg.svd(unit, compute_uv=False)
    return int(np.sum(s > rtol * s[0]))


def relative_degree_siso(model: ProbeModel, norm_tol: float = SISO_NORM_TOL) -> InvertibilityVerdict:
    """Relative degree of a single-input single-output model.

    Computes K_k = L1* (L0*)^k O for k = 0, 1, ...; the relative degree is
    1 + the first k with a nonvanishing K_k (operator norm above
    ``norm_tol``). The search is capped at dim**4 iterations; past the cap
    the system is reported non-invertible (infinite relative degree).
    """
    if model.n_inputs != 1 or model.n_outputs != 1:
        raise ValueError("relative_degree_siso requires m = 1 and n = 1")
    control = model.controls[0]
    chained = np.asarray(model.observables[0], dtype=complex)
    cap = model.dim**4
    for k in range(cap):
        kernel = apply_adjoint(control, chained)
        if operator_norm(kernel) > norm_tol:
            rows = (TransformedRow(chained, {k + 1: np.ones(1)}),)
            return InvertibilityVerdict(True, k + 1, rows, notes=f"K_{k} nonvanishing")
        chained = apply_adjoint_sum(model.drift, chained)
    return InvertibilityVerdict(
        False, None, (), notes=f"L1*(L0*)^k O vanished for all k < {cap}"
    )


class _RowBasis:
    """Incremental orthonormal basis over vectorized rows with pivoted admission."""

    def __init__(self, rtol: float):
        self.rtol = rtol
        self.q: list[np.ndarray] = []

    def residual(self, v: np.ndarray) -> np.ndarray:
        r = v.copy()
        for b in self.q:
            r -= (b @ r) * b
        return r

    def try_add(self, v: np.ndarray) -> bool:
        norm = np.linalg.norm(v)
        if norm <= 1e-12:
            return False
        r = self.residual(v)
        rn = np.linalg.norm(r)
        if rn > self.rtol * norm:
            r = self.residual(r)  # second pass keeps the basis orthonormal
            self.q.append(r / np.linalg.norm(r))
            return True
        return False


def transform_observables(model: ProbeModel, rank_rtol: float = RANK_RTOL) -> InvertibilityVerdict:
    """Find a transformed observable system whose rows determine all inputs.

    Iteratively splits the current observable rows into a maximal
    independent sub-list and a dependent remainder (greedy pivoting by
    descending row norm, ties by original order), solves the elimination
    coefficients V for the dependent rows, and differentiates the eliminated
    equations into new virtual observables one derivative order higher.
    Halts as soon as the accumulated independent rows have rank >= m
    (invertible; the relative degree is the highest derivation order used)
    or when nothing remains to differentiate or the order exceeds dim**4.
    """
    m = model.n_inputs
    if model.n_outputs < m:
        raise ValueError(
            f"under-instrumented model: {model.n_outputs} outputs for {m} inputs; "
            "the number of measurements must not be less than the number of inputs"
        )
    n = model.n_outputs
    cap = model.dim**4

    def row_vec(op):
        return _vectorize_row(adjoint_row(model.controls, op))

    basis = _RowBasis(rank_rtol)
    independent: list[TransformedRow] = []
    indep_vecs: list[np.ndarray] = []

    current = [
        TransformedRow(obs, {1: np.eye(n)[k]}) for k, obs in enumerate(model.observables)
    ]
    order = 1
    while True:
        vecs = [row_vec(row.operator) for row in current]
        # greedy pivot: big rows first, original order on ties
        pivot_order = sorted(range(len(current)), key=lambda i: (-np.linalg.norm(vecs[i]), i))
        dependent: list[tuple[TransformedRow, np.ndarray]] = []
        for i in pivot_order:
            if basis.try_add(vecs[i]):
                independent.append(current[i])
                indep_vecs.append(vecs[i])
            else:
                dependent.append((current[i], vecs[i]))
        if len(basis.q) >= m:
            degree = max(row.order for row in independent)
            return InvertibilityVerdict(
                True,
                degree,
                tuple(independent),
                notes=f"rank {len(basis.q)} reached with {len(independent)} rows",
            )
        if not dependent:
            return InvertibilityVerdict(
                False,
                None,
                tuple(independent),
                notes=f"rank stalled at {len(basis.q)} < {m} with no rows left to differentiate",
            )
        if order >= cap:
            return InvertibilityVerdict(
                False,
                None,
                tuple(independent),
                notes=f"derivation order cap {cap} exceeded at rank {len(basis.q)}",
            )
        # eliminate each dependent row against the accumulated independent rows
        next_rows = []
        drift_adj = {id(r): apply_adjoint_sum(model.drift, r.operator) for r in independent}
        basis_mat = np.asarray(indep_vecs).T if indep_vecs else np.zeros((0, 0))
        for row, vec in dependent:
            if indep_vecs:
                coeffs, *_ = np.linalg.lstsq(basis_mat, vec, rcond=None)
                resid = np.linalg.norm(basis_mat @ coeffs - vec)
                if resid > ELIMINATION_RTOL * max(1.0, np.linalg.norm(vec)):
                    raise RuntimeError(
                        "elimination residual inconsistent with rank decision; "
                        f"residual {resid:.3e}"
                    )
            else:
                coeffs = np.zeros(0)
            new_op = apply_adjoint_sum(model.drift, row.operator)
            combined = {q: c.copy() for q, c in row.coeffs.items()}
            for v_j, ind_row in zip(coeffs, independent):
                new_op = new_op - v_j * drift_adj[id(ind_row)]
                for q, c in ind_row.coeffs.items():
                    combined[q] = combined.get(q, np.zeros(n)) - v_j * c
            shifted = {q + 1: c for q, c in combined.items()}
            next_rows.append(TransformedRow(new_op, shifted))
        # a generation of pure zero operators can never add rank
        if all(operator_norm(r.operator) <= 1e-12 for r in next_rows):
            return InvertibilityVerdict(
                False,
                None,
                tuple(independent),
                notes=f"differentiation produced only vanishing observables at order {order + 1}",
            )
        current = next_rows
        order += 1


def verdict_to_dict(verdict: InvertibilityVerdict) -> dict:
    provenance = []
    for row in verdict.rows:
        top = row.order
        provenance.append(
            {
                "source_indices": row.source_indices(),
                "order": top,
                "V_row": [float(v) for v in row.coeffs[top]],
                "coefficients": {str(q): [float(v) for v in c] for q, c in sorted(row.coeffs.items())},
            }
        )
    return {
        "invertible": verdict.invertible,
        "relative_degree": "infinite" if verdict.relative_degree is None else verdict.relative_degree,
        "observable_provenance": provenance,
        "notes": verdict.notes,
    }


def write_verdict_json(verdict: InvertibilityVerdict, path):
    with open(path, "w") as fh:
        json.dump(verdict_to_dict(verdict), fh, indent=2, sort_keys=True)
        fh.write("\n")
