"""Dense rank decisions, subspace arithmetic, and smooth frozen-pivot
factorizations (row compression, kernel bases, right inverses)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import maps
from .maps import (
    AnnihilatorMap,
    ColVectorMap,
    EvalContext,
    KernelBasisMap,
    MatMulMap,
    RightInverseMap,
    RowsMap,
    StackRowsMap,
    evaluate,
)
from .taylor import ConditioningError, singular_values


def default_tol_rank(shape):
    return max(shape) * 1e-10


@dataclass
class RankDecision:
    rank: int
    singular_values: np.ndarray
    threshold: float


def numerical_rank(A, tol_rank=None):
    """Rank of A with threshold tol_rank * sigma_max (relative cut)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if A.size == 0:
        return RankDecision(0, np.zeros(0), 0.0)
    sv = singular_values(A)
    if tol_rank is None:
        tol_rank = default_tol_rank(A.shape)
    threshold = tol_rank * (sv[0] if sv[0] > 0 else 1.0)
    rank = int(np.sum(sv > threshold))
    return RankDecision(rank, sv, threshold)


@dataclass
class Subspace:
    """Linear subspace of R^n held as an orthonormal basis matrix (n x d)."""

    basis: np.ndarray

    @staticmethod
    def from_spanning(vectors, tol_rank=None):
        V = np.atleast_2d(np.asarray(vectors, dtype=float))
        if V.shape[1] == 0 or V.shape[0] == 0:
            return Subspace(np.zeros((V.shape[0], 0)))
        U, s, _ = np.linalg.svd(V, full_matrices=False)
        if tol_rank is None:
            tol_rank = default_tol_rank(V.shape)
        cut = tol_rank * (s[0] if s.size and s[0] > 0 else 1.0)
        d = int(np.sum(s > cut))
        return Subspace(U[:, :d])

    @staticmethod
    def full(n):
        return Subspace(np.eye(n))

    @staticmethod
    def zero(n):
        return Subspace(np.zeros((n, 0)))

    @property
    def n(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]

    def complement_rows(self):
        """Rows spanning the orthogonal complement."""
        n, d = self.basis.shape
        if d == 0:
            return np.eye(n)
        U, _, _ = np.linalg.svd(self.basis, full_matrices=True)
        return U[:, d:].T

    def contains_point(self, v, tol=1e-10):
        v = np.asarray(v, dtype=float)
        resid = v - self.basis @ (self.basis.T @ v)
        return np.linalg.norm(resid) <= tol * max(1.0, np.linalg.norm(v))


def subspace_sum(S, T):
    return Subspace.from_spanning(np.hstack([S.basis, T.basis]))


def subspace_intersect(S, T):
    """Nullspace of the stacked orthogonal complements."""
    rows = np.vstack([S.complement_rows(), T.complement_rows()])
    if rows.shape[0] == 0:
        return Subspace.full(S.n)
    _, s, Vt = np.linalg.svd(rows, full_matrices=True)
    cut = default_tol_rank(rows.shape) * (s[0] if s.size and s[0] > 0 else 1.0)
    rank = int(np.sum(s > cut))
    return Subspace(Vt[rank:].T)


def image(A, S=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    cols = A if S is None else A @ S.basis
    return Subspace.from_spanning(cols)


def preimage(A, S):
    """{v : A v in S} via the nullspace of (complement of S)^T A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    comp = S.complement_rows()
    rows = comp @ A
    if rows.shape[0] == 0:
        return Subspace.full(A.shape[1])
    _, s, Vt = np.linalg.svd(rows, full_matrices=True)
    cut = default_tol_rank(rows.shape) * (s[0] if s.size and s[0] > 0 else 1.0)
    rank = int(np.sum(s > cut))
    return Subspace(Vt[rank:].T)


def principal_angle_gap(S, T):
    """max principal-angle sine between equal-dimensional subspaces."""
    if S.dim != T.dim:
        return 1.0
    if S.dim == 0:
        return 0.0
    sv = np.linalg.svd(S.basis.T @ T.basis, compute_uv=False)
    return float(np.sqrt(max(0.0, 1.0 - np.min(sv) ** 2)))


def subspaces_equal(S, T, tol=1e-8):
    return S.dim == T.dim and principal_angle_gap(S, T) <= tol


@dataclass
class SmoothRowCompressor:
    """Frozen-pivot smooth row compression Q(x)E(x) = [E1(x); 0].

    Pivot rows/columns are chosen once at the base point; Q(x) stays
    invertible and the zero rows stay zero while the pivot block is
    well-conditioned (rank E constant there).
    """

    base_point: np.ndarray
    rank: int
    pivot_rows: list
    pivot_cols: list
    zero_rows: list
    E_map: maps.SmoothMap
    E1: maps.SmoothMap = field(repr=False)
    annihilator: AnnihilatorMap = field(repr=False)

    def top_rows(self, M):
        """Q-image top block of a compatible row map (picks pivot rows)."""
        return RowsMap(M, self.pivot_rows)

    def bottom_rows(self, M):
        """Q-image bottom block: M_other - Gamma M_pivot, vanishing with E."""
        return MatMulMap(self.annihilator, M)

    def apply(self, x):
        """Q(x)E(x) evaluated at x, stacked as [E1; residual]."""
        top = evaluate(self.E1, x)
        bottom = evaluate(self.bottom_rows(self.E_map), x)
        return np.concatenate([top, bottom], axis=-2)

    def q_matrix(self, x):
        """Dense Q(x)."""
        l = self.E_map.shape[0]
        Lv = evaluate(self.annihilator, x)
        single = np.asarray(x).ndim == 1
        if single:
            Lv = Lv[None]
        B = Lv.shape[0]
        Q = np.zeros((B, l, l))
        for i, r in enumerate(self.pivot_rows):
            Q[:, i, r] = 1.0
        Q[:, len(self.pivot_rows):, :] = Lv
        return Q[0] if single else Q


def row_compress(E_map, base_point, tol_rank=None, rank=None):
    """Build a SmoothRowCompressor for E_map anchored at base_point."""
    E0 = evaluate(E_map, np.asarray(base_point, dtype=float))
    q = numerical_rank(E0, tol_rank).rank if rank is None else rank
    ann = AnnihilatorMap(E_map, E0, q)
    return SmoothRowCompressor(
        base_point=np.asarray(base_point, dtype=float),
        rank=q,
        pivot_rows=list(ann.pr),
        pivot_cols=list(ann.pc),
        zero_rows=list(ann.other),
        E_map=E_map,
        E1=RowsMap(E_map, ann.pr),
        annihilator=ann,
    )


def kernel_basis(E_map, base_point, tol_rank=None, rank=None):
    """Smooth frozen-pivot kernel fields g_i with E(x) g_i(x) = 0; returns
    (fields, matrix_map)."""
    E0 = evaluate(E_map, np.asarray(base_point, dtype=float))
    q = numerical_rank(E0, tol_rank).rank if rank is None else rank
    K = KernelBasisMap(E_map, E0, q)
    fields = [ColVectorMap(K, j) for j in range(K.shape[1])]
    return fields, K


def right_inverse(E1_map, base_point):
    """Smooth frozen-pivot right inverse of a full-row-rank matrix map."""
    E0 = evaluate(E1_map, np.asarray(base_point, dtype=float))
    q = E1_map.shape[0]
    if numerical_rank(E0).rank < q:
        raise ConditioningError("matrix is not full row rank at the base point")
    return RightInverseMap(E1_map, E0)
