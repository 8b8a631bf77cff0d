"""Composite smooth maps closed under exact forward differentiation.

Maps form a small DAG (expression matrices, stacks, products, Jacobians,
frozen-pivot kernels/annihilators/solves).  Evaluation at a batch of points
goes through jet arithmetic, so every map here is differentiable to the
order the caller requests; pivot choices are frozen at an anchor point and
only the condition of the pivot block limits the validity region.
"""

from __future__ import annotations

import numpy as np

from . import taylor
from .expr import DomainError, Dual, eval_expression, seed_duals, variables_of
from .taylor import ConditioningError, Jet

MAX_ORDER = 10


class EvalContext:
    """Point batch, jet cache and degeneracy flags for one evaluation pass."""

    def __init__(self, x, cond_bound=1e8):
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.seed = taylor.seed_points(self.x)
        self.cond_bound = cond_bound
        self.cache = {}
        self.flags = set()

    @property
    def batch(self):
        return self.x.shape[0]

    @property
    def degenerate(self):
        return bool(self.flags)


class SmoothMap:
    """Matrix- or vector-valued smooth map on R^n."""

    shape = ()
    n = 0

    def jet(self, ctx, order):
        if order > MAX_ORDER:
            raise ValueError(f"derivative order {order} exceeds cap {MAX_ORDER}")
        key = id(self)
        hit = ctx.cache.get(key)
        if hit is not None and hit[0] >= order:
            return hit[1].truncated(order)
        out = self._jet(ctx, order)
        ctx.cache[key] = (order, out)
        return out

    def _jet(self, ctx, order):
        raise NotImplementedError

    def __call__(self, x, cond_bound=1e8):
        return evaluate(self, x, cond_bound=cond_bound)


def evaluate(m, x, cond_bound=1e8, ctx=None):
    """Value of m at x; a single point gives unbatched output."""
    single = np.asarray(x).ndim == 1
    if ctx is None:
        ctx = EvalContext(x, cond_bound=cond_bound)
    out = m.jet(ctx, 0).value()
    return out[0] if single else out


def jacobian(m, x, cond_bound=1e8):
    """Exact forward-mode Jacobian of a vector-valued map at x."""
    single = np.asarray(x).ndim == 1
    ctx = EvalContext(x, cond_bound=cond_bound)
    out = taylor.jet_jacobian(m.jet(ctx, 1)).value()
    return out[0] if single else out


class ExprMatrixMap(SmoothMap):
    """Matrix of parsed expressions; None entries are zero."""

    def __init__(self, entries, n):
        self.entries = [list(row) for row in entries]
        self.shape = (len(self.entries), len(self.entries[0]))
        self.n = n
        for row in self.entries:
            for e in row:
                if e is not None and any(i >= n for i in variables_of(e)):
                    raise ValueError("expression references an undeclared state")

    def _jet(self, ctx, order):
        jets = []
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                if e is None:
                    jets.append(taylor.jet_zero((), self.n, ctx.batch))
                else:
                    try:
                        jets.append(taylor.eval_expression_jet(e, ctx.seed, order))
                    except DomainError as err:
                        raise DomainError(str(err), component=(i, j)) from None
        return taylor.assemble_entries(jets, self.shape, self.n, ctx.batch, order)


class ExprVectorMap(SmoothMap):
    """Column of parsed expressions (a vector field or constraint block)."""

    def __init__(self, entries, n):
        self.entries = list(entries)
        self.shape = (len(self.entries),)
        self.n = n
        for e in self.entries:
            if e is not None and any(i >= n for i in variables_of(e)):
                raise ValueError("expression references an undeclared state")

    def _jet(self, ctx, order):
        jets = []
        for i, e in enumerate(self.entries):
            if e is None:
                jets.append(taylor.jet_zero((), self.n, ctx.batch))
            else:
                try:
                    jets.append(taylor.eval_expression_jet(e, ctx.seed, order))
                except DomainError as err:
                    raise DomainError(str(err), component=i) from None
        return taylor.assemble_entries(jets, self.shape, self.n, ctx.batch, order)

    def eval_dual(self, x):
        """Evaluate on a list of floats/Duals (the scalar dual-number path)."""
        return [eval_expression(e, x) if e is not None else 0.0 for e in self.entries]

    def jacobian_dual(self, x):
        """Jacobian via one pass of simultaneous dual directions."""
        duals = seed_duals([float(v) for v in x])
        rows = []
        for v in self.eval_dual(duals):
            if isinstance(v, Dual):
                rows.append(np.asarray(v.eps, dtype=float))
            else:
                rows.append(np.zeros(self.n))
        return np.array(rows)


class ConstMap(SmoothMap):
    def __init__(self, arr, n):
        self.arr = np.asarray(arr, dtype=float)
        self.shape = self.arr.shape
        self.n = n

    def _jet(self, ctx, order):
        return taylor.jet_const(self.arr, self.n, ctx.batch)


class ZeroMap(SmoothMap):
    def __init__(self, shape, n):
        self.shape = tuple(shape)
        self.n = n

    def _jet(self, ctx, order):
        return taylor.jet_zero(self.shape, self.n, ctx.batch)


class StackRowsMap(SmoothMap):
    def __init__(self, parts):
        self.parts = [p for p in parts if p.shape[0] > 0]
        if not self.parts:
            self.parts = list(parts[:1])
        self.n = self.parts[0].n
        self.shape = (sum(p.shape[0] for p in self.parts),) + self.parts[0].shape[1:]

    def _jet(self, ctx, order):
        return taylor.jet_stack_rows([p.jet(ctx, order) for p in self.parts], order)


class RowsMap(SmoothMap):
    def __init__(self, m, indices):
        self.m = m
        self.indices = list(indices)
        self.shape = (len(self.indices),) + m.shape[1:]
        self.n = m.n

    def _jet(self, ctx, order):
        return self.m.jet(ctx, order).rows(self.indices)


class ColVectorMap(SmoothMap):
    """One column of a matrix map, as a vector field."""

    def __init__(self, m, col):
        self.m = m
        self.col = col
        self.shape = (m.shape[0],)
        self.n = m.n

    def _jet(self, ctx, order):
        jm = self.m.jet(ctx, order)
        return Jet([t[:, :, self.col] for t in jm.terms], self.shape, self.n)


class EntryMap(SmoothMap):
    """Scalar component of a vector map."""

    def __init__(self, m, idx):
        self.m = m
        self.idx = idx
        self.shape = ()
        self.n = m.n

    def _jet(self, ctx, order):
        return self.m.jet(ctx, order).entry((self.idx,))


class MatMulMap(SmoothMap):
    def __init__(self, a, b):
        self.a = a
        self.b = b
        if len(b.shape) == 1:
            self.shape = (a.shape[0],)
        else:
            self.shape = (a.shape[0], b.shape[1])
        self.n = a.n

    def _jet(self, ctx, order):
        return taylor.jet_matmul(self.a.jet(ctx, order), self.b.jet(ctx, order), order)


class AddMap(SmoothMap):
    def __init__(self, *parts):
        self.parts = parts
        self.shape = parts[0].shape
        self.n = parts[0].n

    def _jet(self, ctx, order):
        out = self.parts[0].jet(ctx, order)
        for p in self.parts[1:]:
            out = taylor.jet_add(out, p.jet(ctx, order))
        return out


class NegMap(SmoothMap):
    def __init__(self, m):
        self.m = m
        self.shape = m.shape
        self.n = m.n

    def _jet(self, ctx, order):
        return taylor.jet_neg(self.m.jet(ctx, order))


class JacobianMap(SmoothMap):
    """D(m): the derivative axis becomes a trailing base axis."""

    def __init__(self, m):
        self.m = m
        self.shape = m.shape + (m.n,)
        self.n = m.n

    def _jet(self, ctx, order):
        return taylor.jet_jacobian(self.m.jet(ctx, order + 1))


def select_pivots(M0, rank, forbidden_rows=()):
    """Greedy full-pivoting choice of `rank` pivot rows/columns of M0."""
    A = np.array(M0, dtype=float)
    r, c = A.shape
    rows, cols = [], []
    live_r = np.ones(r, dtype=bool)
    live_r[list(forbidden_rows)] = False
    live_c = np.ones(c, dtype=bool)
    for _ in range(rank):
        masked = np.abs(A.copy())
        masked[~live_r, :] = -1.0
        masked[:, ~live_c] = -1.0
        i, j = np.unravel_index(np.argmax(masked), masked.shape)
        if masked[i, j] <= 0.0:
            raise ConditioningError("pivot selection ran out of usable entries")
        rows.append(int(i))
        cols.append(int(j))
        live_r[i] = False
        live_c[j] = False
        piv = A[i, j]
        update = np.outer(A[live_r, j], A[i, :]) / piv
        A[live_r, :] -= update
    other_rows = [i for i in range(r) if i not in rows]
    free_cols = [j for j in range(c) if j not in cols]
    return rows, cols, other_rows, free_cols


def _transposed(jet):
    return Jet([np.swapaxes(t, 1, 2) for t in jet.terms], jet.base_shape[::-1], jet.n)


class AnnihilatorMap(SmoothMap):
    """Smooth frozen-pivot left annihilator L(x) of a matrix map M(x).

    Rows of L(x)M(x) vanish wherever rank M(x) equals the frozen rank; L is
    [-Gamma | I] in the pivot/other row split with Gamma = M_other,pc *
    inv(M_pr,pc), rational in the entries of M.
    """

    def __init__(self, m, anchor_value, rank):
        self.m = m
        self.rank = rank
        self.pr, self.pc, self.other, _ = select_pivots(anchor_value, rank)
        self.shape = (m.shape[0] - rank, m.shape[0])
        self.n = m.n

    def _jet(self, ctx, order):
        r = self.m.shape[0]
        s = len(self.other)
        if self.rank == 0:
            return taylor.jet_const(np.eye(r), self.n, ctx.batch)
        M = self.m.jet(ctx, order)
        Bblk = M.rows(self.pr).cols(self.pc)
        Nblk = M.rows(self.other).cols(self.pc)
        GT = taylor.jet_solve(
            _transposed(Bblk), _transposed(Nblk), order,
            cond_bound=ctx.cond_bound, flags=ctx.flags, what="annihilator",
        )
        G = _transposed(GT)
        terms = []
        for d in range(len(G.terms)):
            arr = np.zeros((ctx.batch, s, r) + (self.n,) * d)
            arr[:, :, self.pr] = -G.terms[d]
            if d == 0:
                arr[:, range(s), self.other] = 1.0
            terms.append(arr)
        if not terms:
            terms = [np.zeros((ctx.batch, s, r))]
        return Jet(terms, (s, r), self.n)


class KernelBasisMap(SmoothMap):
    """Smooth frozen-pivot kernel basis K(x) of a matrix map M(x):
    M(x)K(x) = 0 on the constant-rank set, K = [-B^-1 N ; I] in the
    pivot/free column split."""

    def __init__(self, m, anchor_value, rank):
        self.m = m
        self.rank = rank
        self.pr, self.pc, _, self.fc = select_pivots(anchor_value, rank)
        self.shape = (m.shape[1], m.shape[1] - rank)
        self.n = m.n

    def _jet(self, ctx, order):
        c = self.m.shape[1]
        k = len(self.fc)
        if self.rank == 0:
            return taylor.jet_const(np.eye(c), self.n, ctx.batch)
        M = self.m.jet(ctx, order)
        Bblk = M.rows(self.pr).cols(self.pc)
        Nblk = M.rows(self.pr).cols(self.fc)
        X = taylor.jet_solve(
            Bblk, Nblk, order,
            cond_bound=ctx.cond_bound, flags=ctx.flags, what="kernel",
        )
        terms = []
        for d in range(len(X.terms)):
            arr = np.zeros((ctx.batch, c, k) + (self.n,) * d)
            arr[:, self.pc] = -X.terms[d]
            if d == 0:
                arr[:, self.fc, range(k)] = 1.0
            terms.append(arr)
        if not terms:
            terms = [np.zeros((ctx.batch, c, k))]
        return Jet(terms, (c, k), self.n)


class RightInverseMap(SmoothMap):
    """Frozen-pivot right inverse of a full-row-rank map E1 (q x n):
    E1(x) R(x) = I_q; R = [B^-1 ; 0] in the pivot column split."""

    def __init__(self, m, anchor_value):
        self.m = m
        q = m.shape[0]
        self.q = q
        self.pr, self.pc, _, self.fc = select_pivots(anchor_value, q)
        # pivot rows of a full-row-rank map are all rows; keep natural order
        self.shape = (m.shape[1], q)
        self.n = m.n

    def _jet(self, ctx, order):
        M = self.m.jet(ctx, order)
        Bblk = M.rows(self.pr).cols(self.pc)
        eye = taylor.jet_const(np.eye(self.q), self.n, ctx.batch)
        X = taylor.jet_solve(
            Bblk, eye, order, cond_bound=ctx.cond_bound, flags=ctx.flags,
            what="right_inverse",
        )
        # undo the row permutation: columns of R correspond to rows of E1
        perm = np.argsort(self.pr)
        terms = []
        nrows = self.m.shape[1]
        for d in range(len(X.terms)):
            arr = np.zeros((ctx.batch, nrows, self.q) + (self.n,) * d)
            arr[:, self.pc] = X.terms[d][:, :, perm]
            terms.append(arr)
        return Jet(terms, (nrows, self.q), self.n)


class PivotSolveMap(SmoothMap):
    """Particular solution map v(x) of A(x) v = b(x) using a frozen square
    pivot sub-block; components outside the pivot columns are zero."""

    def __init__(self, a, b, anchor_value, rank):
        self.a = a
        self.b = b
        self.rank = rank
        self.pr, self.pc, _, self.fc = select_pivots(anchor_value, rank)
        self.shape = (a.shape[1],)
        self.n = a.n

    def _jet(self, ctx, order):
        A = self.a.jet(ctx, order)
        rhs = self.b.jet(ctx, order)
        Bblk = A.rows(self.pr).cols(self.pc)
        sub = rhs.rows(self.pr)
        X = taylor.jet_solve(
            Bblk, sub, order, cond_bound=ctx.cond_bound, flags=ctx.flags,
            what="pivot_solve",
        )
        nvars = self.a.shape[1]
        terms = []
        for d in range(len(X.terms)):
            arr = np.zeros((ctx.batch, nvars) + (self.n,) * d)
            arr[:, self.pc] = X.terms[d]
            terms.append(arr)
        return Jet(terms, (nvars,), self.n)


class LieBracketMap(SmoothMap):
    """[X, Y] = DY X - DX Y as a vector field."""

    def __init__(self, X, Y):
        self.X = X
        self.Y = Y
        self.shape = X.shape
        self.n = X.n
        if X.shape != Y.shape or X.shape != (X.n,):
            raise ValueError("lie bracket needs two vector fields of dimension n")

    def _jet(self, ctx, order):
        jx = self.X.jet(ctx, order)
        jy = self.Y.jet(ctx, order)
        dyx = taylor.jet_matmul(taylor.jet_jacobian(self.Y.jet(ctx, order + 1)), jx, order)
        dxy = taylor.jet_matmul(taylor.jet_jacobian(self.X.jet(ctx, order + 1)), jy, order)
        return taylor.jet_sub(dyx, dxy)


def lie_bracket(X, Y, x):
    """Value of [X, Y] at x."""
    return evaluate(LieBracketMap(X, Y), x)


def lie_derivative(h, f, x, order=1):
    """L_f^order h at x for a scalar map h and a vector field f.

    Nested exact differentiation; the order is capped at n because the
    structural indices used downstream never exceed the state dimension.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    if order > f.n:
        raise ValueError(f"Lie derivative order {order} exceeds state dimension {f.n}")
    single = np.asarray(x).ndim == 1
    ctx = EvalContext(x)
    phi = h.jet(ctx, order)
    for k in range(order, 0, -1):
        grad = taylor.jet_jacobian(phi)  # shape (n,)
        fj = f.jet(ctx, k - 1)
        phi = taylor._jet_product(grad, fj, "k", "k", "", (), k - 1)
    out = phi.value()
    return float(out[0]) if single else out


def lie_derivative_along(h, f, g_field, x, order):
    """L_g L_f^(order-1) h at x (order >= 1)."""
    if order < 1:
        raise ValueError("order must be >= 1")
    single = np.asarray(x).ndim == 1
    ctx = EvalContext(x)
    phi = h.jet(ctx, order)
    for k in range(order, 1, -1):
        grad = taylor.jet_jacobian(phi)
        fj = f.jet(ctx, k - 1)
        phi = taylor._jet_product(grad, fj, "k", "k", "", (), k - 1)
    grad = taylor.jet_jacobian(phi)
    gj = g_field.jet(ctx, 0)
    out = taylor._jet_product(grad, gj, "k", "k", "", (), 0).value()
    return float(out[0]) if single else out


def pivoted_solve_generic(A, b):
    """Gaussian elimination with partial pivoting on real parts, generic over
    floats and Duals.  Test oracle for the jet-based solves."""
    from .expr import real_part

    A = [list(row) for row in A]
    b = list(b)
    q = len(A)
    perm = list(range(q))
    for k in range(q):
        piv = max(range(k, q), key=lambda i: abs(real_part(A[i][k])))
        if abs(real_part(A[piv][k])) == 0.0:
            raise ZeroDivisionError("singular pivot")
        A[k], A[piv] = A[piv], A[k]
        b[k], b[piv] = b[piv], b[k]
        perm[k], perm[piv] = perm[piv], perm[k]
        for i in range(k + 1, q):
            m = A[i][k] / A[k][k]
            for j in range(k, q):
                A[i][j] = A[i][j] - m * A[k][j]
            b[i] = b[i] - m * b[k]
    x = [0.0] * q
    for i in range(q - 1, -1, -1):
        s = b[i]
        for j in range(i + 1, q):
            s = s - A[i][j] * x[j]
        x[i] = s / A[i][i]
    return x
