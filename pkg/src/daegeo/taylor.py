"""Batched truncated Taylor ("jet") arithmetic.

A Jet stores the mixed partial derivative tensors of a matrix-valued map at a
batch of points: terms[d] has shape (B, *base_shape, n, ..., n) with d
trailing derivative axes.  Missing trailing orders are identically zero, so
constant and affine data stay cheap.  All rules are exact; products use the
subset Leibniz rule and scalar functions use Faa di Bruno over set
partitions.  Rank-revealing pivot choices are made on order-0 parts only.
"""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np

from .expr import Binary, Const, DomainError, Unary, Var, integer_exponent

_LETTERS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"


class ConditioningError(ArithmeticError):
    """A frozen-pivot block left its validity region (condition bound hit or
    an inconsistent degenerate system)."""


class Jet:
    __slots__ = ("terms", "base_shape", "n")

    def __init__(self, terms, base_shape, n):
        self.terms = list(terms)
        self.base_shape = tuple(base_shape)
        self.n = n

    @property
    def batch(self):
        return self.terms[0].shape[0]

    @property
    def order(self):
        return len(self.terms) - 1

    def term(self, d):
        """d-th derivative tensor or None when identically zero."""
        if d < len(self.terms):
            return self.terms[d]
        return None

    def value(self):
        return self.terms[0]

    def truncated(self, order):
        if order >= self.order:
            return self
        return Jet(self.terms[: order + 1], self.base_shape, self.n)

    def is_zero(self):
        return all(np.all(t == 0.0) for t in self.terms)

    def entry(self, idx):
        """Scalar jet of one base entry (idx indexes base axes)."""
        sl = (slice(None),) + idx
        return Jet([t[sl] for t in self.terms], (), self.n)

    def rows(self, indices):
        idx = list(indices)
        shape = (len(idx),) + self.base_shape[1:]
        return Jet([t[:, idx] for t in self.terms], shape, self.n)

    def cols(self, indices):
        idx = list(indices)
        shape = (self.base_shape[0], len(idx)) + self.base_shape[2:]
        return Jet([t[:, :, idx] for t in self.terms], shape, self.n)

    def reshaped(self, base_shape):
        base_shape = tuple(base_shape)
        out = []
        for d, t in enumerate(self.terms):
            out.append(t.reshape((t.shape[0],) + base_shape + (self.n,) * d))
        return Jet(out, base_shape, self.n)


def jet_const(arr, n, batch):
    arr = np.asarray(arr, dtype=float)
    return Jet([np.broadcast_to(arr, (batch,) + arr.shape).copy()], arr.shape, n)


def jet_zero(base_shape, n, batch):
    return Jet([np.zeros((batch,) + tuple(base_shape))], base_shape, n)


def seed_points(x):
    """Identity-seeded jet of the coordinate map at points x of shape (B, n)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, n = x.shape
    eye = np.broadcast_to(np.eye(n), (B, n, n)).copy()
    return Jet([x.copy(), eye], (n,), n)


def jet_neg(a):
    return Jet([-t for t in a.terms], a.base_shape, a.n)


def jet_add(a, b):
    hi = max(len(a.terms), len(b.terms))
    out = []
    for d in range(hi):
        ta, tb = a.term(d), b.term(d)
        if ta is None:
            out.append(tb.copy())
        elif tb is None:
            out.append(ta.copy())
        else:
            out.append(ta + tb)
    return Jet(out, a.base_shape, a.n)


def jet_sub(a, b):
    return jet_add(a, jet_neg(b))


@functools.lru_cache(maxsize=None)
def _leibniz_plans(a_base, b_base, out_base, d):
    """(j, einsum_spec) for each way to hand j of d derivative axes to a."""
    used = set(a_base + b_base + out_base)
    der = [c for c in _LETTERS if c not in used][:d]
    plans = []
    for subset in itertools.chain.from_iterable(
        itertools.combinations(range(d), j) for j in range(d + 1)
    ):
        sset = set(subset)
        a_der = "".join(der[p] for p in subset)
        b_der = "".join(der[p] for p in range(d) if p not in sset)
        spec = f"...{a_base}{a_der},...{b_base}{b_der}->...{out_base}{''.join(der)}"
        plans.append((len(subset), spec))
    return tuple(plans)


def _jet_product(a, b, a_base, b_base, out_base, out_shape, order):
    max_order = min(order, (len(a.terms) - 1) + (len(b.terms) - 1))
    terms = []
    for d in range(max_order + 1):
        acc = None
        for j, spec in _leibniz_plans(a_base, b_base, out_base, d):
            ta, tb = a.term(j), b.term(d - j)
            if ta is None or tb is None:
                continue
            piece = np.einsum(spec, ta, tb)
            acc = piece if acc is None else acc + piece
        if acc is None:
            acc = np.zeros((a.batch,) + out_shape + (a.n,) * d)
        terms.append(acc)
    return Jet(terms, out_shape, a.n)


def jet_matmul(a, b, order):
    """(r,k) @ (k,c) or (r,k) @ (k,)."""
    if len(b.base_shape) == 1:
        return _jet_product(a, b, "ik", "k", "i", (a.base_shape[0],), order)
    return _jet_product(a, b, "ik", "kc", "ic", (a.base_shape[0], b.base_shape[1]), order)


def jet_smul(a, b, order):
    """scalar * scalar."""
    return _jet_product(a, b, "", "", "", (), order)


def jet_scale(s, m, order):
    """scalar * matrix/vector."""
    base = _LETTERS[: len(m.base_shape)]
    return _jet_product(s, m, "", base, base, m.base_shape, order)


def jet_stack_rows(jets, order):
    """Stack row blocks (vectors or matrices sharing trailing base axes)."""
    n = jets[0].n
    B = jets[0].batch
    tail = jets[0].base_shape[1:]
    rows = sum(j.base_shape[0] for j in jets)
    hi = min(order, max(j.order for j in jets))
    terms = []
    for d in range(hi + 1):
        arr = np.zeros((B, rows) + tail + (n,) * d)
        at = 0
        for jjet in jets:
            r = jjet.base_shape[0]
            t = jjet.term(d)
            if t is not None:
                arr[:, at : at + r] = t
            at += r
        terms.append(arr)
    return Jet(terms, (rows,) + tail, n)


def jet_jacobian(a):
    """Reinterpret one derivative axis as a base column axis: the jet of Dm
    to order d is the jet of m to order d+1 (free by tensor symmetry)."""
    if len(a.terms) == 1:
        B = a.terms[0].shape[0]
        return Jet(
            [np.zeros((B,) + a.base_shape + (a.n,))], a.base_shape + (a.n,), a.n
        )
    return Jet(a.terms[1:], a.base_shape + (a.n,), a.n)


def _batch_solve(A0, rhs):
    """Solve A0 @ X = rhs where rhs has extra trailing axes."""
    q = A0.shape[-1]
    flat = rhs.reshape(rhs.shape[0], q, -1)
    out = np.linalg.solve(A0, flat)
    return out.reshape(rhs.shape)


def _batch_apply(M, rhs):
    flat = rhs.reshape(rhs.shape[0], rhs.shape[1], -1)
    out = np.matmul(M, flat)
    return out.reshape((rhs.shape[0], M.shape[1]) + rhs.shape[2:])


def singular_values(A):
    return np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)


def jet_solve(a, b, order, cond_bound=1e8, flags=None, what="solve"):
    """X with A @ X = B as jets; A square (q,q), B is (q,) or (q,c).

    Degenerate batch entries (condition above the bound) are allowed only
    when the system stays consistent there; the minimum-norm solution is
    taken and a 'degenerate' flag is recorded.  An all-zero right-hand side
    short-circuits to the exact zero jet.
    """
    if b.is_zero():
        return jet_zero(b.base_shape, b.n, b.batch)
    A0 = a.value()
    q = A0.shape[-1]
    sv = singular_values(A0)
    with np.errstate(divide="ignore"):
        cond = np.where(sv[:, -1] > 0.0, sv[:, 0] / np.maximum(sv[:, -1], 1e-300), np.inf)
    bad = cond > cond_bound
    use_pinv = bool(np.any(bad))
    if use_pinv:
        if flags is not None:
            flags.add("degenerate_" + what)
        pinv = np.linalg.pinv(A0[bad], rcond=1.0 / cond_bound)
        scale = np.maximum(sv[bad, 0], 1e-300)

    vec = len(b.base_shape) == 1
    a_base, x_base, out_base = ("ik", "k", "i") if vec else ("ik", "kc", "ic")
    terms = []
    max_order = order
    for d in range(max_order + 1):
        rhs = b.term(d)
        if rhs is None:
            rhs = np.zeros((b.batch,) + b.base_shape + (b.n,) * d)
        else:
            rhs = rhs.copy()
        # move known lower-order pieces of (A X) to the right-hand side
        for j, spec in _leibniz_plans(a_base, x_base, out_base, d):
            if j == 0:
                continue
            ta = a.term(j)
            if ta is None:
                continue
            rhs -= np.einsum(spec, ta, terms[d - j])
        if not use_pinv:
            terms.append(_batch_solve(A0, rhs))
        else:
            out = np.zeros_like(rhs)
            good = ~bad
            if np.any(good):
                out[good] = _batch_solve(A0[good], rhs[good])
            xb = _batch_apply(pinv, rhs[bad])
            resid = _batch_apply(A0[bad], xb) - rhs[bad]
            rflat = resid.reshape(resid.shape[0], -1)
            bflat = rhs[bad].reshape(resid.shape[0], -1)
            rel = np.linalg.norm(rflat, axis=1) / np.maximum(
                np.linalg.norm(bflat, axis=1) + scale, 1e-300
            )
            if np.any(rel > 1e-7):
                raise ConditioningError(
                    f"{what}: pivot block condition {cond[bad].max():.2e} exceeds "
                    f"{cond_bound:.1e} and the degenerate system is inconsistent "
                    f"(order {d}, relative residual {rel.max():.2e})"
                )
            out[bad] = xb
            terms.append(out)
    return Jet(terms, b.base_shape, b.n, )


def jet_inv(a, order, cond_bound=1e8, flags=None):
    q = a.base_shape[0]
    eye = jet_const(np.eye(q), a.n, a.batch)
    return jet_solve(a, eye, order, cond_bound=cond_bound, flags=flags, what="inverse")


@functools.lru_cache(maxsize=None)
def _set_partitions(d):
    if d == 0:
        return ((),)
    parts = []
    for p in _set_partitions(d - 1):
        for i in range(len(p)):
            parts.append(p[:i] + (p[i] + (d - 1,),) + p[i + 1 :])
        parts.append(p + ((d - 1,),))
    return tuple(parts)


@functools.lru_cache(maxsize=None)
def _partition_specs(d):
    """einsum specs for Faa di Bruno terms at order d."""
    specs = []
    der = _LETTERS[:d]
    for part in _set_partitions(d):
        labels = ["..."]  # outer-derivative factor g_k, shape (B,)
        for block in part:
            labels.append("..." + "".join(der[p] for p in block))
        spec = ",".join(labels) + "->..." + der
        specs.append((part, spec))
    return specs


def jet_compose(g_derivs, u, order):
    """Scalar jet of g(u) from the derivative values g, g', ..., g^(order) at
    u's value (each an array of shape (B,))."""
    terms = [np.asarray(g_derivs[0], dtype=float).copy()]
    for d in range(1, order + 1):
        acc = None
        for part, spec in _partition_specs(d):
            ops = [g_derivs[len(part)]]
            missing = False
            for block in part:
                t = u.term(len(block))
                if t is None:
                    missing = True
                    break
                ops.append(t)
            if missing:
                continue
            piece = np.einsum(spec, *ops)
            acc = piece if acc is None else acc + piece
        if acc is None:
            break
        terms.append(acc)
    return Jet(terms, (), u.n)


def _tan_poly(k):
    """Coefficients of d^k tan as a polynomial in t = tan(u)."""
    polys = [np.array([0.0, 1.0])]  # tan itself
    while len(polys) <= k:
        p = polys[-1]
        dp = np.polynomial.polynomial.polyder(p)
        # multiply by (1 + t^2)
        nxt = np.polynomial.polynomial.polymul(dp, np.array([1.0, 0.0, 1.0]))
        polys.append(nxt)
    return polys[k]


def _unary_derivs(op, u0, order):
    """Values of g, g', ..., g^(order) at u0 (array (B,))."""
    out = []
    if op == "sin":
        cyc = [np.sin(u0), np.cos(u0), -np.sin(u0), -np.cos(u0)]
        out = [cyc[d % 4] for d in range(order + 1)]
    elif op == "cos":
        cyc = [np.cos(u0), -np.sin(u0), -np.cos(u0), np.sin(u0)]
        out = [cyc[d % 4] for d in range(order + 1)]
    elif op == "exp":
        e = np.exp(u0)
        out = [e] * (order + 1)
    elif op == "ln":
        if np.any(u0 <= 0.0):
            raise DomainError("ln of non-positive value")
        out = [np.log(u0)]
        for d in range(1, order + 1):
            out.append(((-1.0) ** (d - 1)) * math.factorial(d - 1) / u0**d)
    elif op == "sqrt":
        if np.any(u0 < 0.0):
            raise DomainError("sqrt of negative value")
        if order >= 1 and np.any(u0 == 0.0):
            raise DomainError("sqrt derivative at zero")
        # g^(d) = prod(1/2 - j, j<d) * u0^(1/2 - d)
        out = [np.sqrt(u0)]
        for d in range(1, order + 1):
            c = 1.0
            for j in range(d):
                c *= 0.5 - j
            out.append(c * u0 ** (0.5 - d))
    elif op == "tan":
        t = np.tan(u0)
        out = [t]
        for d in range(1, order + 1):
            out.append(np.polynomial.polynomial.polyval(t, _tan_poly(d)))
    elif op == "abs":
        out = [np.abs(u0), np.sign(u0)] + [np.zeros_like(u0)] * max(0, order - 1)
        out = out[: order + 1]
    else:
        raise ValueError(f"unknown unary op {op!r}")
    return out


def _recip(u, order):
    u0 = u.value()
    if np.any(u0 == 0.0):
        raise DomainError("division by zero")
    derivs = [1.0 / u0]
    for d in range(1, order + 1):
        derivs.append(((-1.0) ** d) * math.factorial(d) / u0 ** (d + 1))
    return jet_compose(derivs, u, order)


def jet_pow_int(a, k, order):
    if k == 0:
        return jet_const(np.ones(()), a.n, a.batch)
    if k < 0:
        return jet_pow_int(_recip(a, order), -k, order)
    # exponentiation by squaring keeps the op count down
    result = None
    base = a
    while k:
        if k & 1:
            result = base if result is None else jet_smul(result, base, order)
        k >>= 1
        if k:
            base = jet_smul(base, base, order)
    return result


def eval_expression_jet(node, xjet, order):
    """Scalar jet of an Expression at the seeded points xjet (shape (n,))."""
    if isinstance(node, Const):
        return jet_const(np.full((), node.value), xjet.n, xjet.batch)
    if isinstance(node, Var):
        return xjet.entry((node.index,))
    if isinstance(node, Unary):
        u = eval_expression_jet(node.arg, xjet, order)
        if node.op == "neg":
            return jet_neg(u)
        return jet_compose(_unary_derivs(node.op, u.value(), order), u, order)
    if node.op == "^":
        k = integer_exponent(node.right)
        base = eval_expression_jet(node.left, xjet, order)
        if k is not None:
            return jet_pow_int(base, k, order)
        if np.any(base.value() <= 0.0):
            raise DomainError("non-integer power of a non-positive base")
        expo = eval_expression_jet(node.right, xjet, order)
        lg = jet_compose(_unary_derivs("ln", base.value(), order), base, order)
        arg = jet_smul(expo, lg, order)
        return jet_compose(_unary_derivs("exp", arg.value(), order), arg, order)
    a = eval_expression_jet(node.left, xjet, order)
    b = eval_expression_jet(node.right, xjet, order)
    if node.op == "+":
        return jet_add(a, b)
    if node.op == "-":
        return jet_sub(a, b)
    if node.op == "*":
        return jet_smul(a, b, order)
    if node.op == "/":
        return jet_smul(a, _recip(b, order), order)
    raise ValueError(f"unknown operator {node.op!r}")


def assemble_entries(entry_jets, shape, n, batch, order):
    """Pack scalar jets into one matrix jet of the given base shape."""
    flat = list(entry_jets)
    hi = min(order, max(j.order for j in flat))
    terms = []
    for d in range(hi + 1):
        arr = np.zeros((batch,) + shape + (n,) * d)
        for idx, jjet in zip(np.ndindex(*shape), flat):
            t = jjet.term(d)
            if t is not None:
                arr[(slice(None),) + idx] = t
        terms.append(arr)
    return Jet(terms, shape, n)
