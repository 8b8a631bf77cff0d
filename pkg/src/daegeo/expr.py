"""Expression DSL: tokenizer, recursive-descent parser, printer, and evaluation
on plain floats and on forward-mode dual numbers."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "sqrt", "abs")


class ParseError(ValueError):
    """Syntax or name error, with 1-based line/column position."""

    def __init__(self, message, line, col):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class DomainError(ArithmeticError):
    """Evaluation left the real domain (ln of non-positive, sqrt of negative,
    division by zero, non-integer power of a negative base)."""

    def __init__(self, message, component=None):
        if component is not None:
            message = f"{message} (component {component})"
        super().__init__(message)
        self.component = component


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Unary:
    op: str  # 'neg' or a name from FUNCTIONS
    arg: "Expression"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "Expression"
    right: "Expression"


Expression = Const | Var | Unary | Binary


_TOKEN_RE = re.compile(
    r"(?P<num>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r"|(?P<ws>[ \t]+)"
)


def _tokenize(text):
    tokens = []
    line = 1
    line_start = 0
    pos = 0
    while pos < len(text):
        if text[pos] == "\n":
            line += 1
            line_start = pos + 1
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        col = pos - line_start + 1
        if m.lastgroup == "num":
            tokens.append(("num", m.group(), line, col))
        elif m.lastgroup == "ident":
            tokens.append(("ident", m.group(), line, col))
        elif m.lastgroup == "op":
            tokens.append(("op", m.group(), line, col))
        pos = m.end()
    tokens.append(("eof", "", line, len(text) - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, tokens, states):
        self.tokens = tokens
        self.i = 0
        self.states = {name: k for k, name in enumerate(states)}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val, line, col = self.take()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}, found {val!r}", line, col)

    def parse(self):
        node = self.expr()
        kind, val, line, col = self.peek()
        if kind != "eof":
            raise ParseError(f"unexpected trailing input {val!r}", line, col)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, _, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                node = Binary(val, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, val, _, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                node = Binary(val, node, self.unary())
            else:
                return node

    def unary(self):
        kind, val, _, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            inner = self.unary()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Unary("neg", inner)
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self):
        kind, val, line, col = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "ident":
            nxt_kind, nxt_val, _, _ = self.peek()
            if nxt_kind == "op" and nxt_val == "(":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", line, col)
                self.take()
                arg = self.expr()
                self.expect_op(")")
                return Unary(val, arg)
            if val in self.states:
                return Var(self.states[val])
            raise ParseError(f"unknown identifier {val!r}", line, col)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError(f"unexpected token {val!r}", line, col)


def parse_expression(text, states):
    """Parse `text` over the given state names into an Expression tree."""
    return _Parser(_tokenize(text), list(states)).parse()


# precedence levels for the printer; power binds tightest
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(node):
    if isinstance(node, (Const, Var)):
        return 5
    if isinstance(node, Unary):
        return _PREC["neg"] if node.op == "neg" else 5
    return _PREC[node.op]


def print_expression(node, states):
    """Render an Expression; parse(print(e)) is structurally identical to e."""
    if isinstance(node, Const):
        if math.copysign(1.0, node.value) < 0:
            return f"(-{repr(-node.value)})"
        return repr(node.value)
    if isinstance(node, Var):
        return states[node.index]
    if isinstance(node, Unary):
        inner = print_expression(node.arg, states)
        if node.op == "neg":
            # '-' binds looser than '^' and is the operand of '*' and '/'
            if _prec(node.arg) < _PREC["neg"]:
                inner = f"({inner})"
            return f"-{inner}"
        return f"{node.op}({inner})"
    lhs = print_expression(node.left, states)
    rhs = print_expression(node.right, states)
    p = _PREC[node.op]
    if _prec(node.left) < p or (node.op == "^" and _prec(node.left) <= p):
        lhs = f"({lhs})"
    # left-assoc ops need parens around right child of equal precedence;
    # '^' is right-assoc and its right operand is a unary (no parens needed)
    if node.op in "+-*/" and _prec(node.right) <= p:
        rhs = f"({rhs})"
    elif node.op == "^" and _prec(node.right) < _PREC["neg"]:
        rhs = f"({rhs})"
    return f"{lhs}{node.op}{rhs}"


def variables_of(node):
    """Set of variable indices appearing in the tree."""
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Unary):
        return variables_of(node.arg)
    if isinstance(node, Binary):
        return variables_of(node.left) | variables_of(node.right)
    return set()


def integer_exponent(node):
    """Return the exponent as an int if the node is a syntactic integer
    constant (possibly negated), else None."""
    if isinstance(node, Unary) and node.op == "neg":
        inner = integer_exponent(node.arg)
        return None if inner is None else -inner
    if isinstance(node, Const) and float(node.value).is_integer():
        return int(node.value)
    return None


class Dual:
    """Forward-mode dual number: value plus a vector of partials.

    `val` may itself be a Dual (nested evaluation gives exact higher-order
    derivatives) and `eps` is a numpy array whose entries are floats or
    Duals.  Arithmetic implements the chain rule exactly; comparisons and
    pivoting decisions read the real part.
    """

    __slots__ = ("val", "eps")
    __array_ufunc__ = None

    def __init__(self, val, eps):
        self.val = val
        self.eps = np.asarray(eps) if not isinstance(eps, np.ndarray) else eps

    # -- helpers -------------------------------------------------------
    @staticmethod
    def lift(x, ndirs):
        if isinstance(x, Dual):
            return x
        return Dual(x, np.zeros(ndirs))

    def __repr__(self):
        return f"Dual({self.val!r}, {self.eps!r})"

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, _ezip(self.eps, other.eps, lambda a, b: a + b))
        return Dual(self.val + other, self.eps)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, _ezip(self.eps, other.eps, lambda a, b: a - b))
        return Dual(self.val - other, self.eps)

    def __rsub__(self, other):
        return Dual(other - self.val, _emap(self.eps, lambda a: -a))

    def __neg__(self):
        return Dual(-self.val, _emap(self.eps, lambda a: -a))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                _ezip(
                    _escale(self.eps, other.val),
                    _escale(other.eps, self.val),
                    lambda a, b: a + b,
                ),
            )
        return Dual(self.val * other, _escale(self.eps, other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            if real_part(other.val) == 0.0:
                raise DomainError("division by zero")
            den = other.val * other.val
            num = _ezip(
                _escale(self.eps, other.val), _escale(other.eps, self.val), lambda a, b: a - b
            )
            return Dual(
                self.val / other.val, _emap(num, lambda a: a / den, obj=isinstance(den, Dual))
            )
        if real_part(other) == 0.0:
            raise DomainError("division by zero")
        return Dual(self.val / other, _escale(self.eps, 1.0 / other))

    def __rtruediv__(self, other):
        if real_part(self.val) == 0.0:
            raise DomainError("division by zero")
        den = self.val * self.val
        obj = isinstance(den, Dual) or isinstance(other, Dual)
        return Dual(other / self.val, _emap(self.eps, lambda a: -(a * other) / den, obj=obj))

    def __pow__(self, k):
        if not isinstance(k, int):
            raise TypeError("Dual ** requires an integer exponent; use dual_pow")
        return dual_pow_int(self, k)

    # -- comparisons on real parts --------------------------------------
    def __lt__(self, other):
        return real_part(self) < real_part(other)

    def __gt__(self, other):
        return real_part(self) > real_part(other)

    def __abs__(self):
        s = _sign(real_part(self.val))
        return Dual(abs(self.val), _escale(self.eps, s))


def _needs_object(eps, s=None):
    return eps.dtype == object or isinstance(s, Dual)


def _escale(eps, s):
    """eps * s, elementwise when nesting demands object entries."""
    if _needs_object(eps, s):
        out = np.empty(len(eps), dtype=object)
        for i, e in enumerate(eps):
            out[i] = e * s
        return out
    return eps * s


def _emap(eps, fn, obj=False):
    if eps.dtype == object or obj:
        out = np.empty(len(eps), dtype=object)
        for i, e in enumerate(eps):
            out[i] = fn(e)
        return out
    return fn(eps)


def _ezip(e1, e2, fn):
    if e1.dtype == object or e2.dtype == object:
        out = np.empty(len(e1), dtype=object)
        for i in range(len(e1)):
            out[i] = fn(e1[i], e2[i])
        return out
    return fn(e1, e2)


def real_part(x):
    while isinstance(x, Dual):
        x = x.val
    return x


def _sign(v):
    return 1.0 if v > 0 else (-1.0 if v < 0 else 0.0)


def seed_duals(x):
    """One dual per coordinate, with unit directions e_i (full Jacobian in
    one pass).  Nested seeding works: entries of x may already be Duals."""
    x = list(x)
    n = len(x)
    out = []
    for i, xi in enumerate(x):
        if any(isinstance(v, Dual) for v in x):
            eps = np.zeros(n, dtype=object)
            eps[:] = 0.0
        else:
            eps = np.zeros(n)
        eps[i] = 1.0
        out.append(Dual(xi, eps))
    return out


# generic scalar functions usable on floats and Duals ---------------------

def _d_sin(x):
    if isinstance(x, Dual):
        return Dual(_d_sin(x.val), _escale(x.eps, _d_cos(x.val)))
    return math.sin(x)


def _d_cos(x):
    if isinstance(x, Dual):
        return Dual(_d_cos(x.val), _escale(x.eps, -_d_sin(x.val)))
    return math.cos(x)


def _d_tan(x):
    if isinstance(x, Dual):
        c = _d_cos(x.val)
        return Dual(_d_tan(x.val), _escale(x.eps, 1.0 / (c * c)))
    return math.tan(x)


def _d_exp(x):
    if isinstance(x, Dual):
        e = _d_exp(x.val)
        return Dual(e, _escale(x.eps, e))
    return math.exp(x)


def _d_ln(x):
    if isinstance(x, Dual):
        if real_part(x.val) <= 0.0:
            raise DomainError("ln of non-positive value")
        return Dual(_d_ln(x.val), _escale(x.eps, 1.0 / x.val))
    if x <= 0.0:
        raise DomainError("ln of non-positive value")
    return math.log(x)


def _d_sqrt(x):
    if isinstance(x, Dual):
        if real_part(x.val) < 0.0:
            raise DomainError("sqrt of negative value")
        r = _d_sqrt(x.val)
        return Dual(r, _escale(x.eps, 0.5 / r))
    if x < 0.0:
        raise DomainError("sqrt of negative value")
    return math.sqrt(x)


def _d_abs(x):
    if isinstance(x, Dual):
        return abs(x)
    return abs(x)


_UNARY_IMPL = {
    "sin": _d_sin,
    "cos": _d_cos,
    "tan": _d_tan,
    "exp": _d_exp,
    "ln": _d_ln,
    "sqrt": _d_sqrt,
    "abs": _d_abs,
}


def dual_pow_int(base, k):
    """x**k for syntactic integer k by repeated multiplication."""
    if k == 0:
        return 1.0
    if k < 0:
        inv = 1.0 / base if isinstance(base, Dual) else None
        if inv is None:
            if base == 0.0:
                raise DomainError("zero to a negative power")
            inv = 1.0 / base
        return dual_pow_int(inv, -k)
    acc = base
    for _ in range(k - 1):
        acc = acc * base
    return acc


def dual_pow(base, expo):
    """General power: integer exponents by repeated multiplication, otherwise
    exp(expo*ln(base)); negative base with non-integer exponent is a domain
    error."""
    if isinstance(expo, (int, float)) and float(expo).is_integer():
        return dual_pow_int(base, int(expo))
    if real_part(base) < 0.0:
        raise DomainError("non-integer power of a negative base")
    return _d_exp(expo * _d_ln(base)) if isinstance(expo, Dual) else _d_exp(_d_ln(base) * expo)


def eval_expression(node, x):
    """Evaluate at a point whose entries are floats or Duals."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return x[node.index]
    if isinstance(node, Unary):
        v = eval_expression(node.arg, x)
        if node.op == "neg":
            return -v
        return _UNARY_IMPL[node.op](v)
    a = eval_expression(node.left, x)
    if node.op == "^":
        k = integer_exponent(node.right)
        if k is not None:
            return dual_pow_int(a, k)
        b = eval_expression(node.right, x)
        return dual_pow(a, b)
    b = eval_expression(node.right, x)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if real_part(b if not isinstance(b, Dual) else b.val) == 0.0 and not isinstance(b, Dual):
            raise DomainError("division by zero")
        return a / b
    raise ValueError(f"unknown operator {node.op!r}")


def gradient(node, x):
    """Gradient of a scalar expression via one dual pass."""
    duals = seed_duals([float(v) for v in x])
    out = eval_expression(node, duals)
    if isinstance(out, Dual):
        return np.asarray(out.eps, dtype=float)
    return np.zeros(len(x))
