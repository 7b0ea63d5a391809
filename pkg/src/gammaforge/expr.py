"""Immutable symbolic scalar fields on a coordinate chart.

Expressions are hash-consed: structurally identical nodes built from the
same children are the same Python object, so shared subexpressions form a
DAG and derivatives are memoized per node.  Simplification is deliberately
shallow (constant folding, 0/1 identities, collecting equal terms and equal
bases); correctness is always checked by evaluation, never by tree equality.

Two kinds of leaves carry data: chart coordinates ``x1..xn`` (``Var``) and
parameters ``p1..pk`` (``Param``).  Parameters are constants for
differentiation and are supplied separately at evaluation time, which lets
one symbolic build be evaluated over many random instances at once.
"""

from __future__ import annotations

import itertools
import math
import re
import weakref
from typing import Iterable, Sequence

import numpy as np

FUNCTIONS = ("exp", "log", "sin", "cos", "tan", "cot", "tanh", "sqrt")
NONSMOOTH = ("abs", "max", "min", "sign", "floor", "ceil", "heaviside")


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position}: {text!r}")


class DomainError(ExprError, ArithmeticError):
    """Evaluation left the domain of definition (log of nonpositive, 1/0, ...)."""

    def __init__(self, node: "Expr", point, message: str = "domain error"):
        self.node = node
        self.point = point
        pt = np.array2string(np.asarray(point, dtype=float), precision=6)
        super().__init__(f"{message} in node {node!s:.80} at point {pt}")


_counter = itertools.count()
_interned: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


def _intern(cls, key: tuple, init) -> "Expr":
    full = (cls, key)
    node = _interned.get(full)
    if node is None:
        node = object.__new__(cls)
        node._id = next(_counter)
        node._diff = {}
        node._topo = None
        init(node)
        _interned[full] = node
    return node


class Expr:
    """Base class of expression nodes.  Build nodes with the module helpers
    (``const``, ``var``, ``parse``, arithmetic operators) rather than directly."""

    __slots__ = ("_id", "_diff", "_topo", "__weakref__")

    def children(self) -> tuple["Expr", ...]:
        return ()

    @property
    def is_const(self) -> bool:
        return False

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(-1.0, other))

    def __rsub__(self, other):
        return add(other, mul(-1.0, self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(other, power(self, -1.0))

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    def __neg__(self):
        return mul(-1.0, self)

    def __pos__(self):
        return self

    def __repr__(self):
        return f"Expr({self!s})"

    def __str__(self):
        return _format(self, 0)

    def __reduce__(self):
        # rebuild through the public constructors so unpickled nodes are interned
        return (parse_internal, (str(self),))

    def diff(self, i: int) -> "Expr":
        return diff(self, i)

    def __call__(self, x, params=None):
        return evaluate(self, x, params)


class Const(Expr):
    __slots__ = ("value",)

    @property
    def is_const(self) -> bool:
        return True


class Var(Expr):
    __slots__ = ("index",)


class Param(Expr):
    __slots__ = ("index",)


class Add(Expr):
    """const + sum(coef * term)."""

    __slots__ = ("const", "terms")

    def children(self):
        return tuple(t for _, t in self.terms)


class Mul(Expr):
    """coef * prod(base ** exponent)."""

    __slots__ = ("coef", "factors")

    def children(self):
        return tuple(b for b, _ in self.factors)


class Func(Expr):
    __slots__ = ("name", "arg")

    def children(self):
        return (self.arg,)


class Flat(Expr):
    """k-th derivative of phi(t) = exp(-1/t) for t > 0, 0 for t <= 0.

    A C-infinity function vanishing identically on a half line; not part of
    the text grammar, only available programmatically via ``flat``.
    """

    __slots__ = ("order", "arg")

    def children(self):
        return (self.arg,)


# constructors ---------------------------------------------------------------

def const(value: float) -> Const:
    value = float(value)
    if not math.isfinite(value):
        raise ExprError(f"non-finite constant {value}")
    if value == 0.0:
        value = 0.0  # fold -0.0

    def init(node):
        node.value = value

    return _intern(Const, (value,), init)


ZERO = const(0.0)
ONE = const(1.0)


def var(index: int) -> Var:
    if index < 1:
        raise ExprError(f"variable index must be >= 1, got {index}")

    def init(node):
        node.index = int(index)

    return _intern(Var, (int(index),), init)


def param(index: int) -> Param:
    if index < 1:
        raise ExprError(f"parameter index must be >= 1, got {index}")

    def init(node):
        node.index = int(index)

    return _intern(Param, (int(index),), init)


def coords(n: int) -> list[Var]:
    return [var(i) for i in range(1, n + 1)]


def as_expr(obj) -> Expr:
    if isinstance(obj, Expr):
        return obj
    if isinstance(obj, (int, float, np.integer, np.floating)):
        return const(float(obj))
    raise TypeError(f"cannot convert {type(obj).__name__} to Expr")


def _split_coef(e: Expr) -> tuple[float, Expr]:
    """e == c * rest with rest having unit coefficient."""
    if isinstance(e, Mul) and e.coef != 1.0:
        return e.coef, _make_mul(1.0, e.factors)
    return 1.0, e


def _make_add(c: float, terms: dict[Expr, float]) -> Expr:
    items = [(coef, t) for t, coef in terms.items() if coef != 0.0]
    if not items:
        return const(c)
    items.sort(key=lambda ct: ct[1]._id)
    if c == 0.0 and len(items) == 1:
        coef, t = items[0]
        return t if coef == 1.0 else mul(coef, t)
    key = (float(c), tuple((float(k), t) for k, t in items))

    def init(node):
        node.const = float(c)
        node.terms = key[1]

    return _intern(Add, key, init)


def add(*args) -> Expr:
    c = 0.0
    terms: dict[Expr, float] = {}
    stack = [as_expr(a) for a in reversed(args)]
    scale = [1.0] * len(stack)
    while stack:
        e = stack.pop()
        s = scale.pop()
        if isinstance(e, Const):
            c += s * e.value
        elif isinstance(e, Add):
            c += s * e.const
            for k, t in reversed(e.terms):
                stack.append(t)
                scale.append(s * k)
        else:
            k, rest = _split_coef(e)
            terms[rest] = terms.get(rest, 0.0) + s * k
    return _make_add(c, terms)


def _make_mul(coef: float, factors: Iterable[tuple[Expr, float]]) -> Expr:
    fs = [(b, p) for b, p in factors if p != 0.0]
    if coef == 0.0:
        return ZERO
    if not fs:
        return const(coef)
    fs.sort(key=lambda bp: bp[0]._id)
    if coef == 1.0 and len(fs) == 1 and fs[0][1] == 1.0:
        return fs[0][0]
    key = (float(coef), tuple((b, float(p)) for b, p in fs))

    def init(node):
        node.coef = float(coef)
        node.factors = key[1]

    return _intern(Mul, key, init)


def mul(*args) -> Expr:
    coef = 1.0
    factors: dict[Expr, float] = {}
    for a in args:
        e = as_expr(a)
        if isinstance(e, Const):
            coef *= e.value
        elif isinstance(e, Mul):
            coef *= e.coef
            for b, p in e.factors:
                factors[b] = factors.get(b, 0.0) + p
        else:
            factors[e] = factors.get(e, 0.0) + 1.0
        if coef == 0.0:
            return ZERO
    return _make_mul(coef, factors.items())


def power(base, exponent) -> Expr:
    b = as_expr(base)
    ex = as_expr(exponent)
    if not isinstance(ex, Const):
        # b^e with non-constant exponent: exp(e*log b)
        return func("exp", mul(ex, func("log", b)))
    p = ex.value
    if p == 0.0:
        return ONE
    if p == 1.0:
        return b
    if isinstance(b, Const):
        with np.errstate(all="ignore"):
            v = float(np.power(b.value, p)) if b.value != 0.0 or p > 0 else math.inf
        if math.isfinite(v):
            return const(v)
        raise ExprError(f"constant power {b.value}^{p} is undefined")
    if isinstance(b, Mul):
        # (c*prod b^q)^p distributes only for integer p (keeps real semantics)
        if float(p).is_integer():
            return _make_mul(b.coef ** p, [(f, q * p) for f, q in b.factors])
    return _make_mul(1.0, [(b, p)])


_FOLD = {
    "exp": math.exp,
    "log": lambda v: math.log(v) if v > 0 else math.nan,
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "cot": lambda v: math.cos(v) / math.sin(v) if math.sin(v) != 0 else math.nan,
    "tanh": math.tanh,
    "sqrt": lambda v: math.sqrt(v) if v >= 0 else math.nan,
}


def func(name: str, arg) -> Expr:
    if name not in FUNCTIONS:
        raise ExprError(f"unknown function {name!r}")
    a = as_expr(arg)
    if isinstance(a, Const):
        try:
            v = _FOLD[name](a.value)
        except OverflowError:
            v = math.nan
        if math.isfinite(v):
            return const(v)
        raise ExprError(f"{name}({a.value}) is undefined")

    def init(node):
        node.name = name
        node.arg = a

    return _intern(Func, (name, a), init)


def flat(arg, order: int = 0) -> Expr:
    """Smooth function exp(-1/t) (t > 0), 0 (t <= 0), or its ``order``-th derivative."""
    a = as_expr(arg)
    if isinstance(a, Const):
        return const(_flat_values(order, np.array(a.value)).item())

    def init(node):
        node.order = int(order)
        node.arg = a

    return _intern(Flat, (int(order), a), init)


def exp(e):
    return func("exp", e)


def log(e):
    return func("log", e)


def sin(e):
    return func("sin", e)


def cos(e):
    return func("cos", e)


def tan(e):
    return func("tan", e)


def cot(e):
    return func("cot", e)


def tanh(e):
    return func("tanh", e)


def sqrt(e):
    return func("sqrt", e)


# differentiation -------------------------------------------------------------

def diff(e, i: int) -> Expr:
    """Exact partial derivative with respect to coordinate ``x_i``."""
    if i < 1:
        raise ExprError(f"variable index must be >= 1, got {i}")
    e = as_expr(e)
    # iterative over the DAG so deep trees do not hit the recursion limit
    for node in _toposort((e,)):
        if i in node._diff:
            continue
        node._diff[i] = _diff_node(node, i)
    return e._diff[i]


def _d(node: Expr, i: int) -> Expr:
    return node._diff[i]


def _diff_node(e: Expr, i: int) -> Expr:
    if isinstance(e, (Const, Param)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Add):
        return add(*[mul(k, _d(t, i)) for k, t in e.terms])
    if isinstance(e, Mul):
        parts = []
        for j, (b, p) in enumerate(e.factors):
            db = _d(b, i)
            if db is ZERO:
                continue
            rest = [(bb, pp) for jj, (bb, pp) in enumerate(e.factors) if jj != j]
            rest.append((b, p - 1.0))
            parts.append(mul(_make_mul(e.coef * p, _merge(rest)), db))
        return add(*parts)
    if isinstance(e, Func):
        da = _d(e.arg, i)
        if da is ZERO:
            return ZERO
        a = e.arg
        n = e.name
        if n == "exp":
            outer = e
        elif n == "log":
            outer = power(a, -1.0)
        elif n == "sin":
            outer = cos(a)
        elif n == "cos":
            outer = -sin(a)
        elif n == "tan":
            outer = 1.0 + e * e
        elif n == "cot":
            outer = -(1.0 + e * e)
        elif n == "tanh":
            outer = 1.0 - e * e
        elif n == "sqrt":
            outer = mul(0.5, power(e, -1.0))
        else:  # pragma: no cover - guarded by func()
            raise ExprError(n)
        return mul(outer, da)
    if isinstance(e, Flat):
        da = _d(e.arg, i)
        if da is ZERO:
            return ZERO
        return mul(flat(e.arg, e.order + 1), da)
    raise TypeError(type(e))  # pragma: no cover


def _merge(factors):
    out: dict[Expr, float] = {}
    for b, p in factors:
        out[b] = out.get(b, 0.0) + p
    return out.items()


def gradient(e, n: int) -> list[Expr]:
    return [diff(e, i) for i in range(1, n + 1)]


# structure helpers -------------------------------------------------------------

def _toposort(roots: Sequence[Expr]) -> list[Expr]:
    order: list[Expr] = []
    seen: set[int] = set()
    stack: list[tuple[Expr, bool]] = [(r, False) for r in reversed(roots)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for c in reversed(node.children()):
            if id(c) not in seen:
                stack.append((c, False))
    return order


def max_var(e: Expr) -> int:
    """Largest coordinate index used by ``e`` (0 if none)."""
    return max((n.index for n in _toposort((e,)) if isinstance(n, Var)), default=0)


def max_param(e: Expr) -> int:
    return max((n.index for n in _toposort((e,)) if isinstance(n, Param)), default=0)


def size(e: Expr) -> int:
    """Number of distinct DAG nodes."""
    return len(_toposort((e,)))


# evaluation -------------------------------------------------------------------

def _flat_poly(order: int) -> np.polynomial.Polynomial:
    # d^k/dt^k exp(-1/t) = P_k(1/t) exp(-1/t),  P_{k+1}(s) = s^2 (P_k(s) - P_k'(s))
    P = np.polynomial.Polynomial([1.0])
    s2 = np.polynomial.Polynomial([0.0, 0.0, 1.0])
    for _ in range(order):
        P = s2 * (P - P.deriv())
    return P


def _flat_values(order: int, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    if np.any(pos):
        s = 1.0 / t[pos]
        out[pos] = _flat_poly(order)(s) * np.exp(-s)
    return out


def _apply_func(name: str, a: np.ndarray) -> np.ndarray:
    if name == "exp":
        return np.exp(a)
    if name == "log":
        return np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), np.nan)
    if name == "sin":
        return np.sin(a)
    if name == "cos":
        return np.cos(a)
    if name == "tan":
        return np.tan(a)
    if name == "cot":
        s = np.sin(a)
        return np.where(s != 0, np.cos(a) / np.where(s != 0, s, 1.0), np.nan)
    if name == "tanh":
        return np.tanh(a)
    if name == "sqrt":
        return np.where(a >= 0, np.sqrt(np.abs(a)), np.nan)
    raise ExprError(name)  # pragma: no cover


def _pow(b: np.ndarray, p: float) -> np.ndarray:
    if p == 1.0:
        return b
    if p == 2.0:
        return b * b
    if p == -1.0:
        return np.where(b != 0, 1.0 / np.where(b != 0, b, 1.0), np.nan)
    if float(p).is_integer():
        if p < 0:
            return np.where(b != 0, np.power(np.where(b != 0, b, 1.0), p), np.nan)
        return np.power(b, p)
    return np.where(b > 0, np.power(np.where(b > 0, b, 1.0), p), np.where(b == 0, 0.0 if p > 0 else np.nan, np.nan))


def _columns(arr, width_needed: int, what: str):
    arr = np.asarray(arr, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ExprError(f"{what} must be a vector or a 2-D array of points")
    if arr.shape[1] < width_needed:
        raise ExprError(f"{what} has {arr.shape[1]} components, expression needs {width_needed}")
    return arr, single


def evaluate_many(exprs: Sequence[Expr], x, params=None) -> list:
    """Evaluate several expressions on the same point(s), sharing common nodes.

    ``x`` is a point (shape ``(n,)``) or a batch of points (shape ``(m, n)``);
    ``params`` likewise, broadcasting against ``x``.  Returns floats for a
    single point and arrays of shape ``(m,)`` otherwise.
    """
    exprs = [as_expr(e) for e in exprs]
    order = _toposort(exprs)
    nv = max((n.index for n in order if isinstance(n, Var)), default=0)
    npar = max((n.index for n in order if isinstance(n, Param)), default=0)
    X, single = _columns(x, nv, "point")
    m = X.shape[0]
    if npar:
        if params is None:
            raise ExprError("expression uses parameters but none were supplied")
        P, psingle = _columns(params, npar, "params")
        if P.shape[0] == 1 and m > 1:
            P = np.broadcast_to(P, (m, P.shape[1]))
        elif m == 1 and P.shape[0] > 1:
            X = np.broadcast_to(X, (P.shape[0], X.shape[1]))
            m = P.shape[0]
            single = False
        elif P.shape[0] != m:
            raise ExprError("point and parameter batches differ in length")
        single = single and psingle
    else:
        P = None

    vals: dict[int, np.ndarray] = {}
    with np.errstate(all="ignore"):
        for node in order:
            if isinstance(node, Const):
                v = np.full(m, node.value)
            elif isinstance(node, Var):
                v = X[:, node.index - 1]
            elif isinstance(node, Param):
                v = P[:, node.index - 1]
            elif isinstance(node, Add):
                v = np.full(m, node.const)
                for k, t in node.terms:
                    v = v + k * vals[id(t)]
            elif isinstance(node, Mul):
                v = np.full(m, node.coef)
                for b, p in node.factors:
                    v = v * _pow(vals[id(b)], p)
            elif isinstance(node, Func):
                v = _apply_func(node.name, vals[id(node.arg)])
            elif isinstance(node, Flat):
                v = _flat_values(node.order, vals[id(node.arg)])
            else:  # pragma: no cover
                raise TypeError(type(node))
            if not np.all(np.isfinite(v)):
                bad = int(np.flatnonzero(~np.isfinite(v))[0])
                raise DomainError(node, X[bad] if P is None else np.concatenate([X[bad], P[bad]]))
            vals[id(node)] = v
    out = [vals[id(e)] for e in exprs]
    if single:
        return [float(v[0]) for v in out]
    return [np.array(v, dtype=float) for v in out]


def evaluate(e, x, params=None):
    """Evaluate ``e`` at a point or a batch of points."""
    return evaluate_many([e], x, params)[0]


# formatting -------------------------------------------------------------------

def _fmt_num(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e: Expr) -> int:
    if isinstance(e, Const):
        return _PREC_ATOM if e.value >= 0 else _PREC_UNARY
    if isinstance(e, Add):
        return _PREC_ADD
    if isinstance(e, Mul):
        if e.coef < 0:
            return _PREC_UNARY
        if e.coef == 1.0 and len(e.factors) == 1 and e.factors[0][1] > 0:
            return _PREC_POW
        return _PREC_MUL
    return _PREC_ATOM


def _wrap(e: Expr, min_prec: int) -> str:
    s = _format(e, 0)
    return f"({s})" if _prec(e) < min_prec else s


def _format_mul_body(coef: float, factors) -> str:
    num = []
    den = []
    for b, p in factors:
        if p > 0:
            num.append((b, p))
        else:
            den.append((b, -p))

    def one(b, p):
        if p == 1.0:
            return _wrap(b, _PREC_MUL + 1)
        return f"{_wrap(b, _PREC_ATOM)}^{_fmt_num(p)}"

    parts = []
    if coef != 1.0 or not num:
        parts.append(_fmt_num(coef))
    parts.extend(one(b, p) for b, p in num)
    s = "*".join(parts)
    for b, p in den:
        s += "/" + (_wrap(b, _PREC_ATOM) if p == 1.0 else f"{_wrap(b, _PREC_ATOM)}^{_fmt_num(p)}")
    return s


def _format(e: Expr, _depth: int) -> str:
    if isinstance(e, Const):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Param):
        return f"p{e.index}"
    if isinstance(e, Func):
        return f"{e.name}({_format(e.arg, 0)})"
    if isinstance(e, Flat):
        return f"flat{e.order}({_format(e.arg, 0)})" if e.order else f"flat({_format(e.arg, 0)})"
    if isinstance(e, Mul):
        if e.coef < 0:
            return "-" + _format_mul_body(-e.coef, e.factors)
        return _format_mul_body(e.coef, e.factors)
    if isinstance(e, Add):
        pieces = []
        for k, t in e.terms:
            body = _format_mul_body(abs(k), [(t, 1.0)]) if not isinstance(t, Mul) else _format_mul_body(abs(k) * t.coef, t.factors)
            pieces.append(("-" if k < 0 else "+", body))
        if e.const != 0.0:
            pieces.append(("-" if e.const < 0 else "+", _fmt_num(abs(e.const))))
        sign, body = pieces[0]
        s = ("-" if sign == "-" else "") + body
        for sign, body in pieces[1:]:
            s += f" {sign} {body}"
        return s
    raise TypeError(type(e))  # pragma: no cover


# parsing ---------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, n: int | None, allow_params: bool):
        self.text = text
        self.n = n
        self.allow_params = allow_params
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value: str):
        kind, v, pos = self.take()
        if v != value:
            found = "end of input" if kind == "end" else repr(v)
            raise ParseError(f"expected {value!r}, found {found}", self.text, pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {v!r}", self.text, pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, _ = self.take()
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, _ = self.take()
            rhs = self.unary()
            e = e * rhs if op == "*" else e / rhs
        return e

    def unary(self) -> Expr:
        kind, v, _ = self.peek()
        if kind == "op" and v in ("+", "-"):
            self.take()
            e = self.unary()
            return -e if v == "-" else e
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            return power(base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, v, pos = self.take()
        if kind == "num":
            return const(float(v))
        if kind == "op" and v == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if self.peek()[1] == "(":
                if v in NONSMOOTH:
                    raise ParseError(f"non-smooth function {v!r} is not allowed", self.text, pos)
                if v not in FUNCTIONS:
                    raise ParseError(f"unknown function {v!r}", self.text, pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                try:
                    return func(v, arg)
                except ExprError as exc:
                    raise ParseError(str(exc), self.text, pos) from None
            m = re.fullmatch(r"x([1-9]\d*)", v)
            if m:
                k = int(m.group(1))
                if self.n is not None and k > self.n:
                    raise ParseError(f"variable {v} out of range for dimension {self.n}", self.text, pos)
                return var(k)
            m = re.fullmatch(r"p([1-9]\d*)", v)
            if m and self.allow_params:
                return param(int(m.group(1)))
            if v in FUNCTIONS or v in NONSMOOTH:
                raise ParseError(f"function {v!r} requires an argument", self.text, pos)
            raise ParseError(f"unknown identifier {v!r}", self.text, pos)
        found = "end of input" if kind == "end" else repr(v)
        raise ParseError(f"unexpected {found}", self.text, pos)


def parse(text: str, n: int) -> Expr:
    """Parse an expression in ``x1..xn`` (see README for the grammar)."""
    if not isinstance(text, str):
        raise TypeError("expression text must be a string")
    return _Parser(text, n, allow_params=False).parse()


def parse_internal(text: str) -> Expr:
    # round-trip helper for pickling: any dimension, parameters allowed
    if "flat" in text:
        raise ExprError("expressions containing flat() cannot be re-parsed")
    return _Parser(text, None, allow_params=True).parse()
