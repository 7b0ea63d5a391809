"""Diffusion operators on a coordinate chart and their Gamma-calculus.

An operator is stored by its coefficient fields,

    L u = sum_ij a^ij d_i d_j u + sum_i b^i d_i u,

with ``a`` a symmetric positive semidefinite matrix field.  The carre du
champ reduces to ``Gamma(u, v) = sum_ij a^ij d_i u d_j v``; Gamma_2 and the
Hessian are built by iterating Gamma exactly as in their definitions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr

log = logging.getLogger(__name__)

PSD_TOL = 1e-10


class DimensionError(ValueError):
    pass


class NotPositiveSemidefinite(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiffusionOperator:
    a: tuple[tuple[Expr, ...], ...]
    b: tuple[Expr, ...]
    name: str = ""

    def __post_init__(self):
        n = len(self.b)
        if len(self.a) != n or any(len(row) != n for row in self.a):
            raise DimensionError(f"a must be {n}x{n} to match b of length {n}")
        a = [[ex.as_expr(v) for v in row] for row in self.a]
        b = tuple(ex.as_expr(v) for v in self.b)
        asym = [(i, j) for i in range(n) for j in range(i + 1, n) if a[i][j] is not a[j][i]]
        if asym:
            log.warning("symmetrizing coefficient matrix; entries %s differ from their transposes", asym)
            for i, j in asym:
                s = 0.5 * (a[i][j] + a[j][i])
                a[i][j] = a[j][i] = s
        for e in [*b, *(v for row in a for v in row)]:
            if ex.max_var(e) > n:
                raise DimensionError(f"coefficient {e} uses a coordinate beyond dimension {n}")
        object.__setattr__(self, "a", tuple(tuple(row) for row in a))
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return len(self.b)

    @classmethod
    def from_strings(cls, a: Sequence[Sequence[str]], b: Sequence[str], name: str = "") -> "DiffusionOperator":
        n = len(b)
        return cls(
            tuple(tuple(ex.parse(s, n) for s in row) for row in a),
            tuple(ex.parse(s, n) for s in b),
            name,
        )

    def coefficient_matrix(self, x) -> np.ndarray:
        """A(x) = (Gamma(x^i, x^j)(x))_ij, checked to be positive semidefinite."""
        n = self.n
        vals = ex.evaluate_many([self.a[i][j] for i in range(n) for j in range(n)], np.asarray(x, float))
        A = np.array(vals, dtype=float).reshape(n, n)
        lam = np.linalg.eigvalsh(A) if n else np.zeros(0)
        if n and lam[0] < -PSD_TOL * (1.0 + np.abs(lam).max()):
            raise NotPositiveSemidefinite(f"coefficient matrix has eigenvalue {lam[0]:.3e} at {x}")
        return A

    def drift(self, x) -> np.ndarray:
        return np.array(ex.evaluate_many(self.b, np.asarray(x, float)), dtype=float)

    def __str__(self):
        label = f"{self.name} " if self.name else ""
        return f"{label}DiffusionOperator(n={self.n}, a={[[str(v) for v in r] for r in self.a]}, b={[str(v) for v in self.b]})"


def euclidean(n: int) -> DiffusionOperator:
    return DiffusionOperator(
        tuple(tuple(ex.ONE if i == j else ex.ZERO for j in range(n)) for i in range(n)),
        tuple(ex.ZERO for _ in range(n)),
        name="euclidean",
    )


def ornstein_uhlenbeck(n: int, rate: float = 1.0) -> DiffusionOperator:
    """Delta - rate * x . grad."""
    e = euclidean(n)
    return DiffusionOperator(e.a, tuple(-rate * xi for xi in ex.coords(n)), name="ornstein-uhlenbeck")


def _check(op: DiffusionOperator, *fields: Expr) -> None:
    for f in fields:
        if not isinstance(f, Expr):
            raise TypeError(f"expected Expr, got {type(f).__name__}")
        if ex.max_var(f) > op.n:
            raise DimensionError(f"{f} uses a coordinate beyond the chart dimension {op.n}")


@lru_cache(maxsize=8192)
def _apply(op: DiffusionOperator, u: Expr) -> Expr:
    n = op.n
    grad = [ex.diff(u, i + 1) for i in range(n)]
    terms = []
    for i in range(n):
        if op.b[i] is not ex.ZERO and grad[i] is not ex.ZERO:
            terms.append(op.b[i] * grad[i])
        for j in range(n):
            if op.a[i][j] is ex.ZERO or grad[i] is ex.ZERO:
                continue
            terms.append(op.a[i][j] * ex.diff(grad[i], j + 1))
    return ex.add(*terms)


def apply_L(op: DiffusionOperator, u: Expr) -> Expr:
    """L u."""
    _check(op, u)
    return _apply(op, u)


@lru_cache(maxsize=8192)
def _gamma(op: DiffusionOperator, u: Expr, v: Expr) -> Expr:
    n = op.n
    du = [ex.diff(u, i + 1) for i in range(n)]
    dv = du if v is u else [ex.diff(v, i + 1) for i in range(n)]
    terms = []
    for i in range(n):
        if du[i] is ex.ZERO:
            continue
        for j in range(n):
            if op.a[i][j] is ex.ZERO or dv[j] is ex.ZERO:
                continue
            terms.append(op.a[i][j] * du[i] * dv[j])
    return ex.add(*terms)


def gamma(op: DiffusionOperator, u: Expr, v: Expr | None = None) -> Expr:
    """Carre du champ Gamma(u, v); ``Gamma(u)`` when ``v`` is omitted."""
    v = u if v is None else v
    _check(op, u, v)
    # canonical argument order so Gamma(u, v) and Gamma(v, u) share one node
    if v._id < u._id:
        u, v = v, u
    return _gamma(op, u, v)


def gamma_definition(op: DiffusionOperator, u: Expr, v: Expr | None = None) -> Expr:
    """Gamma from its defining identity 1/2 [L(uv) - u Lv - v Lu]."""
    v = u if v is None else v
    _check(op, u, v)
    return 0.5 * (_apply(op, u * v) - u * _apply(op, v) - v * _apply(op, u))


@lru_cache(maxsize=8192)
def _gamma2(op: DiffusionOperator, u: Expr, v: Expr) -> Expr:
    Lu = _apply(op, u)
    Lv = Lu if v is u else _apply(op, v)
    return 0.5 * (_apply(op, gamma(op, u, v)) - gamma(op, u, Lv) - gamma(op, v, Lu))


def gamma2(op: DiffusionOperator, u: Expr, v: Expr | None = None) -> Expr:
    """Iterated carre du champ 1/2 [L Gamma(u, v) - Gamma(u, Lv) - Gamma(v, Lu)]."""
    v = u if v is None else v
    _check(op, u, v)
    if v._id < u._id:
        u, v = v, u
    return _gamma2(op, u, v)


@lru_cache(maxsize=16384)
def _hessian(op: DiffusionOperator, f: Expr, g: Expr, h: Expr) -> Expr:
    return 0.5 * (
        gamma(op, g, gamma(op, f, h)) + gamma(op, h, gamma(op, f, g)) - gamma(op, f, gamma(op, g, h))
    )


def hessian(op: DiffusionOperator, f: Expr, g: Expr, h: Expr) -> Expr:
    """H_f(g, h) = 1/2 [Gamma(g, Gamma(f,h)) + Gamma(h, Gamma(f,g)) - Gamma(f, Gamma(g,h))]."""
    _check(op, f, g, h)
    if h._id < g._id:
        g, h = h, g
    return _hessian(op, f, g, h)


@lru_cache(maxsize=4096)
def hessian_exprs(op: DiffusionOperator, f: Expr) -> tuple[tuple[Expr, ...], ...]:
    """Symbolic coordinate Hessian matrix (H_f(x^i, x^j))_ij."""
    _check(op, f)
    xs = ex.coords(op.n)
    rows = [[None] * op.n for _ in range(op.n)]
    for i in range(op.n):
        for j in range(i, op.n):
            rows[i][j] = rows[j][i] = hessian(op, f, xs[i], xs[j])
    return tuple(tuple(r) for r in rows)


def hessian_matrix(op: DiffusionOperator, f: Expr, x) -> np.ndarray:
    """Numeric coordinate Hessian at ``x``; H_f(g,h)(x) = dg(x)^T H dh(x)."""
    H = hessian_exprs(op, f)
    n = op.n
    vals = ex.evaluate_many([H[i][j] for i in range(n) for j in range(n)], np.asarray(x, float))
    return np.array(vals, dtype=float).reshape(n, n)


class ChainRuleSides(NamedTuple):
    L_lhs: Expr
    L_rhs: Expr
    H_lhs: Expr
    H_rhs: Expr


def chain_rules_Llog(op: DiffusionOperator, f: Expr, p: float, u: Expr | None = None) -> ChainRuleSides:
    """Both sides of
    (1/p) f^-p L f^p = L log f + p Gamma(log f)  and
    (1/p) f^-p H_{f^p}(u,u) = H_{log f}(u,u) + p Gamma(log f, u)^2.
    """
    if p == 0:
        raise ValueError("p must be nonzero")
    u = ex.var(1) if u is None else u
    _check(op, f, u)
    fp = ex.power(f, p)
    lf = ex.log(f)
    scale = ex.power(f, -p) / p
    return ChainRuleSides(
        scale * apply_L(op, fp),
        apply_L(op, lf) + p * gamma(op, lf),
        scale * hessian(op, fp, u, u),
        hessian(op, lf, u, u) + p * ex.power(gamma(op, lf, u), 2),
    )


# Riemannian metrics ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RiemannianSpec:
    g: tuple[tuple[Expr, ...], ...]

    @property
    def n(self) -> int:
        return len(self.g)

    @classmethod
    def from_strings(cls, g: Sequence[Sequence[str]]) -> "RiemannianSpec":
        n = len(g)
        if any(len(row) != n for row in g):
            raise DimensionError("metric must be square")
        return cls(tuple(tuple(ex.parse(s, n) for s in row) for row in g))

    def matrix(self, x) -> np.ndarray:
        n = self.n
        vals = ex.evaluate_many([self.g[i][j] for i in range(n) for j in range(n)], np.asarray(x, float))
        return np.array(vals, dtype=float).reshape(n, n)


def conformal_metric(n: int, factor: Expr) -> RiemannianSpec:
    """factor * Euclidean metric."""
    return RiemannianSpec(tuple(tuple(factor if i == j else ex.ZERO for j in range(n)) for i in range(n)))


def symbolic_det(m: Sequence[Sequence[Expr]]) -> Expr:
    n = len(m)
    if n == 0:
        return ex.ONE
    if n == 1:
        return m[0][0]
    if n == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    terms = []
    for j in range(n):
        if m[0][j] is ex.ZERO:
            continue
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        sign = 1.0 if j % 2 == 0 else -1.0
        terms.append(sign * m[0][j] * symbolic_det(minor))
    return ex.add(*terms)


def symbolic_inverse(m: Sequence[Sequence[Expr]]) -> tuple[tuple[Expr, ...], ...]:
    """Adjugate over determinant; intended for small charts (n <= 4)."""
    n = len(m)
    det = symbolic_det(m)
    inv_det = ex.power(det, -1.0)
    out = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:i] + row[i + 1:] for k, row in enumerate(m) if k != j]
            sign = 1.0 if (i + j) % 2 == 0 else -1.0
            out[i][j] = sign * symbolic_det(minor) * inv_det
    return tuple(tuple(r) for r in out)


def laplace_beltrami(spec: RiemannianSpec) -> DiffusionOperator:
    """Delta_g u = |g|^{-1/2} d_i(|g|^{1/2} g^ij d_j u) as coefficient fields.

    a = g^{-1}; b^j = sum_i d_i g^ij + (1/2) g^ij d_i log det g.
    """
    n = spec.n
    g = [list(r) for r in spec.g]
    if any(g[i][j] is not g[j][i] for i in range(n) for j in range(n)):
        g = [[0.5 * (g[i][j] + g[j][i]) for j in range(n)] for i in range(n)]
    ginv = symbolic_inverse(g)
    det = symbolic_det(g)
    dlogdet = [ex.diff(det, i + 1) / det for i in range(n)]
    b = []
    for j in range(n):
        b.append(ex.add(*[ex.diff(ginv[i][j], i + 1) + 0.5 * ginv[i][j] * dlogdet[i] for i in range(n)]))
    return DiffusionOperator(ginv, tuple(b), name="laplace-beltrami")


def check_metric(spec: RiemannianSpec, x) -> None:
    G = spec.matrix(x)
    lam = np.linalg.eigvalsh(G)
    if lam[0] <= PSD_TOL * (1.0 + abs(lam[-1])):
        raise np.linalg.LinAlgError(f"metric is singular or indefinite at {x} (min eigenvalue {lam[0]:.3e})")


# normal coordinates ------------------------------------------------------------

class NormalCheck(NamedTuple):
    ok: bool
    residual: float
    gamma_residual: float
    hessian_residual: float
    L_residual: float


def check_normal_coordinates(op: DiffusionOperator, fs: Sequence[Expr], x, tol: float = 1e-8) -> NormalCheck:
    """Test Gamma(f_i,f_j)(x) = delta_ij, H_{f_i}(f_j,f_k)(x) = 0, L f_i(x) = 0."""
    n = len(fs)
    if n != op.n:
        raise DimensionError(f"need {op.n} functions, got {n}")
    _check(op, *fs)
    G = [gamma(op, fs[i], fs[j]) for i in range(n) for j in range(n)]
    Hs = [hessian(op, fs[i], fs[j], fs[k]) for i in range(n) for j in range(n) for k in range(n)]
    Ls = [apply_L(op, f) for f in fs]
    vals = ex.evaluate_many(G + Hs + Ls, np.asarray(x, float))
    g = np.array(vals[: n * n]).reshape(n, n) - np.eye(n)
    h = np.array(vals[n * n: n * n + n ** 3])
    lv = np.array(vals[n * n + n ** 3:])
    rg = float(np.abs(g).max(initial=0.0))
    rh = float(np.abs(h).max(initial=0.0))
    rl = float(np.abs(lv).max(initial=0.0))
    res = max(rg, rh, rl)
    return NormalCheck(res <= tol, res, rg, rh, rl)


def normal_coordinates(op: DiffusionOperator, x) -> list[Expr]:
    """Functions f_i = W (y - x) + quadratic correction forming a normal system at ``x``.

    The linear part whitens A(x); the quadratic part cancels the Hessians
    H_{f_i}(f_j, f_k)(x).  L f_i(x) vanishes only when tr(A^-1 H_{x^k}) = L x^k
    at ``x`` (true for Laplace-Beltrami operators); the caller checks it.
    """
    x = np.asarray(x, float)
    n = op.n
    A = op.coefficient_matrix(x)
    lam, U = np.linalg.eigh(A)
    if lam[0] <= PSD_TOL * (1.0 + lam[-1]):
        raise np.linalg.LinAlgError("normal coordinates need a nondegenerate point")
    W = np.diag(lam ** -0.5) @ U.T
    Ainv = np.linalg.inv(A)
    xs = ex.coords(n)
    Hk = [hessian_matrix(op, xk, x) for xk in xs]
    dy = [xs[k] - float(x[k]) for k in range(n)]
    out = []
    for i in range(n):
        Hi = sum(W[i, k] * Hk[k] for k in range(n))
        C = -Ainv @ Hi @ Ainv
        lin = ex.add(*[float(W[i, k]) * dy[k] for k in range(n)])
        quad = ex.add(*[0.5 * float(C[k, l]) * dy[k] * dy[l] for k in range(n) for l in range(n) if C[k, l] != 0.0])
        out.append(lin + quad)
    return out


def is_constant(e: Expr, n: int) -> bool:
    """Symbolically constant on the chart (all first partials fold to zero)."""
    return all(ex.diff(e, i + 1) is ex.ZERO for i in range(n))


def finite_or_raise(v: float, what: str) -> float:
    if not math.isfinite(v):
        raise ArithmeticError(f"{what} is not finite")
    return v
