"""Transformed operators L' = f^2 L + f sum_i g_i Gamma(h_i, .) and their curvature constants.

Every inner sup/inf over test functions u in the K' formulas is a ratio of
quadratic forms in du(x) against A(x), so it is evaluated exactly as an
extreme generalized eigenvalue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import expr as ex
from .curvature import (
    INF,
    check_N,
    inv,
    max_generalized_eigenvalue,
    min_generalized_eigenvalue,
    point_frame,
    ricci_form_matrix,
    ricci_from_frame,
)
from .diffusion import (
    DiffusionOperator,
    apply_L,
    euclidean,
    gamma,
    gamma2,
    hessian,
    hessian_exprs,
    is_constant,
)
from .expr import Expr

KINDS = ("general", "time_change", "drift", "metric", "conformal", "doob", "time_drift")


class TransformError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransformSpec:
    kind: str
    f: Expr
    pairs: tuple[tuple[Expr, Expr], ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TransformError(f"unknown transform kind {self.kind!r}")
        object.__setattr__(self, "f", ex.as_expr(self.f))
        object.__setattr__(self, "pairs", tuple((ex.as_expr(g), ex.as_expr(h)) for g, h in self.pairs))

    # named specializations, each expressed through (f, g_i, h_i)
    @classmethod
    def general(cls, f, pairs=()) -> "TransformSpec":
        return cls("general", f, tuple(pairs))

    @classmethod
    def time_change(cls, f) -> "TransformSpec":
        return cls("time_change", f)

    @classmethod
    def drift(cls, h) -> "TransformSpec":
        return cls("drift", ex.ONE, ((ex.ONE, h),), {"h": ex.as_expr(h)})

    @classmethod
    def drift_field(cls, pairs) -> "TransformSpec":
        return cls("drift", ex.ONE, tuple(pairs))

    @classmethod
    def metric(cls, f) -> "TransformSpec":
        # f^2 L + Gamma(f^2, .) = f^2 L + f * 2 * Gamma(f, .)
        return cls("metric", f, ((ex.const(2.0), f),))

    @classmethod
    def conformal(cls, N: float, f=None, w=None) -> "TransformSpec":
        """f^2 L - (N-2)/2 Gamma(f^2, .); with w given, f = exp(-w)."""
        N = check_N(N)
        if math.isinf(N):
            raise TransformError("conformal transformation needs finite N")
        if (f is None) == (w is None):
            raise TransformError("give exactly one of f or w")
        params = {"N": N}
        if w is not None:
            params["w"] = ex.as_expr(w)
            f = ex.exp(-ex.as_expr(w))
        return cls("conformal", f, ((ex.const(-(N - 2.0)), f),), params)

    @classmethod
    def doob(cls, rho) -> "TransformSpec":
        """(1/rho) L(rho u) = L u + Gamma(2 log rho, u) when L rho = 0."""
        rho = ex.as_expr(rho)
        return cls("doob", ex.ONE, ((ex.ONE, 2.0 * ex.log(rho)),), {"rho": rho})

    @classmethod
    def time_drift(cls, f, h) -> "TransformSpec":
        return cls("time_drift", f, ((ex.as_expr(f), h),), {"h": ex.as_expr(h)})

    def validate(self, op: DiffusionOperator, grid, tol: float = 1e-9) -> None:
        X = as_grid(grid, op.n)
        fv = batch([self.f], X)[0]
        if np.any(fv <= 0):
            i = int(np.flatnonzero(fv <= 0)[0])
            raise TransformError(f"f = {fv[i]:.3e} is not positive at {X[i].tolist()}")
        if self.kind == "doob":
            rho = self.params["rho"]
            Lr = apply_L(op, rho)
            rv, lv = batch([rho, Lr], X)
            if np.any(rv <= 0):
                raise TransformError("rho must be positive")
            if Lr is not ex.ZERO and np.abs(lv).max() > tol * (1.0 + np.abs(rv).max()):
                raise TransformError(f"rho is not L-harmonic: max |L rho| = {np.abs(lv).max():.3e}")


def transform_operator(op: DiffusionOperator, spec: TransformSpec, grid=None) -> DiffusionOperator:
    """a' = f^2 a;  b' = f^2 b + f sum_i g_i a dh_i."""
    if grid is not None:
        spec.validate(op, grid)
    n = op.n
    f2 = ex.power(spec.f, 2)
    a = tuple(tuple(f2 * op.a[i][j] if op.a[i][j] is not ex.ZERO else ex.ZERO for j in range(n)) for i in range(n))
    b = []
    for k in range(n):
        terms = [f2 * op.b[k]]
        for g, h in spec.pairs:
            ah = ex.add(*[op.a[k][j] * ex.diff(h, j + 1) for j in range(n)])
            terms.append(spec.f * g * ah)
        b.append(ex.add(*terms))
    return DiffusionOperator(a, tuple(b), name=f"{spec.kind}({op.name})" if op.name else spec.kind)


def doob_operator_direct(op: DiffusionOperator, rho: Expr, u: Expr) -> Expr:
    """(1/rho) L(rho u), for cross-checking the drift realization."""
    return apply_L(op, rho * u) / rho


# grid helpers ------------------------------------------------------------------------

def as_grid(grid, n: int) -> np.ndarray:
    X = np.asarray(grid, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if n == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != n or X.shape[0] == 0:
        raise ValueError(f"grid must be a nonempty list of {n}-dimensional points")
    return X


def batch(exprs: Sequence[Expr], X: np.ndarray) -> list[np.ndarray]:
    out = ex.evaluate_many(list(exprs), X)
    return [np.broadcast_to(np.asarray(v, float), (X.shape[0],)).copy() for v in out]


def _K_values(K, X: np.ndarray) -> np.ndarray:
    if isinstance(K, Expr):
        return batch([K], X)[0]
    return np.full(X.shape[0], float(K))


def _grad(e: Expr, n: int, X: np.ndarray) -> np.ndarray:
    return np.stack(batch([ex.diff(e, i + 1) for i in range(n)], X), axis=1)


def _coef(op: DiffusionOperator, X: np.ndarray) -> np.ndarray:
    return np.stack([op.coefficient_matrix(x) for x in X])


def _hess(op: DiffusionOperator, h: Expr, X: np.ndarray) -> np.ndarray:
    n = op.n
    H = hessian_exprs(op, h)
    vals = batch([H[i][j] for i in range(n) for j in range(n)], X)
    return np.stack(vals, axis=1).reshape(X.shape[0], n, n)


def _sym(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * (np.outer(p, q) + np.outer(q, p))


def _gap_inverse(N: float, Np: float, allow_equal: bool = False) -> float:
    """1/(N' - N) with the conventions N' = inf -> 0 and (inf, inf) -> 0."""
    N, Np = check_N(N), check_N(Np)
    if math.isinf(Np):
        return 0.0
    if Np > N:
        return 1.0 / (Np - N)
    if Np == N and allow_equal:
        return 0.0
    raise TransformError(f"need N' > N (got N = {N}, N' = {Np})")


def _require_constant_f(f: Expr, n: int, N: float) -> None:
    if math.isinf(N) and not is_constant(f, n):
        raise TransformError("N = inf is only admissible with constant f")


class KPrime(NamedTuple):
    value: float
    pointwise: tuple[float, ...]
    N_star: float | None = None


def _result(vals, N_star=None) -> KPrime:
    vals = tuple(float(v) for v in vals)
    return KPrime(min(vals), vals, N_star)


# K' formulas ---------------------------------------------------------------------------

def kprime_general(op: DiffusionOperator, spec: TransformSpec, K, N: float, Np: float, grid) -> KPrime:
    """BE constant of L' from the general corollary:

    K' = f^2 K + 1/2 L f^2 - 2 Gamma(f) + sum g_i Gamma(h_i, f)
         + inf_u Gamma(u)^-1 [ -(1/(N'-N)) ((N-2) Gamma(f,u) + sum g_i Gamma(h_i,u))^2
                               - (N-2) Gamma(f,u)^2 - sum f g_i H_{h_i}(u,u)
                               - sum Gamma(f g_i, u) Gamma(h_i, u) ].
    """
    n = op.n
    N = check_N(N)
    X = as_grid(grid, n)
    spec.validate(op, X)
    conformal_equal = spec.kind == "conformal" and spec.params.get("N") == N
    ig = _gap_inverse(N, Np, allow_equal=conformal_equal)
    _require_constant_f(spec.f, n, N)
    f = spec.f
    nm2 = 0.0 if math.isinf(N) else N - 2.0
    f2 = ex.power(f, 2)
    scal = [f, apply_L(op, f2), gamma(op, f)] + [g * gamma(op, h, f) for g, h in spec.pairs] + [g for g, _ in spec.pairs]
    vals = batch(scal, X)
    fv, Lf2, Gf = vals[0], vals[1], vals[2]
    r = len(spec.pairs)
    ghf = vals[3: 3 + r]
    gv = vals[3 + r:]
    Kv = _K_values(K, X)
    A = _coef(op, X)
    df = _grad(f, n, X)
    dh = [_grad(h, n, X) for _, h in spec.pairs]
    dfg = [_grad(f * g, n, X) for g, _ in spec.pairs]
    Hh = [_hess(op, h, X) for _, h in spec.pairs]
    out = []
    for p in range(X.shape[0]):
        Ap = A[p]
        pf = Ap @ df[p]
        c = nm2 * pf
        Q = -nm2 * np.outer(pf, pf)
        for i in range(r):
            ph = Ap @ dh[i][p]
            c = c + gv[i][p] * ph
            Q = Q - fv[p] * gv[i][p] * Hh[i][p] - _sym(Ap @ dfg[i][p], ph)
        Q = Q - ig * np.outer(c, c)
        base = fv[p] ** 2 * Kv[p] + 0.5 * Lf2[p] - 2.0 * Gf[p] + sum(ghf[i][p] for i in range(r))
        out.append(base + min_generalized_eigenvalue(Q, Ap))
    return _result(out)


def n_star(N: float, Np: float) -> float:
    """2 + [(N-2)(N'-2)]_+ / (N'-N); max(N, 2) for N' = inf."""
    N, Np = check_N(N), check_N(Np)
    if math.isinf(Np):
        return max(N, 2.0)
    if not Np > N:
        raise TransformError(f"need N' > N (got N = {N}, N' = {Np})")
    return 2.0 + max((N - 2.0) * (Np - 2.0), 0.0) / (Np - N)


def kprime_time_change(op: DiffusionOperator, f: Expr, K, N: float, Np: float, grid) -> KPrime:
    """K' = f^2 K + 1/2 L f^2 - N* Gamma(f)."""
    n = op.n
    N = check_N(N)
    _require_constant_f(f, n, N)
    ns = INF if math.isinf(N) else n_star(N, Np)
    if math.isinf(N):
        _gap_inverse(N, Np)
    X = as_grid(grid, n)
    TransformSpec.time_change(f).validate(op, X)
    fv, Lf2, Gf = batch([f, apply_L(op, ex.power(f, 2)), gamma(op, f)], X)
    Kv = _K_values(K, X)
    corr = np.zeros_like(Gf) if math.isinf(ns) else ns * Gf
    return _result(fv ** 2 * Kv + 0.5 * Lf2 - corr, ns)


def kprime_drift(op: DiffusionOperator, pairs, K, N: float, Np: float, grid) -> KPrime:
    """K' = K - sup_u Gamma(u)^-1 [ (DZ)(u,u) + (Zu)^2/(N'-N) ],
    Zu = sum g_i Gamma(h_i, u),  DZ(u,u) = sum g_i H_{h_i}(u,u) + Gamma(g_i,u) Gamma(h_i,u)."""
    n = op.n
    ig = _gap_inverse(N, Np)
    X = as_grid(grid, n)
    pairs = [(ex.as_expr(g), ex.as_expr(h)) for g, h in pairs]
    Kv = _K_values(K, X)
    A = _coef(op, X)
    gv = batch([g for g, _ in pairs], X) if pairs else []
    dg = [_grad(g, n, X) for g, _ in pairs]
    dh = [_grad(h, n, X) for _, h in pairs]
    Hh = [_hess(op, h, X) for _, h in pairs]
    out = []
    for p in range(X.shape[0]):
        Ap = A[p]
        z = np.zeros(n)
        D = np.zeros((n, n))
        for i in range(len(pairs)):
            ph = Ap @ dh[i][p]
            z = z + gv[i][p] * ph
            D = D + gv[i][p] * Hh[i][p] + _sym(Ap @ dg[i][p], ph)
        out.append(Kv[p] - max_generalized_eigenvalue(D + ig * np.outer(z, z), Ap))
    return _result(out)


def conformal_kprime(op: DiffusionOperator, f: Expr, K, N: float, grid) -> KPrime:
    """K~ = f^2 K + f L f - (N-1) Gamma(f) + inf_u (N-2) f H_f(u,u) / Gamma(u)."""
    n = op.n
    N = check_N(N)
    if math.isinf(N):
        raise TransformError("conformal constant needs finite N")
    X = as_grid(grid, n)
    TransformSpec.conformal(N, f=f).validate(op, X)
    fv, Lf, Gf = batch([f, apply_L(op, f), gamma(op, f)], X)
    Kv = _K_values(K, X)
    A = _coef(op, X)
    Hf = _hess(op, f, X)
    out = []
    for p in range(X.shape[0]):
        inner = min_generalized_eigenvalue((N - 2.0) * fv[p] * Hf[p], A[p])
        out.append(fv[p] ** 2 * Kv[p] + fv[p] * Lf[p] - (N - 1.0) * Gf[p] + inner)
    return _result(out)


def _mms_admissible(v: Expr, w: Expr, N: float, Np: float, X: np.ndarray, n: int) -> float:
    N, Np = check_N(N), check_N(Np)
    w_zero = w is ex.ZERO or (is_constant(w, n) and np.all(batch([w], X)[0] == 0))
    if math.isinf(N):
        if not (math.isinf(Np) and w_zero):
            raise TransformError("N = inf requires w = 0 and N' = inf")
        return 0.0
    if Np == N:
        wv, vv = batch([w, v], X)
        if np.abs(wv - vv / N).max() > 1e-12 * (1.0 + np.abs(vv).max()):
            raise TransformError("N' = N requires w = v/N")
        return 0.0
    return _gap_inverse(N, Np)


def mms_kprime(op: DiffusionOperator, v: Expr, w: Expr, K, N: float, Np: float, grid) -> KPrime:
    """Constant for m' = e^v m and metric weighted by e^w:

    K' = inf e^{-2w} [ K - L w + Gamma(w, 2w - v)
          - sup_u Gamma(u)^-1 ( Gamma(v - N w, u)^2/(N'-N) + (N-2) Gamma(w,u)^2
                                + H_{v-2w}(u,u) - 2 Gamma(w,u) Gamma(v-2w,u) ) ].
    """
    n = op.n
    X = as_grid(grid, n)
    v, w = ex.as_expr(v), ex.as_expr(w)
    ig = _mms_admissible(v, w, N, Np, X, n)
    finite = not math.isinf(N)
    h = v - 2.0 * w
    wv, Lw, Gwh = batch([w, apply_L(op, w), gamma(op, w, -1.0 * h)], X)
    Kv = _K_values(K, X)
    A = _coef(op, X)
    dw = _grad(w, n, X)
    dh = _grad(h, n, X)
    dvNw = _grad(v - N * w, n, X) if finite else _grad(v, n, X)
    Hh = _hess(op, h, X)
    out = []
    for p in range(X.shape[0]):
        Ap = A[p]
        pw = Ap @ dw[p]
        ph = Ap @ dh[p]
        Q = Hh[p] - 2.0 * _sym(pw, ph)
        if finite:
            q = Ap @ dvNw[p]
            Q = Q + ig * np.outer(q, q) + (N - 2.0) * np.outer(pw, pw)
        sup = max_generalized_eigenvalue(Q, Ap)
        out.append(math.exp(-2.0 * wv[p]) * (Kv[p] - Lw[p] + Gwh[p] - sup))
    return _result(out)


def mms_kprime_no_measure(op: DiffusionOperator, w: Expr, K, N: float, Np: float, grid) -> KPrime:
    """v = 0 form in f = e^{-w}:
    K' = inf [ K f^2 + 1/2 L f^2 - sup_u Gamma(u)^-1 ( (N'N/(N'-N) - 2) Gamma(f,u)^2 + H_{f^2}(u,u) ) ]."""
    n = op.n
    N, Np = check_N(N), check_N(Np)
    if math.isinf(N):
        raise TransformError("finite N required")
    X = as_grid(grid, n)
    coef = N if math.isinf(Np) else Np * N / (Np - N) if Np > N else None
    if coef is None:
        raise TransformError("need N' > N")
    f = ex.exp(-ex.as_expr(w))
    f2 = ex.power(f, 2)
    fv, Lf2 = batch([f, apply_L(op, f2)], X)
    Kv = _K_values(K, X)
    A = _coef(op, X)
    df = _grad(f, n, X)
    H = _hess(op, f2, X)
    out = []
    for p in range(X.shape[0]):
        pf = A[p] @ df[p]
        sup = max_generalized_eigenvalue((coef - 2.0) * np.outer(pf, pf) + H[p], A[p])
        out.append(Kv[p] * fv[p] ** 2 + 0.5 * Lf2[p] - sup)
    return _result(out)


def mms_spec(v: Expr, w: Expr) -> TransformSpec:
    """The transform realizing the smooth mms change: f = e^{-w}, g = f, h = v - 2w."""
    f = ex.exp(-ex.as_expr(w))
    return TransformSpec("time_drift", f, ((f, ex.as_expr(v) - 2.0 * ex.as_expr(w)),))


# conformal identity ----------------------------------------------------------------------

class IdentityCheck(NamedTuple):
    max_residual: float
    max_scaled_residual: float
    lhs: tuple[float, ...]
    rhs: tuple[float, ...]

    def ok(self, tol: float) -> bool:
        return self.max_scaled_residual <= tol


def _diff_scaled(l: float, r: float) -> tuple[float, float]:
    if l == r:
        return 0.0, 0.0
    if not (math.isfinite(l) and math.isfinite(r)):
        return INF, INF
    d = abs(l - r)
    return d, d / (1.0 + abs(l) + abs(r))


def conformal_ricci_identity(op: DiffusionOperator, w: Expr, N: float, u: Expr, grid) -> IdentityCheck:
    """Compare R~_N(u) computed on e^{-2w}(L + (N-2) Gamma(w, .)) with
    e^{-4w}(R_N(u) + [-Lw - (N-2) Gamma(w)] Gamma(u) - (N-2) H_w(u,u) + (N-2) Gamma(w,u)^2)."""
    n = op.n
    N = check_N(N)
    X = as_grid(grid, n)
    spec = TransformSpec.conformal(N, w=w)
    op2 = transform_operator(op, spec)
    nm2 = N - 2.0
    wv, Lw, Gw, Gu, Hw, Gwu = batch(
        [w, apply_L(op, w), gamma(op, w), gamma(op, u), hessian(op, w, u, u), gamma(op, w, u)], X
    )
    L, R, worst, worst_s = [], [], 0.0, 0.0
    for p, x in enumerate(X):
        lhs = ricci_from_frame(point_frame(op2, x, u), N)
        RN = ricci_from_frame(point_frame(op, x, u), N)
        rhs = math.exp(-4 * wv[p]) * (RN + (-Lw[p] - nm2 * Gw[p]) * Gu[p] - nm2 * Hw[p] + nm2 * Gwu[p] ** 2)
        d, ds = _diff_scaled(lhs, rhs)
        worst, worst_s = max(worst, d), max(worst_s, ds)
        L.append(lhs)
        R.append(rhs)
    return IdentityCheck(worst, worst_s, tuple(L), tuple(R))


def conformal_ricci_form(op: DiffusionOperator, w: Expr, x, N: float) -> np.ndarray:
    """Matrix of R~_N on linear u assembled from the untransformed operator:
    e^{-4w} [ M - (Lw + (N-2) Gamma(w)) A - (N-2)(H^w - (A dw)(A dw)^T) ]."""
    n = op.n
    x = np.asarray(x, float)
    form = ricci_form_matrix(op, x, N)
    if form.minus_infinity:
        raise TransformError("N-Ricci form is -inf at this point")
    wv, Lw, Gw = ex.evaluate_many([w, apply_L(op, w), gamma(op, w)], x)
    A = form.A
    pw = A @ np.array(ex.evaluate_many([ex.diff(w, i + 1) for i in range(n)], x))
    Hw = _hess(op, w, x[None, :])[0]
    nm2 = N - 2.0
    return math.exp(-4 * wv) * (form.matrix - (Lw + nm2 * Gw) * A - nm2 * (Hw - np.outer(pw, pw)))


# general transformation bound -------------------------------------------------------------

class BoundCheck(NamedTuple):
    min_scaled_residual: float
    records: tuple  # (point, lhs, rhs, residual, scale)
    skipped: tuple

    def ok(self, tol: float) -> bool:
        return self.min_scaled_residual >= -tol


def transform_bound_rhs(op: DiffusionOperator, spec: TransformSpec, N: float, Np: float, u: Expr, x) -> float:
    """Lower bound for R'_{N'}(u)(x):

    f^4 R_N(u) - (1/(N'-N)) ((N-2)/2 Gamma(f^2,u) + sum f g_i Gamma(h_i,u))^2
    + 1/2 (f^2 L f^2 - Gamma(f^2)) Gamma(u) - (N-2)/4 Gamma(f^2,u)^2 - sum f^3 g_i H_{h_i}(u,u)
    + 1/2 sum f g_i Gamma(h_i, f^2) Gamma(u) - sum f^2 Gamma(f g_i, u) Gamma(h_i, u)
    """
    N = check_N(N)
    conformal_equal = spec.kind == "conformal" and spec.params.get("N") == N
    ig = _gap_inverse(N, Np, allow_equal=conformal_equal)
    _require_constant_f(spec.f, op.n, N)
    nm2 = 0.0 if math.isinf(N) else N - 2.0
    f = spec.f
    f2 = ex.power(f, 2)
    exprs = [f, gamma(op, u), apply_L(op, f2), gamma(op, f2), gamma(op, f2, u)]
    for g, h in spec.pairs:
        exprs += [g, gamma(op, h, u), hessian(op, h, u, u), gamma(op, h, f2), gamma(op, f * g, u)]
    v = ex.evaluate_many(exprs, np.asarray(x, float))
    fv, Gu, Lf2, Gf2, Gf2u = v[:5]
    s = nm2 / 2.0 * Gf2u
    rest = 0.5 * (fv ** 2 * Lf2 - Gf2) * Gu - nm2 / 4.0 * Gf2u ** 2
    for i in range(len(spec.pairs)):
        g, Ghu, Hh, Ghf2, Gfgu = v[5 + 5 * i: 10 + 5 * i]
        s += fv * g * Ghu
        rest += -fv ** 3 * g * Hh + 0.5 * fv * g * Ghf2 * Gu - fv ** 2 * Gfgu * Ghu
    RN = ricci_n_cached(op, u, x, N)
    if RN == -INF:
        return -INF
    return fv ** 4 * RN - ig * s * s + rest


def ricci_n_cached(op, u, x, N):
    return ricci_from_frame(point_frame(op, x, u), N)


def verify_transform_bound(
    op: DiffusionOperator, spec: TransformSpec, N: float, Np: float, u_tests: Sequence[Expr], grid
) -> BoundCheck:
    """R'_{N'}(u) computed on the transformed operator minus the assembled lower bound."""
    X = as_grid(grid, op.n)
    spec.validate(op, X)
    op2 = transform_operator(op, spec)
    records, skipped = [], []
    worst = INF
    for u in u_tests:
        for x in X:
            pf2 = point_frame(op2, x, u)
            if pf2.rank < op.n:
                skipped.append((tuple(x), str(u), "degenerate point"))
                continue
            lhs = ricci_from_frame(pf2, Np)
            rhs = transform_bound_rhs(op, spec, N, Np, u, x)
            if rhs == -INF:
                res, scale = INF, 1.0
            elif lhs == -INF:
                res, scale = -INF, 1.0
            else:
                res, scale = lhs - rhs, 1.0 + abs(lhs) + abs(rhs)
            worst = min(worst, res / scale)
            records.append((tuple(float(t) for t in x), str(u), lhs, rhs, res, scale))
    return BoundCheck(worst, tuple(records), tuple(skipped))


def time_change_bound_forms(op: DiffusionOperator, w: Expr, N: float, Np: float, u: Expr, x) -> tuple[float, float]:
    """Two forms of the time-change bound with f = e^{-w}:
    f^4 R_N - c f^2 Gamma(f,u)^2 + 1/2 (f^2 L f^2 - Gamma(f^2)) Gamma(u)  and
    e^{-4w} [R_N - Lw Gamma(u) - c Gamma(w,u)^2],   c = (N-2)(N'-2)/(N'-N)."""
    N, Np = check_N(N), check_N(Np)
    if math.isinf(N):
        raise TransformError("finite N required")
    c = (N - 2.0) if math.isinf(Np) else (N - 2.0) * (Np - 2.0) / (Np - N)
    f = ex.exp(-w)
    f2 = ex.power(f, 2)
    x = np.asarray(x, float)
    fv, Gfu, Lf2, Gf2, Gu, wv, Lw, Gwu = ex.evaluate_many(
        [f, gamma(op, f, u), apply_L(op, f2), gamma(op, f2), gamma(op, u), w, apply_L(op, w), gamma(op, w, u)], x
    )
    RN = ricci_n_cached(op, u, x, N)
    first = fv ** 4 * RN - c * fv ** 2 * Gfu ** 2 + 0.5 * (fv ** 2 * Lf2 - Gf2) * Gu
    second = math.exp(-4 * wv) * (RN - Lw * Gu - c * Gwu ** 2)
    return first, second


# falsifier for the conformal constants ------------------------------------------------------

CORRECT = "correct"
PAIRS = {
    CORRECT: lambda N: (-(N - 2.0), N - 2.0),
    "first_claim": lambda N: (-N, 2.0 * (N - 2.0)),
    "second_claim": lambda N: (-(N - 4.0), N),
}


def _monomials(n: int, degree: int):
    from itertools import combinations_with_replacement

    out = []
    for d in range(1, degree + 1):
        out += list(combinations_with_replacement(range(n), d))
    return out


def _poly(monos, offset: int) -> Expr:
    xs = ex.coords(max(max(m) for m in monos) + 1)
    terms = []
    for k, m in enumerate(monos):
        t = ex.param(offset + k + 1)
        for i in m:
            t = t * xs[i]
        terms.append(t)
    return ex.add(*terms)


def _poly_string(monos, coef) -> str:
    parts = []
    for m, c in zip(monos, coef):
        parts.append(f"({c!r})*" + "*".join(f"x{i + 1}" for i in m))
    return " + ".join(parts)


class Witness(NamedTuple):
    pair: str
    residual: float
    scale: float
    w: str
    u: str
    x: tuple[float, ...]


@dataclass
class FalsifierReport:
    n: int
    N: float
    trials: int
    seed: int
    violations: dict
    witnesses: dict
    min_scaled_residual: dict

    def found(self, pair: str) -> bool:
        return self.violations.get(pair, 0) > 0


def _conformal_objects(n: int, N: float, degree: int):
    monos = _monomials(n, degree)
    m = len(monos)
    w = _poly(monos, 0)
    u = _poly(monos, m)
    E = euclidean(n)
    op2 = transform_operator(E, TransformSpec.conformal(N, w=w))
    lhs = gamma2(op2, u) - (1.0 / N) * ex.power(apply_L(op2, u), 2)
    parts = [ex.exp(-4.0 * w), apply_L(E, w), gamma(E, w), gamma(E, u), hessian(E, w, u, u), gamma(E, w, u)]
    return monos, lhs, parts


def wrong_constants_falsifier(
    n: int = 3,
    N: float | None = None,
    trials: int = 10_000,
    seed: int = 20240601,
    degree: int = 3,
    threshold: float = 1e-6,
) -> FalsifierReport:
    """Random search on Euclidean R^n for violations of

        G~_2(u) - (L~u)^2/N >= e^{-4w} [ -Lw Gamma(u) + c1 Gamma(w) Gamma(u) - (N-2) H_w(u,u) + c2 Gamma(w,u)^2 ]

    for each constant pair (c1, c2).  w and u are random polynomials; the
    jets are drawn with log-uniform scales so both the first-order and the
    Hessian parts dominate in some draws.  A violation is a residual below
    -threshold * (1 + |LHS| + |RHS|).
    """
    N = float(n if N is None else N)
    if N < n:
        raise TransformError("needs N >= n so the Euclidean N-Ricci tensor vanishes")
    monos, lhs_e, parts = _conformal_objects(n, N, degree)
    m = len(monos)
    rng = np.random.default_rng(seed)
    orders = np.array([len(t) for t in monos])

    def coefficients(size):
        scale_by_order = 10.0 ** rng.uniform(-2.0, 1.0, size=(size, 3))
        c = rng.normal(size=(size, m))
        return c * scale_by_order[:, orders - 1]

    cw = coefficients(trials) * 10.0 ** rng.uniform(-1.0, 0.5, size=(trials, 1))
    cu = coefficients(trials)
    params = np.hstack([cw, cu])
    X = rng.uniform(-1.0, 1.0, size=(trials, n)) * 10.0 ** rng.uniform(-2.0, 0.0, size=(trials, 1))
    ok = np.ones(trials, dtype=bool)
    with np.errstate(all="ignore"):
        try:
            vals = ex.evaluate_many([lhs_e] + parts, X, params)
        except ex.DomainError:
            vals = None
    if vals is None:  # rare overflow in exp(-4w): fall back to per-row evaluation
        rows = []
        for t in range(trials):
            try:
                rows.append(ex.evaluate_many([lhs_e] + parts, X[t], params[t]))
            except ex.DomainError:
                ok[t] = False
                rows.append([0.0] * (1 + len(parts)))
        vals = [np.array(c) for c in zip(*rows)]
    lhs, e4w, Lw, Gw, Gu, Hw, Gwu = vals
    violations, witnesses, worst = {}, {}, {}
    for name, pair in PAIRS.items():
        c1, c2 = pair(N)
        rhs = e4w * (-Lw * Gu + c1 * Gw * Gu - (N - 2.0) * Hw + c2 * Gwu ** 2)
        scale = 1.0 + np.abs(lhs) + np.abs(rhs)
        res = (lhs - rhs) / scale
        res[~ok] = np.inf
        bad = res < -threshold
        violations[name] = int(bad.sum())
        k = int(np.argmin(res))
        worst[name] = float(res[k])
        if bad.any():
            witnesses[name] = Witness(
                name,
                float(lhs[k] - rhs[k]),
                float(scale[k]),
                _poly_string(monos, cw[k]),
                _poly_string(monos, cu[k]),
                tuple(float(t) for t in X[k]),
            )
    return FalsifierReport(n, N, trials, seed, violations, witnesses, worst)
