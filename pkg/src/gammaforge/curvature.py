"""N-Ricci tensor, Bakry-Emery checks and the inequalities built on them.

Values of the N-Ricci tensor and the parameters N, N' are extended reals,
represented as floats with ``math.inf`` / ``-math.inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from . import expr as ex
from .diffusion import DiffusionOperator, apply_L, gamma, gamma2, hessian, hessian_exprs
from .expr import Expr

INF = math.inf
RANK_TOL = 1e-10
EQ_TOL = 1e-8


class DegenerateError(ValueError):
    """Raised when an operation needs a nondegenerate point or denominator."""


def check_N(N: float) -> float:
    N = float(N)
    if math.isnan(N) or N < 1:
        raise ValueError(f"dimension parameter N must lie in [1, inf], got {N}")
    return N


def inv(N: float) -> float:
    """1/N with 1/inf = 0."""
    return 0.0 if math.isinf(N) else 1.0 / N


# linear algebra kernels ---------------------------------------------------------

def whitening(A: np.ndarray):
    """Return (rank, W) with W A W^T = I_rank and rows of W spanning range(A)."""
    A = 0.5 * (A + A.T)
    if A.size == 0:
        return 0, np.zeros((0, 0))
    lam, U = np.linalg.eigh(A)
    keep = lam >= RANK_TOL * (1.0 + max(lam.max(), 0.0))
    r = int(keep.sum())
    W = (U[:, keep] / np.sqrt(lam[keep])).T
    return r, W


def min_generalized_eigenvalue(M: np.ndarray, A: np.ndarray) -> float:
    """inf over lambda with lambda^T A lambda > 0 of lambda^T M lambda / lambda^T A lambda,
    taken on range(A); +inf when A vanishes."""
    r, W = whitening(A)
    if r == 0:
        return INF
    S = W @ M @ W.T
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])


def max_generalized_eigenvalue(M: np.ndarray, A: np.ndarray) -> float:
    return -min_generalized_eigenvalue(-M, A)


def traceless_norm_gap(B: np.ndarray) -> float:
    """||B||_HS^2 - n/(n-1) ||B||_op^2 for traceless symmetric B; nonnegative."""
    B = 0.5 * (B + B.T)
    n = B.shape[0]
    if n < 2:
        raise ValueError("needs n >= 2")
    op = np.abs(np.linalg.eigvalsh(B)).max()
    return float(np.sum(B * B) - n / (n - 1) * op * op)


def hs_split_residual(B: np.ndarray, a: float, N: float) -> float:
    """Residual of ||B||^2 = ||B - (a/N) I||^2 + (tr B)^2/n - (tr B - n a/N)^2/n."""
    n = B.shape[0]
    t = np.trace(B)
    rhs = np.sum((B - a / N * np.eye(n)) ** 2) + t * t / n - (t - n * a / N) ** 2 / n
    return float(np.sum(B * B) - rhs)


# point frames -------------------------------------------------------------------

@dataclass
class PointFrame:
    x: np.ndarray
    A: np.ndarray
    rank: int
    W: np.ndarray
    H: np.ndarray | None = None
    g2: float | None = None
    lf: float | None = None
    gf: float | None = None
    hs2: float | None = None
    trH: float | None = None

    @property
    def B(self) -> np.ndarray:
        """Hessian in a frame orthonormal for Gamma(.)(x)."""
        return self.W @ self.H @ self.W.T

    @property
    def A_pinv(self) -> np.ndarray:
        return self.W.T @ self.W


@lru_cache(maxsize=4096)
def _point_exprs(op: DiffusionOperator, f: Expr) -> tuple:
    n = op.n
    H = hessian_exprs(op, f)
    return (gamma2(op, f), apply_L(op, f), gamma(op, f)) + tuple(H[i][j] for i in range(n) for j in range(n))


def point_frame(op: DiffusionOperator, x, f: Expr | None = None) -> PointFrame:
    x = np.asarray(x, dtype=float)
    A = op.coefficient_matrix(x)
    r, W = whitening(A)
    pf = PointFrame(x, A, r, W)
    if f is not None:
        vals = ex.evaluate_many(_point_exprs(op, f), x)
        n = op.n
        pf.g2, pf.lf, pf.gf = vals[0], vals[1], vals[2]
        pf.H = np.array(vals[3:], dtype=float).reshape(n, n)
        B = pf.B
        pf.hs2 = float(np.sum(B * B))
        pf.trH = float(np.trace(B))
    return pf


def dim_gamma(op: DiffusionOperator, x) -> int:
    """Rank of the Gamma inner product at x."""
    return whitening(op.coefficient_matrix(np.asarray(x, float)))[0]


# N-Ricci tensor -----------------------------------------------------------------

def trace_matches(trH: float, lf: float) -> bool:
    return abs(trH - lf) <= EQ_TOL * (1.0 + abs(lf))


def ricci_from_frame(pf: PointFrame, N: float) -> float:
    N = check_N(N)
    n = pf.rank
    base = pf.g2 - pf.hs2
    if math.isinf(N):
        return base
    if N > n:
        return base - (pf.trH - pf.lf) ** 2 / (N - n)
    if N == n and trace_matches(pf.trH, pf.lf):
        return base
    return -INF


def ricci_n(op: DiffusionOperator, f: Expr, x, N: float) -> float:
    """R_N(f)(x) from the closed-form Bochner identity."""
    check_N(N)
    return ricci_from_frame(point_frame(op, x, f), N)


class RicciForm(NamedTuple):
    matrix: np.ndarray
    minus_infinity: bool
    rank: int
    A: np.ndarray


@lru_cache(maxsize=1024)
def _form_exprs(op: DiffusionOperator) -> tuple:
    n = op.n
    xs = ex.coords(n)
    G2 = [gamma2(op, xs[k], xs[l]) for k in range(n) for l in range(n)]
    Hs = [hessian_exprs(op, xs[k])[i][j] for k in range(n) for i in range(n) for j in range(n)]
    return tuple(G2 + Hs + list(op.b))


def ricci_form_matrix(op: DiffusionOperator, x, N: float) -> RicciForm:
    """Matrix M with R_N(lambda . x)(x) = lambda^T M lambda.

    When N equals the rank and some linear direction has tr H != L f, the form
    is -inf along it; ``minus_infinity`` flags this and the matrix holds the
    finite part.  For N below the rank every direction is -inf.
    """
    N = check_N(N)
    x = np.asarray(x, float)
    n = op.n
    A = op.coefficient_matrix(x)
    r, W = whitening(A)
    vals = ex.evaluate_many(_form_exprs(op), x)
    G2 = np.array(vals[: n * n]).reshape(n, n)
    Hk = np.array(vals[n * n: n * n + n ** 3]).reshape(n, n, n)
    b = np.array(vals[n * n + n ** 3:])
    Bk = np.einsum("ai,kij,bj->kab", W, Hk, W)
    S = np.einsum("kab,lab->kl", Bk, Bk)
    c = np.einsum("kaa->k", Bk) - b
    M = G2 - S
    flag = False
    if math.isinf(N):
        pass
    elif N > r:
        M = M - np.outer(c, c) / (N - r)
    elif N == r:
        flag = bool(np.linalg.norm(c) > EQ_TOL * (1.0 + np.linalg.norm(b)))
    else:
        flag = True
    return RicciForm(0.5 * (M + M.T), flag, r, A)


# brute-force infimum oracle -------------------------------------------------------

class OracleResult(NamedTuple):
    value: float
    converged: bool
    grad_norm: float
    restarts: int
    diverged: bool


@lru_cache(maxsize=256)
def _oracle_exprs(op: DiffusionOperator, f: Expr):
    """Gamma_2 and L of f + 1/2 sum P_ij (x^i - x0^i)(x^j - x0^j); P, x0 are parameters."""
    n = op.n
    xs = ex.coords(n)
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    m = len(idx)
    dy = [xs[k] - ex.param(m + k + 1) for k in range(n)]
    quad = []
    for t, (i, j) in enumerate(idx):
        w = 0.5 if i == j else 1.0
        quad.append(w * ex.param(t + 1) * dy[i] * dy[j])
    ft = f + ex.add(*quad)
    return gamma2(op, ft), apply_L(op, ft), idx


def ricci_infimum_oracle(
    op: DiffusionOperator,
    f: Expr,
    x,
    N: float,
    restarts: int = 20,
    seed: int = 0,
    divergence_scale: float = 1e6,
    gtol: float = 1e-9,
) -> OracleResult:
    """Minimize Gamma_2(f~) - (1/N)(L f~)^2 at x over f~ = f + quadratic with vanishing gradient at x.

    Starts from the stationary quadratic predicted by the trace/traceless split,
    then from ``restarts`` random symmetric matrices.  An escalating family
    (tracefree correction plus k times the frame identity) detects -inf.
    """
    N = check_N(N)
    x = np.asarray(x, float)
    n = op.n
    g2e, le, idx = _oracle_exprs(op, f)
    m = len(idx)
    iN = inv(N)

    def objective_batch(P: np.ndarray) -> np.ndarray:
        P = np.atleast_2d(P)
        params = np.hstack([P, np.broadcast_to(x, (P.shape[0], n))])
        g, l = ex.evaluate_many([g2e, le], x, params)
        return np.asarray(g, float) - iN * np.asarray(l, float) ** 2

    def sym_to_vec(S: np.ndarray) -> np.ndarray:
        return np.array([S[i, j] for i, j in idx])

    pf = point_frame(op, x, f)
    scale = 1.0 + abs(pf.g2) + pf.lf ** 2
    if pf.rank < n:
        raise DegenerateError("oracle needs a point where the coefficient matrix has full rank")
    W = pf.W
    B = pf.B
    B0 = B - np.trace(B) / n * np.eye(n)
    # coordinates of the frame: e = W (x - x0); psi(e) = 1/2 e^T Psi e  <=>  P = W^T Psi W
    Psi = -B0
    if not math.isinf(N) and N > n:
        Psi = Psi - N / (N - n) * (np.trace(B) - n / N * pf.lf) / n * np.eye(n)
    elif math.isinf(N):
        Psi = -B
    start = sym_to_vec(W.T @ Psi @ W)

    # divergence probe along the escalating family; k stops at 1e8 so that
    # cancellation in Gamma_2 - (Lf)^2/N (terms ~ k^2) stays far below the threshold
    ident = sym_to_vec(W.T @ W / n)
    ks = np.concatenate([10.0 ** np.arange(0, 9), -(10.0 ** np.arange(0, 9))])
    probe = objective_batch(start[None, :] + ks[:, None] * ident[None, :])
    if probe.min() < -divergence_scale * scale:
        return OracleResult(-INF, True, float("nan"), 0, True)

    h = 1e-5

    def fun_and_grad(p):
        pts = [p]
        for t in range(m):
            e = np.zeros(m)
            e[t] = h
            pts += [p + e, p - e]
        v = objective_batch(np.array(pts))
        g = (v[1::2] - v[2::2]) / (2 * h)
        return float(v[0]), g

    rng = np.random.default_rng(seed)
    best = (INF, False, INF)
    starts = [start] + [start + rng.normal(scale=1.0 + np.abs(start).max(), size=m) for _ in range(restarts)]
    for s in starts:
        res = minimize(fun_and_grad, s, jac=True, method="BFGS", options={"gtol": gtol * scale, "maxiter": 500})
        gn = float(np.linalg.norm(res.jac))
        if res.fun < -divergence_scale * scale:
            return OracleResult(-INF, True, gn, len(starts), True)
        if res.fun < best[0]:
            best = (float(res.fun), bool(res.success or gn <= 1e-6 * scale), gn)
    return OracleResult(best[0], best[1], best[2], len(starts), False)


# verification of the inequalities -------------------------------------------------

class Residual(NamedTuple):
    value: float
    scale: float

    def ok(self, tol: float) -> bool:
        return self.value >= -tol * self.scale


def verify_sharp_gamma2(op: DiffusionOperator, f: Expr, g: Expr, h: Expr, x, N: float, tol: float = 1e-12) -> Residual:
    """LHS - RHS of Gamma_2(f) >= R_N(f) + (Lf)^2/N + 2[H_f(g,h) - Gamma(g,h) Lf/N]^2 / D."""
    N = check_N(N)
    x = np.asarray(x, float)
    pf = point_frame(op, x, f)
    Hgh, Ggh, Gg, Gh = ex.evaluate_many([hessian(op, f, g, h), gamma(op, g, h), gamma(op, g), gamma(op, h)], x)
    iN = inv(N)
    D = (1.0 - 2.0 * iN) * Ggh ** 2 + Gg * Gh
    if D <= tol * (1.0 + Ggh ** 2 + abs(Gg * Gh)):
        raise DegenerateError(f"denominator {D:.3e} vanishes")
    R = ricci_from_frame(pf, N)
    rhs = R + iN * pf.lf ** 2 + 2.0 * (Hgh - iN * Ggh * pf.lf) ** 2 / D
    scale = 1.0 + abs(pf.g2) + abs(rhs) if math.isfinite(rhs) else 1.0 + abs(pf.g2)
    return Residual(pf.g2 - rhs, scale)


def hessian_estimate_residual(op: DiffusionOperator, f: Expr, g: Expr, h: Expr, x, N: float) -> Residual:
    """RHS - LHS of 2[H_f(g,h) - Gamma(g,h)Lf/N]^2 <= [Gamma_2 - (Lf)^2/N - R_N][(N-2)/N Gamma(g,h)^2 + Gamma(g)Gamma(h)]."""
    N = check_N(N)
    x = np.asarray(x, float)
    pf = point_frame(op, x, f)
    Hgh, Ggh, Gg, Gh = ex.evaluate_many([hessian(op, f, g, h), gamma(op, g, h), gamma(op, g), gamma(op, h)], x)
    iN = inv(N)
    R = ricci_from_frame(pf, N)
    lhs = 2.0 * (Hgh - iN * Ggh * pf.lf) ** 2
    D = (1.0 - 2.0 * iN) * Ggh ** 2 + Gg * Gh
    if not math.isfinite(R):
        return Residual(INF, 1.0 + lhs)
    rhs = (pf.g2 - iN * pf.lf ** 2 - R) * D
    return Residual(rhs - lhs, 1.0 + abs(lhs) + abs(rhs))


def verify_bochner_identity(op: DiffusionOperator, f: Expr, x, N: float) -> Residual:
    """Gamma_2(f) minus the traceless/trace decomposition of its N-Ricci part (signed)."""
    N = check_N(N)
    pf = point_frame(op, x, f)
    n = pf.rank
    if n < op.n:
        raise DegenerateError("identity is stated at nondegenerate points")
    if not math.isinf(N) and N <= n:
        raise DegenerateError("needs N > n")
    R = ricci_from_frame(pf, N)
    B = pf.B
    if math.isinf(N):
        rhs = R + pf.hs2
    else:
        rhs = (
            R
            + pf.lf ** 2 / N
            + float(np.sum((B - pf.lf / N * np.eye(n)) ** 2))
            + (pf.trH - n / N * pf.lf) ** 2 / (N - n)
        )
    return Residual(pf.g2 - rhs, 1.0 + abs(pf.g2) + abs(rhs))


class ImprovementChain(NamedTuple):
    gamma2: float
    first: float
    second: float
    third: float | None
    residuals: tuple[float, ...]
    scale: float
    note: str

    def ok(self, tol: float = 1e-8) -> bool:
        return all(r >= -tol * self.scale for r in self.residuals)


def verify_self_improvement(op: DiffusionOperator, f: Expr, x, N: float, K: float) -> ImprovementChain:
    """Residuals of Gamma_2 >= first >= second >= third in the improved BE(K,N) scale.

    first:  K Gamma + (Lf)^2/N + ||H - Lf/N Gamma||_HS^2 + (tr H - n Lf/N)^2/(N-n)
    second: K Gamma + (Lf)^2/N + N/(N-1) ||H - Lf/N Gamma||_op^2
    third:  K Gamma + (Lf)^2/N + N/(N-1) [H_f(f,f)/Gamma(f) - Lf/N]^2
    """
    N = check_N(N)
    x = np.asarray(x, float)
    pf = point_frame(op, x, f)
    n = pf.rank
    if not math.isinf(N) and N < n:
        raise DegenerateError("BE(K,N) forces N >= dim; chain undefined")
    iN = inv(N)
    fac = 1.0 if math.isinf(N) else (INF if N == 1 else N / (N - 1))
    B = pf.B - pf.lf * iN * np.eye(n)
    base = K * pf.gf + iN * pf.lf ** 2
    tail = pf.trH - n * iN * pf.lf
    if math.isinf(N):
        extra = 0.0
    elif N > n:
        extra = tail ** 2 / (N - n)
    else:
        extra = 0.0 if trace_matches(pf.trH, pf.lf) else INF
    first = base + float(np.sum(B * B)) + extra
    opn = float(np.abs(np.linalg.eigvalsh(B)).max()) if n else 0.0
    second = base + (fac * opn ** 2 if opn > 0 else 0.0)
    note = ""
    third = None
    if pf.gf > 1e-12 * (1.0 + abs(pf.g2)):
        Hff = float(ex.evaluate(hessian(op, f, f, f), x))
        q = Hff / pf.gf - iN * pf.lf
        third = base + (fac * q * q if q != 0 else 0.0)
    else:
        note = "Gamma(f)(x) vanishes; last term skipped"
    res = [pf.g2 - first, first - second]
    if third is not None:
        res.append(second - third)
    finite = [abs(v) for v in (pf.g2, first, second, third or 0.0) if math.isfinite(v)]
    res = [r if not math.isnan(r) else 0.0 for r in res]
    return ImprovementChain(pf.g2, first, second, third, tuple(res), 1.0 + sum(finite), note)


# Bakry-Emery checks ------------------------------------------------------------------

@dataclass
class PointRecord:
    point: tuple[float, ...]
    mu: float
    K: float
    residual: float
    rank: int
    minus_infinity: bool


@dataclass
class BEReport:
    N: float
    tol: float
    records: list[PointRecord] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.residual >= -self.tol for r in self.records)

    @property
    def best_k(self) -> float:
        return min((r.mu for r in self.records), default=INF)

    @property
    def violations(self) -> list[PointRecord]:
        return [r for r in self.records if not r.residual >= -self.tol]

    @property
    def min_residual(self) -> float:
        return min((r.residual for r in self.records), default=INF)


def pointwise_mu(op: DiffusionOperator, x, N: float) -> tuple[float, int, bool]:
    form = ricci_form_matrix(op, x, N)
    if form.minus_infinity:
        return -INF, form.rank, True
    return min_generalized_eigenvalue(form.matrix, form.A), form.rank, False


def _as_K(K, n: int):
    if isinstance(K, Expr):
        if ex.max_var(K) > n:
            raise ValueError("K uses coordinates beyond the chart dimension")
        return lambda x: float(ex.evaluate(K, x))
    k = float(K)
    return lambda x: k


def check_be(op: DiffusionOperator, K, N: float, grid: Sequence, tol: float = 1e-8) -> BEReport:
    """Pointwise test of R_N >= K Gamma via the minimal generalized eigenvalue of (M_N, A)."""
    N = check_N(N)
    if len(grid) == 0:
        raise ValueError("empty grid")
    Kf = _as_K(K, op.n)
    rep = BEReport(N, tol)
    for x in grid:
        x = np.asarray(x, float)
        mu, r, flag = pointwise_mu(op, x, N)
        k = Kf(x)
        rep.records.append(PointRecord(tuple(float(v) for v in x), mu, k, mu - k, r, flag))
    return rep


def best_k(op: DiffusionOperator, N: float, grid: Sequence) -> float:
    """Largest K with BE(K,N) on the grid: inf over points of the minimal generalized eigenvalue."""
    N = check_N(N)
    if len(grid) == 0:
        raise ValueError("empty grid")
    return min(pointwise_mu(op, x, N)[0] for x in grid)
