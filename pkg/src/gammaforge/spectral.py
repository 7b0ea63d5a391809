"""One-dimensional discretization, spectral gaps, Lichnerowicz and Bonnet-Myers checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, linalg

from . import expr as ex
from .curvature import INF, check_N
from .diffusion import DiffusionOperator, apply_L, gamma
from .expr import Expr
from .transform import TransformSpec, as_grid, batch, kprime_general, transform_operator

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


class DiscretizationError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    lo: float
    hi: float
    periodic: bool = False

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DiscretizationError("domain needs lo < hi")

    @classmethod
    def circle(cls, length: float = 2 * math.pi) -> "Domain":
        return cls(0.0, float(length), True)


@dataclass
class Discretization1D:
    domain: Domain
    m: int
    nodes: np.ndarray
    matrix: np.ndarray
    weights: np.ndarray

    def symmetrized(self) -> np.ndarray:
        s = np.sqrt(self.weights)
        S = (s[:, None] * self.matrix) / s[None, :]
        return 0.5 * (S + S.T)

    def self_adjointness_residual(self) -> float:
        DM = self.weights[:, None] * self.matrix
        return float(np.abs(DM - DM.T).max() / max(np.abs(DM).max(), 1e-300))

    def row_sum_residual(self) -> float:
        return float(np.abs(self.matrix.sum(axis=1)).max() / max(np.abs(self.matrix).max(), 1e-300))

    def invariance_residual(self) -> float:
        """|w^T M| : the discrete measure annihilates the range of the generator."""
        return float(np.abs(self.weights @ self.matrix).max() / max(np.abs(self.weights[:, None] * self.matrix).max(), 1e-300))


def _as_domain(domain) -> Domain:
    if isinstance(domain, Domain):
        return domain
    if isinstance(domain, dict):
        if domain.get("circle"):
            return Domain.circle(domain.get("length", 2 * math.pi))
        return Domain(float(domain["lo"]), float(domain["hi"]), bool(domain.get("periodic", False)))
    lo, hi = domain
    return Domain(float(lo), float(hi))


def _cumulative_integral(fun, pts: np.ndarray) -> np.ndarray:
    """Integral of ``fun`` from pts[0] to each pts[k], Gauss-Legendre on every gap."""
    a, b = pts[:-1], pts[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    q = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = fun(q.ravel()).reshape(q.shape)
    pieces = half * (vals @ _GL_W)
    return np.concatenate([[0.0], np.cumsum(pieces)])


def discretize_1d(op: DiffusionOperator, domain, m: int) -> Discretization1D:
    """Finite-volume realization of L u = rho^-1 (rho a u')' with rho = exp(int b/a)/a.

    Intervals use cell-centred nodes with zero flux through the ends; the
    circle uses periodic nodes and needs int b/a over one period to vanish.
    """
    if op.n != 1:
        raise DiscretizationError("only one-dimensional operators are discretized")
    if m < 3:
        raise DiscretizationError("need at least 3 grid points")
    d = _as_domain(domain)
    a_e, b_e = op.a[0][0], op.b[0]
    ratio = b_e / a_e

    def a_fun(t):
        return np.broadcast_to(np.asarray(ex.evaluate(a_e, np.asarray(t)[:, None]), float), np.shape(t))

    def r_fun(t):
        return np.broadcast_to(np.asarray(ex.evaluate(ratio, np.asarray(t)[:, None]), float), np.shape(t))

    L = d.hi - d.lo
    h = L / m
    if d.periodic:
        nodes = d.lo + h * np.arange(m)
        faces = nodes + 0.5 * h
    else:
        nodes = d.lo + h * (np.arange(m) + 0.5)
        faces = nodes[:-1] + 0.5 * h
    pts = np.sort(np.concatenate([nodes, faces]))
    a_nodes, a_faces = a_fun(nodes), a_fun(faces)
    if np.any(a_nodes <= 0) or np.any(a_faces <= 0):
        raise DiscretizationError("diffusion coefficient must be positive on the grid")
    G = _cumulative_integral(r_fun, pts)
    if d.periodic:
        period = _cumulative_integral(r_fun, np.linspace(d.lo, d.hi, m + 1))[-1]
        if abs(period) > 1e-9 * (1.0 + np.abs(G).max()):
            raise DiscretizationError("int b/a over the period must vanish for a periodic reversible measure")
    pos = {float(p): k for k, p in enumerate(pts)}
    Gn = np.array([G[pos[float(p)]] for p in nodes])
    Gf = np.array([G[pos[float(p)]] for p in faces])
    shift = max(Gn.max(), Gf.max())
    rho_nodes = np.exp(Gn - shift) / a_nodes
    flux = np.exp(Gf - shift)  # rho a at the faces
    M = np.zeros((m, m))
    for k in range(len(faces)):
        i = k
        j = (k + 1) % m
        c = flux[k] / h ** 2
        M[i, i] -= c / rho_nodes[i]
        M[i, j] += c / rho_nodes[i]
        M[j, j] -= c / rho_nodes[j]
        M[j, i] += c / rho_nodes[j]
    weights = rho_nodes * h
    weights = weights / weights.sum()
    return Discretization1D(d, m, nodes, M, weights)


def spectrum(d: Discretization1D, k: int | None = None) -> np.ndarray:
    """Eigenvalues of -L in increasing order (first is 0 up to round-off)."""
    lam = linalg.eigvalsh(-d.symmetrized())
    return lam if k is None else lam[:k]


def spectral_gap(d: Discretization1D) -> float:
    lam = spectrum(d)
    return float(max(lam[1], 0.0))


# Lichnerowicz --------------------------------------------------------------------------

class LichnerowiczReport(NamedTuple):
    gap: float
    bound: float
    slack: float
    relative_slack: float
    K_used: float
    N_used: float
    passed: bool
    tol: float


def lichnerowicz_factor(N: float) -> float:
    N = check_N(N)
    if math.isinf(N):
        return 1.0
    if N == 1:
        return INF
    return N / (N - 1.0)


def lichnerowicz_check(
    op: DiffusionOperator,
    K: float,
    N: float,
    domain,
    m: int = 512,
    spec: TransformSpec | None = None,
    Np: float | None = None,
    grid=None,
    tol: float = 1e-2,
) -> LichnerowiczReport:
    """Spectral gap of the (optionally transformed) operator against N/(N-1) inf K.

    Without a transform, ``K`` and ``N`` are the BE constants of ``op``.  With
    one, K' is evaluated on ``grid`` and the bound uses N'.  Pass iff
    gap >= bound - tol * (1 + |bound|).
    """
    d = _as_domain(domain)
    if spec is None:
        target, Kb, Nb = op, float(K), check_N(N)
    else:
        if Np is None or grid is None:
            raise ValueError("a transform needs N' and a grid for K'")
        Kb = kprime_general(op, spec, K, N, Np, grid).value
        Nb = check_N(Np)
        target = transform_operator(op, spec)
    gap = spectral_gap(discretize_1d(target, d, m))
    fac = lichnerowicz_factor(Nb)
    if math.isfinite(fac):
        bound = fac * Kb
    else:
        bound = INF if Kb > 0 else (0.0 if Kb == 0 else -INF)
    slack = gap - bound
    return LichnerowiczReport(
        gap, bound, slack, slack / max(abs(bound), 1e-300), Kb, Nb, bool(slack >= -tol * (1.0 + abs(bound))), tol
    )


# Bonnet-Myers ---------------------------------------------------------------------------

class BonnetMyersReport(NamedTuple):
    diameter: float
    bound: float
    K_bound: float
    hypothesis_min: float
    hypothesis_ok: bool
    passed: bool
    skipped: bool
    note: str


def myers_bound(K_bound: float, N: float, N_star: float) -> float:
    """pi/sqrt(K) sqrt(N - 1 + (N-2)^2/(N* - N))."""
    if not K_bound > 0:
        raise ValueError("bound needs K > 0")
    N = check_N(N)
    extra = 0.0 if math.isinf(N_star) else (N - 2.0) ** 2 / (N_star - N)
    return math.pi / math.sqrt(K_bound) * math.sqrt(N - 1.0 + extra)


def intrinsic_diameter(op: DiffusionOperator, domain) -> float:
    """int a^{-1/2} over the interval (half the length on a circle)."""
    d = _as_domain(domain)
    a = op.a[0][0]
    val, _ = integrate.quad(lambda t: float(ex.evaluate(a, [t])) ** -0.5, d.lo, d.hi, limit=200, epsabs=1e-12, epsrel=1e-12)
    return 0.5 * val if d.periodic else val


def bonnet_myers_check(
    op: DiffusionOperator,
    f: Expr,
    K_bound: float | None,
    N: float,
    N_star: float,
    domain,
    K: float | Expr = 0.0,
    grid_size: int = 401,
    tol: float = 1e-9,
) -> BonnetMyersReport:
    """Verify f^2 K + 1/2 L f^2 - N* Gamma(f) >= K_bound and |f| <= 1 on a grid, then
    compare the intrinsic diameter with the bound.  ``K`` is the BE(K, N) constant of
    ``op``; ``K_bound`` None takes the grid infimum of the hypothesis expression."""
    N = check_N(N)
    d = _as_domain(domain)
    if not (N_star > N and N_star >= 2):
        raise ValueError("needs N* > N and N* >= 2")
    X = np.linspace(d.lo, d.hi, grid_size)[:, None]
    Kv = batch([K], X)[0] if isinstance(K, Expr) else np.full(grid_size, float(K))
    fv, Lf2, Gf = batch([ex.as_expr(f), apply_L(op, ex.power(f, 2)), gamma(op, ex.as_expr(f))], X)
    hyp = fv ** 2 * Kv + 0.5 * Lf2 - (0.0 if math.isinf(N_star) else N_star) * Gf
    if math.isinf(N_star) and np.abs(Gf).max() > 0:
        raise ValueError("N* = inf is only meaningful with constant f")
    hmin = float(hyp.min())
    if K_bound is None:
        K_bound = hmin
    diam = intrinsic_diameter(op, d)
    if not K_bound > 0:
        return BonnetMyersReport(diam, INF, K_bound, hmin, False, True, True, "hypothesis needs K > 0; check skipped")
    bad = np.flatnonzero((hyp < K_bound - tol * (1 + abs(K_bound))) | (np.abs(fv) > 1 + tol))
    if bad.size:
        p = float(X[bad[0], 0])
        return BonnetMyersReport(diam, myers_bound(K_bound, N, N_star), K_bound, hmin, False, False, False, f"hypothesis fails at x = {p}")
    bound = myers_bound(K_bound, N, N_star)
    return BonnetMyersReport(diam, bound, K_bound, hmin, True, bool(diam <= bound * (1 + 1e-3)), False, "")


# reference operators ------------------------------------------------------------------------

def sphere_radial(n: int) -> DiffusionOperator:
    """d^2/dt^2 + (n-1) cot(t) d/dt: the radial part of the Laplacian on S^n."""
    t = ex.var(1)
    return DiffusionOperator(((ex.ONE,),), ((n - 1.0) * ex.cot(t),), name=f"sphere-radial-{n}")


def sphere_domain(eps: float = 1e-3) -> Domain:
    return Domain(eps, math.pi - eps)
