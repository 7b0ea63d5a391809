import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import Poly
from gammaforge import diffusion as df
from gammaforge import expr as ex
from gammaforge import transform as tf

E1, E2 = df.euclidean(1), df.euclidean(2)
OU1 = df.ornstein_uhlenbeck(1)
X1, X2 = ex.var(1), ex.var(2)


def sphere(n: int) -> df.DiffusionOperator:
    """Round sphere in stereographic coordinates."""
    r2 = ex.add(*[ex.power(v, 2) for v in ex.coords(n)])
    return df.laplace_beltrami(df.conformal_metric(n, 4 / ex.power(1 + r2, 2)))


def lb_perturbed(seed: int) -> df.DiffusionOperator:
    rng = np.random.default_rng(seed)
    c = [float(t) for t in rng.uniform(-0.2, 0.2, size=3)]
    return df.laplace_beltrami(df.RiemannianSpec.from_strings(
        [[f"1 + {c[0]!r}*sin(x2)", f"{c[1]!r}*cos(x1)"], [f"{c[1]!r}*cos(x1)", f"1 + {c[2]!r}*x1^2"]]
    ))


def val(e, x):
    return ex.evaluate(e, np.asarray(x, float))


class TestOperator:
    def test_laplacian_of_square_norm(self):
        assert val(df.apply_L(E2, ex.parse("x1^2 + x2^2", 2)), [0.3, -2.0]) == 4.0

    def test_ou_on_coordinate(self):
        assert val(df.apply_L(OU1, X1), [1.7]) == -1.7

    def test_asymmetric_a_is_symmetrized(self, caplog):
        op = df.DiffusionOperator(((ex.ONE, X1), (ex.ZERO, ex.ONE)), (ex.ZERO, ex.ZERO))
        assert op.a[0][1] is op.a[1][0]
        assert "symmetrizing" in caplog.text

    def test_not_psd_rejected(self):
        op = df.DiffusionOperator.from_strings([["1", "2"], ["2", "1"]], ["0", "0"])
        with pytest.raises(df.NotPositiveSemidefinite):
            op.coefficient_matrix([0.0, 0.0])

    def test_dimension_checks(self):
        with pytest.raises(df.DimensionError):
            df.apply_L(E1, ex.parse("x2", 2))
        with pytest.raises(df.DimensionError):
            df.DiffusionOperator(((ex.ONE,),), (ex.ZERO, ex.ZERO))

    def test_chain_rule_for_L(self):
        f1, f2 = ex.parse("x1^2", 2), X2
        psi = ex.sin(f1 * f2)
        rng = np.random.default_rng(0)
        for x in rng.uniform(-1, 1, size=(20, 2)):
            # psi(y1,y2) = sin(y1 y2): psi_1 = y2 cos, psi_2 = y1 cos, psi_11 = -y2^2 sin, psi_22 = -y1^2 sin, psi_12 = cos - y1 y2 sin
            y1, y2 = val(f1, x), val(f2, x)
            c, s = math.cos(y1 * y2), math.sin(y1 * y2)
            d1, d2 = y2 * c, y1 * c
            h11, h22, h12 = -y2 ** 2 * s, -y1 ** 2 * s, c - y1 * y2 * s
            rhs = (d1 * val(df.apply_L(E2, f1), x) + d2 * val(df.apply_L(E2, f2), x)
                   + h11 * val(df.gamma(E2, f1), x) + h22 * val(df.gamma(E2, f2), x) + 2 * h12 * val(df.gamma(E2, f1, f2), x))
            assert abs(val(df.apply_L(E2, psi), x) - rhs) < 1e-8


class TestGamma:
    def test_examples(self):
        assert val(df.gamma(E2, X1, X2), [0.4, 0.1]) == 0.0
        assert val(df.gamma(E1, ex.parse("x1^2", 1)), [3.0]) == 36.0

    def test_degenerate_example_operator(self):
        op = df.DiffusionOperator(((ex.flat(X1), ex.ZERO), (ex.ZERO, ex.ONE)), (0.5 * ex.flat(X1, order=1), ex.ZERO))
        u = ex.parse("x1^2*x2 + sin(x2)", 2)
        for x in ([0.7, 0.2], [-0.5, 1.0], [2.0, -1.0]):
            phi = math.exp(-1 / x[0]) if x[0] > 0 else 0.0
            du1, du2 = 2 * x[0] * x[1], x[0] ** 2 + math.cos(x[1])
            assert val(df.gamma(op, u), x) == pytest.approx(phi * du1 ** 2 + du2 ** 2, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_coordinate_form_equals_definition(self, seed):
        rng = np.random.default_rng(seed)
        op = [E2, df.ornstein_uhlenbeck(2), lb_perturbed(seed)][seed % 3]
        u = ex.parse(Poly.random(rng, 2, 3).text(), 2)
        v = ex.parse(Poly.random(rng, 2, 2).text() + " + sin(x1)", 2)
        x = rng.uniform(-1, 1, size=2)
        A = op.coefficient_matrix(x)
        gu, gv = np.array([val(ex.diff(u, i), x) for i in (1, 2)]), np.array([val(ex.diff(v, i), x) for i in (1, 2)])
        coord = gu @ A @ gv
        assert abs(val(df.gamma(op, u, v), x) - coord) <= 1e-9 * (1 + abs(coord))
        assert abs(val(df.gamma_definition(op, u, v), x) - coord) <= 1e-9 * (1 + abs(coord))
        assert val(df.gamma(op, u, v), x) == val(df.gamma(op, v, u), x)

    def test_gamma_chain_rule(self):
        f1, f2 = ex.parse("x1^2", 2), ex.sin(X2)
        psi = f1 * f2
        for x in np.random.default_rng(1).uniform(-1, 1, size=(20, 2)):
            y1, y2 = val(f1, x), val(f2, x)
            rhs = y2 ** 2 * val(df.gamma(E2, f1), x) + y1 ** 2 * val(df.gamma(E2, f2), x) + 2 * y1 * y2 * val(df.gamma(E2, f1, f2), x)
            assert abs(val(df.gamma(E2, psi), x) - rhs) < 1e-8


class TestGamma2:
    def test_examples(self):
        assert val(df.gamma2(E2, ex.parse("x1^2 + x2^2", 2)), [0.2, 0.9]) == 8.0
        assert val(df.gamma2(OU1, X1), [2.3]) == 1.0

    def test_chain_rule(self):
        f = [ex.parse("x1^2", 2), ex.sin(X2)]
        psi = f[0] * f[1]
        for x in np.random.default_rng(2).uniform(-1, 1, size=(20, 2)):
            y = [val(g, x) for g in f]
            d = [y[1], y[0]]
            h = [[0.0, 1.0], [1.0, 0.0]]
            G = [[val(df.gamma(E2, f[i], f[j]), x) for j in range(2)] for i in range(2)]
            rhs = sum(d[i] * d[j] * val(df.gamma2(E2, f[i], f[j]), x) for i in range(2) for j in range(2))
            rhs += 2 * sum(d[i] * h[j][k] * val(df.hessian(E2, f[i], f[j], f[k]), x) for i in range(2) for j in range(2) for k in range(2))
            rhs += sum(h[i][j] * h[k][l] * G[i][k] * G[j][l] for i in range(2) for j in range(2) for k in range(2) for l in range(2))
            assert abs(val(df.gamma2(E2, psi), x) - rhs) < 1e-8

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_euclidean_is_frobenius_hessian(self, seed):
        rng = np.random.default_rng(seed)
        p = Poly.random(rng, 2, 4)
        x = rng.uniform(-1, 1, 2)
        assert abs(val(df.gamma2(E2, ex.parse(p.text(), 2)), x) - np.sum(p.hessian(x) ** 2)) < 1e-8


class TestHessian:
    def test_examples(self):
        assert val(df.hessian(E1, ex.parse("x1^2", 1), X1, X1), [0.4]) == 2.0
        assert np.array_equal(df.hessian_matrix(E2, X1 * X2, [0.3, 0.1]), [[0.0, 1.0], [1.0, 0.0]])
        assert np.array_equal(df.hessian_matrix(OU1, ex.parse("x1^2", 1), [1.3]), [[2.0]])

    def test_tensoriality(self):
        p = [0.3, -0.2]
        g = ex.parse(f"(x1 - {p[0]})^2", 2)
        f, h = ex.parse("x1^3*x2 + exp(x2)", 2), ex.parse("sin(x1 + x2)", 2)
        op = lb_perturbed(3)
        assert abs(val(df.hessian(op, f, g, h), p)) < 1e-14

    @pytest.mark.parametrize("seed", range(10))
    def test_matrix_reconstructs_form(self, seed):
        rng = np.random.default_rng(seed)
        op = [E2, df.ornstein_uhlenbeck(2), lb_perturbed(seed)][seed % 3]
        f, g, h = (ex.parse(Poly.random(rng, 2, 3).text(), 2) for _ in range(3))
        x = rng.uniform(-1, 1, 2)
        H = df.hessian_matrix(op, f, x)
        dg, dh = np.array([val(ex.diff(g, i), x) for i in (1, 2)]), np.array([val(ex.diff(h, i), x) for i in (1, 2)])
        ref = val(df.hessian(op, f, g, h), x)
        assert abs(dg @ H @ dh - ref) <= 1e-9 * (1 + abs(ref))
        assert abs(ref - val(df.hessian(op, f, h, g), x)) <= 1e-12 * (1 + abs(ref))

    def test_euclidean_form(self):
        rng = np.random.default_rng(5)
        pf, pg, ph = (Poly.random(rng, 2, 3) for _ in range(3))
        x = rng.uniform(-1, 1, 2)
        got = val(df.hessian(E2, *(ex.parse(p.text(), 2) for p in (pf, pg, ph))), x)
        assert got == pytest.approx(pg.grad(x) @ pf.hessian(x) @ ph.grad(x), rel=1e-10, abs=1e-12)

    def test_chain_rule_on_orthonormal_frame(self):
        op = sphere(2)
        x = np.array([0.3, -0.4])
        e = df.normal_coordinates(op, x)
        psi = ex.sin(e[0]) * e[1] + ex.power(e[0], 2)
        y = [val(t, x) for t in e]
        d = [math.cos(y[0]) * y[1] + 2 * y[0], math.sin(y[0])]
        h = [[-math.sin(y[0]) * y[1] + 2, math.cos(y[0])], [math.cos(y[0]), 0.0]]
        for j in range(2):
            for k in range(2):
                lhs = val(df.hessian(op, psi, e[j], e[k]), x)
                rhs = sum(d[i] * val(df.hessian(op, e[i], e[j], e[k]), x) for i in range(2)) + h[j][k]
                assert abs(lhs - rhs) < 1e-8


class TestChainRulesLlog:
    def test_exp_example(self):
        s = df.chain_rules_Llog(E1, ex.exp(X1), 2)
        for x in (-1.0, 0.0, 2.0):
            assert val(s.L_lhs, [x]) == pytest.approx(2.0) and val(s.L_rhs, [x]) == pytest.approx(2.0)

    def test_constant(self):
        s = df.chain_rules_Llog(E2, ex.const(3.0), 1.5, X2)
        for side in s:
            assert abs(val(side, [0.1, 0.2])) < 1e-15

    def test_random_positive_function(self):
        s = df.chain_rules_Llog(OU1, ex.parse("1 + x1^2", 1), -1)
        for x in np.linspace(0.01, 0.99, 11):
            assert abs(val(s.L_lhs, [x]) - val(s.L_rhs, [x])) < 1e-8
            assert abs(val(s.H_lhs, [x]) - val(s.H_rhs, [x])) < 1e-8

    def test_p_zero(self):
        with pytest.raises(ValueError):
            df.chain_rules_Llog(E1, ex.exp(X1), 0)


class TestLaplaceBeltrami:
    def test_identity_metric(self):
        op = df.laplace_beltrami(df.RiemannianSpec.from_strings([["1", "0"], ["0", "1"]]))
        assert np.array_equal(op.coefficient_matrix([0.2, 0.3]), np.eye(2))
        assert np.array_equal(op.drift([0.2, 0.3]), [0.0, 0.0])

    @pytest.mark.parametrize("n", [2, 3])
    def test_poincare_matches_conformal_transform(self, n):
        r2 = ex.add(*[ex.power(v, 2) for v in ex.coords(n)])
        f = 0.5 * (1 - r2)
        lb = df.laplace_beltrami(df.conformal_metric(n, 1 / ex.power(f, 2)))
        conf = tf.transform_operator(df.euclidean(n), tf.TransformSpec.conformal(n, f=f))
        for x in np.random.default_rng(n).uniform(-0.5, 0.5, size=(20, n)):
            assert np.allclose(lb.coefficient_matrix(x), conf.coefficient_matrix(x), rtol=1e-9, atol=1e-12)
            assert np.allclose(lb.drift(x), conf.drift(x), rtol=1e-9, atol=1e-12)

    def test_symbolic_determinant(self):
        spec = df.RiemannianSpec.from_strings([["2 + sin(x1)", "0.3*x2", "0"], ["0.3*x2", "1 + x1^2", "0.1"], ["0", "0.1", "3"]])
        det = df.symbolic_det(spec.g)
        for x in np.random.default_rng(0).uniform(-1, 1, size=(10, 3)):
            assert val(det, x) == pytest.approx(np.linalg.det(spec.matrix(x)), rel=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_gamma_uses_inverse_metric(self, seed):
        rng = np.random.default_rng(seed)
        op = lb_perturbed(seed)
        spec_g = np.linalg.inv(op.coefficient_matrix([0.1, 0.2]))
        u = ex.parse(Poly.random(rng, 2, 2).text(), 2)
        gu = np.array([val(ex.diff(u, i), [0.1, 0.2]) for i in (1, 2)])
        assert val(df.gamma(op, u), [0.1, 0.2]) == pytest.approx(gu @ np.linalg.solve(spec_g, gu), rel=1e-9)

    def test_divergence_form(self):
        # L u = |g|^-1/2 d_i(|g|^1/2 g^ij d_j u) checked by finite differences of the flux
        op = lb_perturbed(11)
        u = ex.parse("x1^2*x2 + cos(x2)", 2)
        x = np.array([0.2, -0.3])
        h = 1e-4

        def flux(p):
            A = op.coefficient_matrix(p)
            sq = 1 / math.sqrt(np.linalg.det(A))
            gu = np.array([val(ex.diff(u, i), p) for i in (1, 2)])
            return sq * (A @ gu)

        div = sum((flux(x + h * e)[i] - flux(x - h * e)[i]) / (2 * h) for i, e in enumerate(np.eye(2)))
        assert val(df.apply_L(op, u), x) == pytest.approx(math.sqrt(np.linalg.det(op.coefficient_matrix(x))) * div, rel=1e-6)


class TestNormalCoordinates:
    def test_euclidean_coordinates(self):
        r = df.check_normal_coordinates(E2, [X1, X2], [0.5, -0.2])
        assert r.ok and r.residual == 0.0

    def test_ou_fails(self):
        r = df.check_normal_coordinates(OU1, [X1], [1.0])
        assert not r.ok and r.L_residual == pytest.approx(1.0)

    @pytest.mark.parametrize("n", [2, 3])
    def test_sphere_constructed(self, n):
        op = sphere(n)
        x = np.linspace(0.1, 0.4, n)
        r = df.check_normal_coordinates(op, df.normal_coordinates(op, x), x)
        assert r.ok and r.residual < 1e-8

    def test_bochner_in_normal_coordinates(self):
        op = sphere(2)
        x = np.array([0.2, 0.1])
        e = df.normal_coordinates(op, x)
        psi = ex.power(e[0], 3) + e[0] * e[1] + ex.sin(e[1])
        y = [val(t, x) for t in e]
        d = np.array([3 * y[0] ** 2 + y[1], y[0] + math.cos(y[1])])
        D2 = np.array([[6 * y[0], 1.0], [1.0, -math.sin(y[1])]])
        ric = np.array([[val(df.gamma2(op, e[i], e[j]), x) for j in range(2)] for i in range(2)])
        g2 = val(df.gamma2(op, psi), x)
        assert abs(g2 - (d @ ric @ d + np.sum(D2 ** 2))) < 1e-7
        # unit sphere: Ric = (n - 1) g
        assert np.allclose(ric, np.eye(2), atol=1e-8)
        Lpsi = val(df.apply_L(op, psi), x)
        assert np.sum(D2 ** 2) >= Lpsi ** 2 / 2 - 1e-9
