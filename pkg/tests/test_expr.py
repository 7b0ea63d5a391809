import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import Poly
from gammaforge import expr as ex


def fd(e, x, i, h=1e-5):
    x = np.asarray(x, float)
    d = np.zeros_like(x)
    d[i - 1] = h
    return (ex.evaluate(e, x + d) - ex.evaluate(e, x - d)) / (2 * h)


class TestParse:
    def test_product_tree(self):
        e = ex.parse("x1^2 * x2", 2)
        assert isinstance(e, ex.Mul)
        assert ex.evaluate(e, [3.0, 2.0]) == 18.0

    def test_composition(self):
        e = ex.parse("exp(-x1)", 1)
        assert isinstance(e, ex.Func) and e.name == "exp"
        assert ex.evaluate(e, [1.0]) == pytest.approx(math.exp(-1))

    @pytest.mark.parametrize(
        "text,pos",
        [("x3", 0), ("x1 +", 4), ("foo(x1)", 0), ("abs(x1)", 0), ("2*/x1", 2), ("(x1", 3), ("x1 $ x2", 3), ("sin", 0)],
    )
    def test_errors_carry_position(self, text, pos):
        with pytest.raises(ex.ParseError) as err:
            ex.parse(text, 2)
        assert err.value.position == pos

    def test_precedence(self):
        assert ex.evaluate(ex.parse("2 + 3*x1^2", 1), [2.0]) == 14.0
        assert ex.evaluate(ex.parse("-x1^2", 1), [3.0]) == -9.0
        assert ex.evaluate(ex.parse("2^3^2", 1), [0.0]) == 2.0 ** 9
        assert ex.evaluate(ex.parse("1/2/4", 1), [0.0]) == 0.125

    def test_scientific_literals(self):
        assert ex.evaluate(ex.parse("1.5e-3*x1 + .5", 1), [1000.0]) == 2.0

    def test_all_functions(self):
        x = [0.4]
        names = {"exp": math.exp, "log": math.log, "sin": math.sin, "cos": math.cos, "tan": math.tan,
                 "cot": lambda t: 1 / math.tan(t), "tanh": math.tanh, "sqrt": math.sqrt}
        for name, ref in names.items():
            assert ex.evaluate(ex.parse(f"{name}(x1)", 1), x) == pytest.approx(ref(0.4), rel=1e-14)


class TestDiff:
    def test_examples(self):
        assert str(ex.diff(ex.parse("x1^2*x2", 2), 1)) == "2*x1*x2"
        assert str(ex.diff(ex.parse("exp(-x1)", 1), 1)) == "-exp(-x1)"

    def test_mixed_against_finite_difference(self):
        e = ex.parse("sin(x1*x2)", 2)
        d1 = ex.diff(e, 1)
        got = ex.evaluate(ex.diff(d1, 2), [0.3, 0.7])
        assert abs(got - fd(d1, [0.3, 0.7], 2)) < 1e-6

    def test_functions_against_finite_difference(self):
        for text in ["log(1 + x1^2)", "tan(x1)", "cot(x1 + 1)", "tanh(2*x1)", "sqrt(2 + x1)", "x1^2.5", "exp(sin(x1))/(1+x1^2)"]:
            e = ex.parse(text, 1)
            for x in (0.2, 0.5, 0.9):
                assert abs(ex.evaluate(ex.diff(e, 1), [x]) - fd(e, [x], 1)) < 1e-6 * (1 + abs(fd(e, [x], 1))), text

    def test_fourth_order_polynomial_exact(self):
        e = ex.parse("x1^3*x2 + 2*x2^4", 2)
        d4 = ex.diff(ex.diff(ex.diff(ex.diff(e, 1), 1), 1), 1)
        assert d4 is ex.ZERO
        assert ex.evaluate(ex.diff(ex.diff(ex.diff(ex.diff(e, 2), 2), 2), 2), [0.1, 0.2]) == 48.0

    def test_closed_under_differentiation(self):
        e = ex.parse("exp(x1)*cos(x2) + log(x1^2 + 1)", 2)
        for i in (1, 2):
            for j in (1, 2):
                assert isinstance(ex.diff(ex.diff(e, i), j), ex.Expr)

    def test_flat_derivatives(self):
        e = ex.flat(ex.var(1))
        for x in (0.3, 1.0, 2.5):
            assert abs(ex.evaluate(ex.diff(e, 1), [x]) - fd(e, [x], 1)) < 1e-7
            assert ex.evaluate(ex.flat(ex.var(1), order=1), [x]) == pytest.approx(ex.evaluate(ex.diff(e, 1), [x]))
        assert ex.evaluate(e, [-1.0]) == 0.0 and ex.evaluate(ex.diff(e, 1), [0.0]) == 0.0

    def test_bad_index(self):
        with pytest.raises(ex.ExprError):
            ex.diff(ex.var(1), 0)


class TestEvaluate:
    def test_examples(self):
        assert ex.evaluate(ex.parse("x1^2 + x2", 2), [2, 3]) == 7.0
        assert ex.evaluate(ex.parse("log(x1)", 1), [1]) == 0.0

    def test_domain_error_reports_node_and_point(self):
        with pytest.raises(ex.DomainError) as err:
            ex.evaluate(ex.parse("1/x1", 1), [0.0])
        assert "x1" in str(err.value) and "0." in str(err.value)
        with pytest.raises(ex.DomainError):
            ex.evaluate(ex.parse("log(x1 - 1)", 1), [0.5])

    def test_batch_matches_pointwise(self):
        e = ex.parse("sin(x1)*x2^2 + exp(-x2)", 2)
        X = np.random.default_rng(0).uniform(-1, 1, size=(7, 2))
        batch = ex.evaluate(e, X)
        assert batch.shape == (7,)
        assert np.allclose(batch, [ex.evaluate(e, x) for x in X], rtol=0, atol=0)

    def test_repeatable(self):
        e = ex.parse("cos(x1)^3 - x1/7", 1)
        assert ex.evaluate(e, [0.123]) == ex.evaluate(e, [0.123])

    def test_immutable_and_picklable(self):
        e = ex.parse("x1*x2 + sin(x2)", 2)
        with pytest.raises((AttributeError, TypeError)):
            e.foo = 1
        e2 = pickle.loads(pickle.dumps(e))
        assert ex.evaluate(e2, [0.3, 0.4]) == ex.evaluate(e, [0.3, 0.4])


small = st.floats(-2, 2, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(a=small, b=small, x1=st.floats(-1, 1), x2=st.floats(-1, 1), i=st.sampled_from([1, 2]))
def test_linearity(a, b, x1, x2, i):
    e1, e2 = ex.parse("x1^3*sin(x2)", 2), ex.parse("exp(x1*x2)", 2)
    lhs = ex.evaluate(ex.diff(a * e1 + b * e2, i), [x1, x2])
    rhs = a * ex.evaluate(ex.diff(e1, i), [x1, x2]) + b * ex.evaluate(ex.diff(e2, i), [x1, x2])
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


@settings(max_examples=60, deadline=None)
@given(x1=st.floats(-1, 1), x2=st.floats(-1, 1), i=st.sampled_from([1, 2]))
def test_product_rule(x1, x2, i):
    u, v = ex.parse("cos(x1) + x2^2", 2), ex.parse("tanh(x1 - x2) + 3", 2)
    x = [x1, x2]
    lhs = ex.evaluate(ex.diff(u * v, i), x)
    rhs = ex.evaluate(ex.diff(u, i), x) * ex.evaluate(v, x) + ex.evaluate(u, x) * ex.evaluate(ex.diff(v, i), x)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(rhs))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_derivatives_commute_and_match_hand_polynomials(seed):
    rng = np.random.default_rng(seed)
    p = Poly.random(rng, 2, 4)
    e = ex.parse(p.text(), 2)
    x = rng.uniform(-1, 1, size=2)
    d12 = ex.evaluate(ex.diff(ex.diff(e, 1), 2), x)
    d21 = ex.evaluate(ex.diff(ex.diff(e, 2), 1), x)
    assert abs(d12 - d21) <= 1e-10 * (1 + abs(d12))
    assert np.allclose(
        [[ex.evaluate(ex.diff(ex.diff(e, i), j), x) for j in (1, 2)] for i in (1, 2)], p.hessian(x), atol=1e-10
    )
