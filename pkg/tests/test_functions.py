import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frictionstokes.errors import UsageError
from frictionstokes.functions import Builtin, as_builtin, as_profile, evaluate, profile_to_data
from frictionstokes.quadrature import barycentric, composite_rule, rule_for_degree, simplex_rule

finite = st.floats(-5, 5, allow_nan=False)


def test_unknown_kind_and_missing_parameter():
    with pytest.raises(UsageError):
        Builtin("cubic", {})
    with pytest.raises(UsageError):
        Builtin("linear", {"a": 1.0})
    with pytest.raises(UsageError):
        Builtin("constant", {"value": 1.0, "junk": 2.0})


@pytest.mark.parametrize(
    "fn",
    [
        Builtin("linear", {"a": 0.3, "b": -1.2}),
        Builtin("sine", {"offset": 1.0, "amplitude": 0.5, "omega": 3.0, "phase": 0.2}),
        Builtin("exp-kernel", {"scale": 2.0, "rate": 1.5}),
        Builtin("bump", {"center": 0.5, "radius": 0.4, "height": 1.0}),
    ],
)
def test_derivatives_match_finite_differences(fn):
    s = np.linspace(0.15, 0.85, 9)
    h = 1e-6
    fd1 = (fn.value(s + h) - fn.value(s - h)) / (2 * h)
    assert np.allclose(fn.derivative(s, 1), fd1, atol=1e-7)
    fd2 = (fn.derivative(s + h, 1) - fn.derivative(s - h, 1)) / (2 * h)
    assert np.allclose(fn.derivative(s, 2), fd2, atol=1e-5)


def test_argument_selection():
    f = Builtin("linear", {"a": 1.0, "b": 2.0}, arg="x0")
    x = np.array([[0.5, 9.0], [1.0, 9.0]])
    assert np.allclose(f(x=x), [2.0, 3.0])
    g = Builtin.constant(4.0)
    assert np.allclose(evaluate(g, x, 0.3), [4.0, 4.0])


def test_product_profile_and_round_trip():
    p = as_profile([{"kind": "constant", "value": 2.0}, {"kind": "linear", "a": 1.0, "b": 1.0}])
    assert evaluate(p, None, 1.0) == pytest.approx(4.0)
    assert as_profile(profile_to_data(p)) == p
    assert as_builtin(3.0).params == {"value": 3.0}


@given(finite, finite)
def test_linear_is_exact(a, b):
    f = Builtin("linear", {"a": a, "b": b})
    assert float(f.value(2.0)) == pytest.approx(a + 2 * b, abs=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("degree", [1, 2, 4, 6])
def test_simplex_rule_integrates_monomials(dim, degree):
    qp, qw = rule_for_degree(dim, degree)
    assert qw.sum() == pytest.approx(1.0 / (2 if dim == 2 else 6))
    # int_simplex x^a = a! / (a + d)!
    from math import factorial

    for a in range(degree + 1):
        exact = factorial(a) / factorial(a + dim)
        assert np.dot(qw, qp[:, 0] ** a) == pytest.approx(exact, rel=1e-12)


def test_composite_rule_and_barycentric():
    qp, qw = composite_rule(2, 4, 3)
    assert qw.sum() == pytest.approx(0.5)
    assert np.dot(qw, qp[:, 0] * qp[:, 1]) == pytest.approx(1.0 / 24.0)
    lam = barycentric(simplex_rule(2, 3)[0])
    assert np.allclose(lam.sum(axis=1), 1.0)
