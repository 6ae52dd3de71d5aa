import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as sint

from loctime.quadrature import (NODES, WG7, WK15, QuadratureError, integrate, integrate_many,
                                integrate_sqrt)


def test_rule_weights():
    assert WK15.sum() == pytest.approx(2.0, abs=1e-15)
    assert WG7.sum() == pytest.approx(2.0, abs=1e-15)
    assert np.count_nonzero(WG7) == 7
    # the Gauss rule integrates x^12 exactly, Kronrod integrates x^22 exactly
    assert NODES ** 12 @ WG7 == pytest.approx(2 / 13, rel=1e-13)
    assert NODES ** 22 @ WK15 == pytest.approx(2 / 23, rel=1e-13)


@pytest.mark.parametrize("f, a, b", [
    (np.exp, 0.0, 1.0),
    (lambda x: np.sin(30 * x), 0.0, 2.0),
    (lambda x: 1 / (1e-2 + x * x), -1.0, 1.0),
    (np.sqrt, 0.0, 1.0),
    (lambda x: np.abs(x - 0.3), 0.0, 1.0),
])
def test_against_scipy(f, a, b):
    ref, _ = sint.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
    val, err = integrate(f, a, b)
    assert abs(val - ref) < 1e-9 * max(1, abs(ref))
    assert err < 1e-8


def test_many_with_index():
    c = np.arange(1, 6, dtype=float)
    r = integrate_many(lambda x, k: np.cos(c[k] * x), np.zeros(5), np.full(5, np.pi / 3))
    assert np.allclose(r.value, np.sin(c * np.pi / 3) / c, atol=1e-12)


def test_empty_and_reversed():
    r = integrate_many(lambda x, k: x, [1.0, 0.0], [1.0, 2.0])
    assert r.value[0] == 0.0 and r.value[1] == pytest.approx(2.0)
    val, _ = integrate(lambda x: np.ones_like(x), 1.0, 0.0)
    assert val == pytest.approx(-1.0)


def test_sqrt_substitution():
    r = integrate_sqrt(lambda s, k: 1 / np.sqrt(s), [0.0, 0.0], [1.0, 4.0])
    assert np.allclose(r.value, [2.0, 4.0], atol=1e-13)
    with pytest.raises(ValueError):
        integrate_sqrt(lambda s, k: s, [-1.0], [1.0])


def test_budget_exhausted():
    f = lambda x: np.sin(1 / np.maximum(x, 1e-300))
    with pytest.raises(QuadratureError) as info:
        integrate(f, 0.0, 1.0, limit=3, epsabs=1e-14, epsrel=1e-14)
    assert info.value.error_estimate > 0
    val, _ = integrate(f, 0.0, 1.0, limit=3, epsabs=1e-14, epsrel=1e-14, strict=False)
    assert np.isfinite(val)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=23),
       st.floats(-2, 2), st.floats(0.01, 3))
def test_polynomials_exact(coef, a, w):
    p = np.polynomial.Polynomial(coef)
    P = p.integ()
    val, _ = integrate(p, a, a + w)
    assert val == pytest.approx(P(a + w) - P(a), abs=1e-10 * (1 + np.sum(np.abs(coef)) * 5 ** 23))
