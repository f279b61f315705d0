import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmfloss import tensor as T
from vmfloss.special import (
    DomainError,
    OracleRangeError,
    bessel_iv_series,
    bessel_ratio_approx,
    bessel_ratio_bounds,
    bessel_ratio_series,
    log_bessel_iv_series,
    log_cn_approx,
)


def a3(kappa):
    """Exact mean resultant length on S^2."""
    return 1.0 / math.tanh(kappa) - 1.0 / kappa


def log_c3(kappa):
    # C_3(k) = k / (4 pi sinh k)
    return math.log(kappa) - math.log(4 * math.pi) - (kappa + math.log1p(-math.exp(-2 * kappa)) - math.log(2))


def test_bounds_at_zero():
    br = bessel_ratio_bounds(4, 0.0)
    assert br.lower == 0.0 and br.upper == 0.0


def test_bounds_n4_kappa2():
    br = bessel_ratio_bounds(4, 2.0)
    assert br.lower == pytest.approx(0.42539053, abs=1e-8)
    assert br.upper == pytest.approx(0.5, abs=1e-15)
    # frozen from the series oracle (scipy.special.iv agrees to 1e-15)
    true = 0.4331274267
    assert bessel_ratio_series(4, 2.0) == pytest.approx(true, abs=1e-10)
    assert true in br


def test_bounds_contain_closed_form_n3():
    assert a3(10.0) in bessel_ratio_bounds(3, 10.0)


def test_bounds_domain_errors():
    with pytest.raises(DomainError):
        bessel_ratio_bounds(4, -1.0)
    with pytest.raises(DomainError):
        bessel_ratio_bounds(1, 1.0)
    with pytest.raises(DomainError):
        bessel_ratio_approx(3.5, 1.0)


def test_midpoint_examples():
    assert bessel_ratio_approx(4, 2.0) == pytest.approx(0.46269526, abs=1e-8)
    for n in (2, 3, 64):
        assert bessel_ratio_approx(n, 0.0) == 0.0
    vals = [bessel_ratio_approx(5, k) for k in (1e2, 1e4, 1e6)]
    assert vals[0] < vals[1] < vals[2] < 1.0
    assert 1.0 - vals[2] < 1e-5


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([2, 3, 4, 8, 64, 512]), st.floats(1e-3, 1e4), st.floats(1.0001, 2.0))
def test_midpoint_strictly_increasing(n, kappa, factor):
    assert bessel_ratio_approx(n, kappa * factor) > bessel_ratio_approx(n, kappa)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 600), st.floats(0.0, 1e5))
def test_bracket_invariants(n, kappa):
    br = bessel_ratio_bounds(n, kappa)
    assert 0.0 <= br.lower <= br.upper < 1.0
    assert br.midpoint == pytest.approx(0.5 * (br.lower + br.upper))


@pytest.mark.parametrize("n,kappa", [(4, 2.0), (3, 0.5), (8, 7.0), (64, 30.0)])
def test_log_cn_derivative_is_minus_ratio(n, kappa):
    h = 1e-5
    fd = (log_cn_approx(n, kappa + h) - log_cn_approx(n, kappa - h)) / (2 * h)
    assert fd == pytest.approx(-bessel_ratio_approx(n, kappa), abs=1e-8)


def test_log_cn_tape_gradient():
    k = T.tensor(np.array([0.3, 2.0, 40.0]), requires_grad=True)
    T.backward(T.sum(log_cn_approx(6, k)))
    np.testing.assert_allclose(k.grad, -bessel_ratio_approx(6, k.data), rtol=1e-14)


def test_ratio_tape_gradient():
    from vmfloss.gradcheck import check_gradients
    k = T.tensor(np.array([0.01, 1.0, 25.0]))
    assert check_gradients(lambda t: bessel_ratio_approx(8, t), [k], eps=1e-6) < 1e-7


def test_log_cn_differences_are_shift_free():
    eta = 123.456
    d = log_cn_approx(7, 3.0) - log_cn_approx(7, 9.0)
    assert (log_cn_approx(7, 3.0) + eta) - (log_cn_approx(7, 9.0) + eta) == pytest.approx(d, abs=1e-12)


def test_log_cn_difference_against_n3_closed_form():
    approx = log_cn_approx(3, 5.0) - log_cn_approx(3, 1.0)
    exact = log_c3(5.0) - log_c3(1.0)
    # the midpoint ratio errs by at most half the bracket width, so the
    # integrated error is bounded by the integral of that half width
    ks = np.linspace(1.0, 5.0, 4001)
    br = bessel_ratio_bounds(3, ks)
    bound = np.trapezoid(0.5 * (br.upper - br.lower), ks)
    assert abs(approx - exact) <= bound
    assert abs(approx - exact) == pytest.approx(0.0778, abs=1e-3)


def test_series_values():
    assert bessel_iv_series(0, 0.0) == 1.0
    assert bessel_iv_series(1, 2.0) == pytest.approx(1.5906368546, abs=1e-9)
    # recurrence I_{v-1} - I_{v+1} = 2v/k I_v
    k, v = 3.7, 2.5
    lhs = bessel_iv_series(v - 1, k) - bessel_iv_series(v + 1, k)
    assert lhs == pytest.approx(2 * v / k * bessel_iv_series(v, k), rel=1e-12)


def test_series_range_guard():
    with pytest.raises(OracleRangeError):
        log_bessel_iv_series(1.0, 51.0)
    with pytest.raises(DomainError):
        log_bessel_iv_series(-1.0, 1.0)


def test_series_matches_scipy():
    sp = pytest.importorskip("scipy.special")
    for v in (0.0, 0.5, 3.0, 31.0):
        for k in (0.1, 2.0, 20.0, 50.0):
            ref = math.log(sp.ive(v, k)) + k
            assert log_bessel_iv_series(v, k) == pytest.approx(ref, rel=1e-11, abs=1e-11)
