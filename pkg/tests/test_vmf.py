import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmfloss import tensor as T
from vmfloss import vmf
from vmfloss.gradcheck import check_gradients
from vmfloss.special import bessel_ratio_approx, bessel_ratio_bounds
from vmfloss.tensor import DegenerateInputError
from vmfloss.vmf import (
    SamplerStallError,
    VmfParams,
    draw_noise,
    expected_value,
    from_raw,
    init_class_weights,
    make_init_plan,
    rsample,
    sample,
)


def a3(k):
    return 1.0 / math.tanh(k) - 1.0 / k


def unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def test_from_raw_examples():
    p = from_raw([0.0, 0.0, 5.0])
    np.testing.assert_array_equal(p.mu, [0, 0, 1])
    assert p.kappa == 5.0
    p = from_raw([3.0, 4.0, 0.0])
    np.testing.assert_allclose(p.mu, [0.6, 0.8, 0.0])
    assert p.kappa == pytest.approx(5.0)
    z = np.random.default_rng(0).normal(size=512)
    p = from_raw(z)
    np.testing.assert_allclose(p.kappa * p.mu, z, atol=1e-10)
    with pytest.raises(DegenerateInputError):
        from_raw(np.zeros(4))


def test_params_validation():
    with pytest.raises(ValueError):
        VmfParams(np.array([1.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        VmfParams(unit(3, 0), -0.1)


def test_uniform_when_kappa_zero():
    x = sample(VmfParams(unit(3, 1), 0.0), np.random.default_rng(1), 50_000)
    assert np.linalg.norm(x.mean(axis=0)) < 0.02


def test_n3_kappa10_mean():
    x = sample(VmfParams(unit(3, 0), 10.0), np.random.default_rng(2), 50_000)
    np.testing.assert_allclose(x.mean(axis=0), a3(10.0) * unit(3, 0), atol=0.02)


def test_n64_kappa200_unit_norm_and_resultant():
    x = sample(VmfParams(unit(64, 5), 200.0), np.random.default_rng(3), 50_000)
    assert np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0)) < 1e-9
    br = bessel_ratio_bounds(64, 200.0)
    r = np.linalg.norm(x.mean(axis=0))
    assert br.lower - 0.02 <= r <= br.upper + 0.02


@pytest.mark.parametrize("n,kappa", [(3, 1.0), (3, 10.0), (8, 20.0), (64, 200.0)])
def test_resultant_within_bracket(n, kappa):
    rng = np.random.default_rng(n * 1000 + int(kappa))
    mu = rng.normal(size=n)
    mu /= np.linalg.norm(mu)
    x = sample(VmfParams(mu, kappa), rng, 50_000)
    br = bessel_ratio_bounds(n, kappa)
    r = float(x.mean(axis=0) @ mu)
    assert br.lower - 0.02 <= r <= br.upper + 0.02


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 40), st.floats(0.0, 500.0), st.integers(0, 2**31))
def test_samples_are_unit(n, kappa, seed):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=n)
    mu /= np.linalg.norm(mu)
    x = sample(VmfParams(mu, kappa), rng, 64)
    assert np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0)) < 1e-9


def test_rotational_equivariance():
    rng = np.random.default_rng(11)
    n, kappa = 5, 4.0
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    a = sample(VmfParams(q[:, 0], kappa), rng, 20_000)
    b = sample(VmfParams(unit(n, 0), kappa), rng, 20_000) @ q.T
    np.testing.assert_allclose(a.mean(axis=0), b.mean(axis=0), atol=0.02)
    # second moment along mu agrees too
    assert np.mean((a @ q[:, 0]) ** 2) == pytest.approx(np.mean((b @ q[:, 0]) ** 2), abs=0.02)


def test_sampler_stall(monkeypatch):
    monkeypatch.setattr(vmf, "MAX_PROPOSALS", 0)
    with pytest.raises(SamplerStallError):
        vmf.sample_cosines(np.array([1.0]), 3, np.random.default_rng(0))


def test_expected_value_examples():
    np.testing.assert_array_equal(expected_value(VmfParams(unit(4, 0), 0.0)), np.zeros(4))
    ev = expected_value(VmfParams(unit(3, 1), 10.0))
    assert ev[1] == pytest.approx(0.9, abs=0.0025)
    k = T.tensor(2.5, requires_grad=True)
    mu = T.tensor(unit(3, 1))
    T.backward(T.sum(expected_value((mu, k))))
    assert k.grad > 0


def test_pathwise_gradient_matches_ratio_slope():
    n, kappa, count = 8, 5.0, 5000
    rng = np.random.default_rng(5)
    noise = draw_noise([kappa], n, count, rng)
    mu = T.tensor(unit(n, 0)[None, :])
    k = T.tensor(np.array([kappa]), requires_grad=True)
    x = rsample(mu, k, count, rng, noise=noise)
    T.backward(T.mean(T.take(x, np.zeros(count, dtype=int))))
    h = 1e-4
    fd = (bessel_ratio_approx(n, kappa + h) - bessel_ratio_approx(n, kappa - h)) / (2 * h)
    assert abs(float(k.grad[0]) - fd) / fd < 0.15


def test_rsample_gradients_under_fixed_noise():
    rng = np.random.default_rng(9)
    B, n, S = 3, 5, 4
    raw = T.tensor(rng.normal(size=(B, n)))
    kap = T.tensor(rng.uniform(1.0, 6.0, size=B))
    noise = draw_noise(kap.data, n, S, rng)
    w = rng.normal(size=(B * S, n))

    def f(r, k):
        return T.sum(T.mul(rsample(T.l2_normalize(r), k, S, rng, noise=noise), T.tensor(w)))

    assert check_gradients(f, [raw, kap], eps=1e-6) < 1e-5


def test_rsample_distribution_matches_sample():
    rng = np.random.default_rng(4)
    mu = T.tensor(unit(3, 2)[None, :])
    x = rsample(mu, T.tensor(np.array([10.0])), 50_000, rng)
    assert x.data[:, 2].mean() == pytest.approx(a3(10.0), abs=0.02)


def test_init_plan_examples():
    assert make_init_plan(0.4, 3, 1.0).kappa_target == pytest.approx(0.952381, abs=1e-6)
    plan = make_init_plan(0.4, 512, 1.0)
    assert plan.kappa_target == pytest.approx(243.333333, abs=1e-6)
    assert plan.alpha == pytest.approx(plan.sigma)
    assert plan.sigma == pytest.approx(10.753916, abs=1e-6)
    assert make_init_plan(0.4, 512, 2.0).alpha == pytest.approx(plan.sigma / 2)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            make_init_plan(bad, 8, 1.0)


def test_init_weight_moments():
    plan = make_init_plan(0.4, 16, 1.0)
    Y = 2000
    w = init_class_weights(plan, Y, np.random.default_rng(0))
    assert abs(w.mean()) < 3 * plan.sigma / math.sqrt(Y * 16)
    assert w.std() == pytest.approx(plan.sigma, rel=0.02)


def test_init_ratio_n64():
    plan = make_init_plan(0.4, 64, 1.0)
    w = init_class_weights(plan, 1000, np.random.default_rng(1))
    ratio = bessel_ratio_approx(64, np.linalg.norm(w, axis=1)).mean()
    assert 0.35 <= ratio <= 0.45
