import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmfloss.metrics import (
    accuracy,
    auroc_norm,
    ece_equal_mass,
    fit_temperature,
    map_at_r,
    nll_from_logits,
    pairwise_distances,
)

from oracles import auroc_oracle, ece_oracle, map_oracle


def test_accuracy():
    assert accuracy([1, 2, 3], [1, 0, 3]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        accuracy([], [])


def test_ece_examples():
    conf = np.full(30, 0.6)
    hit = np.tile([1, 1, 1, 0, 0], 6)
    assert ece_equal_mass(conf, hit, bins=3) == pytest.approx(0.0, abs=1e-12)
    hit = np.array([1, 0] * 15)
    assert ece_equal_mass(np.ones(30), hit, bins=15) == pytest.approx(0.5)
    conf = np.linspace(0.05, 0.95, 30)
    assert ece_equal_mass(conf, conf > 0.5, bins=15) == pytest.approx(ece_oracle(conf, conf > 0.5, 15))


def test_ece_few_samples_warns():
    with pytest.warns(UserWarning):
        ece_equal_mass([0.9, 0.8], [1, 0], bins=15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 80), st.integers(1, 20), st.integers(0, 2**31))
def test_ece_matches_oracle(n, bins, seed):
    rng = np.random.default_rng(seed)
    conf = rng.choice([0.2, 0.5, 0.7, 1.0], size=n) if seed % 2 else rng.uniform(size=n)
    hit = rng.uniform(size=n) < 0.6
    if n < bins:
        with pytest.warns(UserWarning):
            got = ece_equal_mass(conf, hit, bins)
        want = ece_oracle(conf, hit, n)
    else:
        got, want = ece_equal_mass(conf, hit, bins), ece_oracle(conf, hit, bins)
    assert got == pytest.approx(want, abs=1e-12)
    assert 0.0 <= got <= 1.0


def calibrated_sample(rng, n=20_000, Y=5, scale=1.0):
    logits = rng.normal(size=(n, Y)) * 2.0
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    labels = np.array([rng.choice(Y, p=row) for row in p])
    return logits * scale, labels


def test_temperature_identity_on_calibrated_logits():
    logits, y = calibrated_sample(np.random.default_rng(0))
    assert fit_temperature(logits, y) == pytest.approx(1.0, abs=0.05)


def test_temperature_recovers_scale():
    logits, y = calibrated_sample(np.random.default_rng(1), scale=5.0)
    assert fit_temperature(logits, y) == pytest.approx(5.0, rel=0.05)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 20.0))
def test_temperature_never_hurts(seed, scale):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(40, 4)) * scale
    y = rng.integers(0, 4, 40)
    y[:2] = [0, 1]
    t = fit_temperature(logits, y)
    assert t > 0
    assert nll_from_logits(logits, y, t) <= nll_from_logits(logits, y) + 1e-12


def test_temperature_single_class():
    with pytest.raises(ValueError):
        fit_temperature(np.zeros((4, 3)), [2, 2, 2, 2])


def test_auroc_examples():
    assert auroc_norm([3, 4, 1, 2], [1, 1, 0, 0]) == 1.0
    assert auroc_norm([1, 2, 3, 4], [1, 1, 0, 0]) == 0.0
    assert auroc_norm([5, 5, 5, 5], [1, 0, 1, 0]) == 0.5
    norms = [0.3, 0.9, 0.5, 0.5, 0.1, 0.7]
    correct = [1, 1, 0, 1, 0, 0]
    assert auroc_norm(norms, correct) == pytest.approx(auroc_oracle(norms, correct))
    assert auroc_norm([1, 2], [1, 1]) is None


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_auroc_matches_pairwise_count(items):
    norms = [float(a) for a, _ in items]
    correct = [b for _, b in items]
    got = auroc_norm(norms, correct)
    if all(correct) or not any(correct):
        assert got is None
    else:
        assert got == pytest.approx(auroc_oracle(norms, correct), abs=1e-12)


def test_map_separated_clusters():
    rng = np.random.default_rng(0)
    centers = np.eye(3) * 10
    x = np.vstack([c + rng.normal(size=(5, 3)) * 0.1 for c in centers])
    y = np.repeat([0, 1, 2], 5)
    for d in ("cosine", "euclidean"):
        assert map_at_r(x, y, d) == 1.0
    assert map_at_r(x * 0.01, y, "poincare") == 1.0


def test_map_worst_case_and_skips():
    x = np.array([[0.0], [1.0], [10.0], [11.0]])
    y = np.array([0, 1, 0, 1])
    assert map_at_r(x, y, "euclidean") == 0.0
    value, skipped = map_at_r(np.array([[0.0], [1.0], [5.0]]), [0, 0, 1], "euclidean", return_skipped=True)
    assert value == 1.0 and skipped == 1


def test_map_small_exhaustive():
    # every labelling of 8 collinear points with two classes of four
    x = np.arange(8.0)[:, None]
    dist = pairwise_distances(x, "euclidean")
    for combo in itertools.combinations(range(8), 4):
        y = np.zeros(8, dtype=int)
        y[list(combo)] = 1
        assert map_at_r(x, y, "euclidean") == pytest.approx(map_oracle(dist.tolist(), y.tolist()), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_map_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 25))
    x = rng.normal(size=(n, 3))
    y = rng.integers(0, 4, n)
    d = pairwise_distances(x, "cosine")
    assert map_at_r(x, y, "cosine") == pytest.approx(map_oracle(d.tolist(), y.tolist()), abs=1e-12, nan_ok=True)


def test_map_permutation_invariant():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 4))
    y = rng.integers(0, 3, 30)
    perm = rng.permutation(30)
    assert map_at_r(x, y) == pytest.approx(map_at_r(x[perm], y[perm]), abs=1e-12)


def test_distances():
    x = np.array([[1.0, 0.0], [0.0, 2.0], [-3.0, 0.0]])
    np.testing.assert_allclose(pairwise_distances(x, "cosine"), [[0, 1, 2], [1, 0, 1], [2, 1, 0]], atol=1e-15)
    assert pairwise_distances(x, "euclidean")[0, 2] == 4.0
    assert pairwise_distances(x * 0.1, "poincare")[0, 0] == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(ValueError):
        pairwise_distances(x, "manhattan")
    with pytest.raises(ValueError):
        pairwise_distances(np.zeros((2, 2)), "cosine")


def test_nll_hand_value():
    assert nll_from_logits([[0.0, math.log(3.0)]], [1]) == pytest.approx(-math.log(0.75))
