import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pagdiff import (ConfigError, energy_distance, knn_precision_recall,
                     pairwise_diversity, report)


def _brute_energy(x, y):
    # direct double loop over all ordered pairs, including self-pairs
    x = x.reshape(x.shape[0], -1)
    y = y.reshape(y.shape[0], -1)

    def mean_dist(a, b):
        total = 0.0
        for u in a:
            for v in b:
                total += math.sqrt(((u - v) ** 2).sum())
        return total / (len(a) * len(b))

    return 2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y)


def test_energy_distance_identical_sets_is_zero():
    x = np.random.default_rng(0).standard_normal((10, 4, 4))
    assert energy_distance(x, x.copy()) == pytest.approx(0.0, abs=1e-12)


def test_energy_distance_two_point_oracle():
    # X = {0}, Y = {a}: 2|a| - 0 - 0 ... with singletons E|X-X'| = 0
    x = np.zeros((1, 2))
    y = np.full((1, 2), 3.0)
    want = 2 * math.sqrt(18.0)
    assert energy_distance(x, y) == pytest.approx(want, rel=1e-14)


def test_energy_distance_matches_brute_force():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((7, 3, 3))
    y = rng.standard_normal((5, 3, 3)) + 0.5
    assert energy_distance(x, y) == pytest.approx(_brute_energy(x, y),
                                                  rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(2, 8))
def test_energy_distance_nonnegative_and_symmetric(seed, n, m):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 5))
    y = rng.standard_normal((m, 5)) * 2
    d = energy_distance(x, y)
    assert d >= -1e-12
    assert d == pytest.approx(energy_distance(y, x), rel=1e-12)


def test_energy_distance_grows_with_separation():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((50, 8))
    y = rng.standard_normal((50, 8))
    near = energy_distance(x, y + 0.5)
    far = energy_distance(x, y + 5.0)
    assert far > near


def test_pairwise_diversity_oracles():
    # three collinear points at 0, 3, 6 in 1-D: distances 3, 6, 3
    x = np.array([[0.0], [3.0], [6.0]])
    assert pairwise_diversity(x) == pytest.approx(4.0, rel=1e-14)
    assert pairwise_diversity(np.zeros((5, 3))) == 0.0
    assert pairwise_diversity(np.ones((1, 3))) == 0.0


def test_pairwise_diversity_matches_brute_force():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 2, 2))
    flat = x.reshape(6, -1)
    pairs = [math.sqrt(((flat[i] - flat[j]) ** 2).sum())
             for i, j in itertools.combinations(range(6), 2)]
    assert pairwise_diversity(x) == pytest.approx(np.mean(pairs), rel=1e-12)


def test_knn_perfect_overlap():
    x = np.random.default_rng(4).standard_normal((20, 4))
    prec, rec = knn_precision_recall(x, x.copy(), k=3)
    assert prec == 1.0 and rec == 1.0


def test_knn_disjoint_clusters():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((20, 4)) * 0.01
    y = rng.standard_normal((20, 4)) * 0.01 + 100.0
    prec, rec = knn_precision_recall(x, y, k=3)
    assert prec == 0.0 and rec == 0.0


def test_knn_hand_built_half_inside():
    # reference on a unit 1-D grid; two samples inside, two far outside
    ref = np.arange(10, dtype=np.float64)[:, None]
    samples = np.array([[0.5], [4.2], [50.0], [-9.0]])
    prec, rec = knn_precision_recall(samples, ref, k=1)
    assert prec == pytest.approx(0.5)
    assert rec == 1.0  # every grid point is within its neighbor radius of x


def test_knn_k_clamped_to_manifold_size():
    rng = np.random.default_rng(6)
    ref = rng.standard_normal((3, 4))
    prec, rec = knn_precision_recall(ref, ref.copy(), k=10)
    assert prec == 1.0 and rec == 1.0


def test_metric_input_validation():
    x = np.zeros((3, 2))
    with pytest.raises(ConfigError):
        energy_distance(np.zeros((0, 2)), x)
    with pytest.raises(ConfigError):
        knn_precision_recall(x, np.zeros((1, 2)), k=3)
    with pytest.raises(ConfigError):
        knn_precision_recall(x, x, k=0)


def test_report_fields_and_lines():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 4, 4))
    y = rng.standard_normal((6, 4, 4))
    rep = report(x, y, k=3, seed=11)
    assert rep.n_samples == 8 and rep.n_reference == 6 and rep.seed == 11
    assert rep.energy_distance == pytest.approx(energy_distance(x, y))
    lines = rep.lines()
    assert lines[0].startswith("energy_distance: ")
    assert any(line == "seed: 11" for line in lines)
