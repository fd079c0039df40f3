import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccmpc.conformal import (BoundTable, Partition, _bucket, assign_regions, calibrate, calibrate_scores,
                             conformal_quantile, empirical_coverage, lookup_batch, lookup_bounds,
                             nonconformity_scores, quantile_rank)
from ccmpc.predictor import Batch, PredictedTrajectory, PredictorInput
from ccmpc.sim_env import PedestrianState, VehicleState


def rank_oracle(n, gamma):
    """Smallest integer r with r >= (n + 1)(1 - gamma), in exact decimal arithmetic."""
    x = (n + 1) * (1 - Fraction(repr(gamma)))
    return math.ceil(x)


@given(n=st.integers(0, 5000), g=st.sampled_from([0.015, 0.1, 0.05, 0.15, 0.2, 0.5, 0.01]))
def test_quantile_rank_matches_exact_oracle(n, g):
    assert quantile_rank(n, g) == rank_oracle(n, g)


@given(scores=st.lists(st.floats(0, 100), min_size=0, max_size=300), g=st.floats(0.01, 0.5))
def test_conformal_quantile_is_order_statistic(scores, g):
    q = conformal_quantile(scores, g)
    r = quantile_rank(len(scores), g)
    if r > len(scores):
        assert q == math.inf
    else:
        assert q == sorted(scores)[r - 1]
        # at least r of the n scores lie at or below q
        assert sum(s <= q for s in scores) >= r


def test_conformal_quantile_exact_marginal_coverage():
    # for continuous exchangeable scores P(S_new <= q) = r / (n + 1) exactly
    rng = np.random.default_rng(0)
    n, g, trials = 99, 0.1, 40000
    S = rng.random((trials, n + 1))
    q = np.sort(S[:, :n], axis=1)[:, quantile_rank(n, g) - 1]
    cov = np.mean(S[:, n] <= q)
    target = quantile_rank(n, g) / (n + 1)
    assert target >= 1 - g
    assert abs(cov - target) < 4 * math.sqrt(target * (1 - target) / trials)


def test_bad_gamma():
    with pytest.raises(ValueError):
        conformal_quantile([1.0], 0.0)


def test_buckets_half_open_and_open_ended():
    edges = (0.0, 5.0, 10.0, 15.0)
    v = np.array([0.0, 4.999, 5.0, 9.99, 10.0, 15.0, 30.0, -1.0])
    assert _bucket(v, edges).tolist() == [0, 0, 1, 1, 2, 2, 2, 0]


def test_partition_validation():
    with pytest.raises(ValueError):
        Partition(distance_edges=(0.0, 5.0, 5.0))
    with pytest.raises(ValueError):
        Partition(speed_edges=(1.0, 5.0))
    assert Partition().shape == (4, 3)


def _batch(d, speed, T=5, dt=0.1):
    n = len(d)
    return Batch(np.zeros(n), np.zeros(n), np.zeros(n), np.stack([d, np.zeros(n)], 1), np.zeros((n, 2)),
                 np.repeat((np.asarray(speed) * dt)[:, None], T - 1, axis=1))


def test_assign_regions_uses_distance_and_mean_speed():
    b = _batch(np.array([1.0, 7.0, 12.0, 40.0]), np.array([2.0, 6.0, 11.0, 14.9]))
    assert assign_regions(b, Partition()).tolist() == [[0, 0], [1, 1], [2, 2], [3, 2]]


def test_scores_shapes():
    Y = np.zeros((3, 4, 2))
    Yh = np.ones((3, 4, 2))
    assert np.allclose(nonconformity_scores(Yh, Y), math.sqrt(2))
    assert nonconformity_scores(PredictedTrajectory(Yh[0]), Y[0]).shape == (4,)
    with pytest.raises(ValueError):
        nonconformity_scores(Yh, Y[:, :3])


def _random_table(rng, T=4, n=3000, n_min=50):
    part = Partition()
    regions = np.stack([rng.integers(0, 4, n), rng.integers(0, 3, n)], axis=1)
    regions[regions[:, 0] == 3] = [3, 0]  # leave regions (3,1), (3,2) empty
    scores = rng.exponential(1.0, (n, T)) * (1 + regions[:, :1])
    return calibrate_scores(regions, scores, part, 0.2, T, n_min), regions, scores


def test_calibrate_scores_per_region(rng):
    table, regions, scores = _random_table(rng)
    assert table.gamma == pytest.approx(0.05)
    for reg, cnt in table.counts.items():
        mask = (regions[:, 0] == reg[0]) & (regions[:, 1] == reg[1])
        assert cnt == mask.sum()
        for k in range(4):
            assert table.bounds[reg][k] == conformal_quantile(scores[mask, k], 0.05)
    assert (3, 1) not in table.counts
    assert np.all(np.isinf(table.profile((3, 1))))


def test_sparse_regions_get_infinite_bounds(rng):
    part = Partition()
    regions = np.array([[0, 0]] * 10 + [[1, 1]] * 100)
    table = calibrate_scores(regions, rng.random((110, 3)), part, 0.15, 3, n_min=50)
    assert np.all(np.isinf(table.profile((0, 0))))
    assert np.all(np.isfinite(table.profile((1, 1))))


def test_csv_roundtrip_exact(rng):
    table, _, _ = _random_table(rng)
    back = BoundTable.from_csv(table.to_csv())
    assert back.T == table.T and back.gamma == table.gamma and back.partition == table.partition
    assert back.counts == table.counts
    for reg in table.partition.regions():
        assert np.array_equal(back.profile(reg), table.profile(reg))
    assert back.to_csv() == table.to_csv()
    with pytest.raises(ValueError):
        BoundTable.from_csv(table.to_csv().replace("ccmpc-bounds-1", "ccmpc-bounds-0"))


def test_empirical_coverage_against_direct_count(rng):
    table, _, _ = _random_table(rng)
    regs = np.array([[1, 1]] * 500 + [[0, 2]] * 300)
    scores = rng.exponential(1.0, (800, 4)) * 2
    cov = empirical_coverage(regs, scores, table)
    assert set(cov) == {(1, 1), (0, 2)}
    s = scores[:500]
    b = table.profile((1, 1))
    assert np.allclose(cov[(1, 1)]["per_step"], (s <= b).mean(axis=0))
    assert cov[(1, 1)]["joint"] == pytest.approx((s <= b).all(axis=1).mean())
    assert cov[(1, 1)]["n_test"] == 500


def test_lookup_single_and_batch(rng):
    table, _, _ = _random_table(rng)
    X = PredictorInput(VehicleState(0.0), PedestrianState([7.0, 0.0], [0, 0], [0, 0]), np.full(3, 0.6))
    prof = lookup_bounds(table, X)
    assert prof.region == (1, 1)
    assert np.array_equal(prof.bounds, table.profile((1, 1)))
    B, regs = lookup_batch(table, _batch(np.array([7.0, 100.0]), np.array([6.0, 1.0]), T=4))
    assert regs.tolist() == [[1, 1], [3, 0]]
    assert np.array_equal(B[1], table.profile((3, 0)))


def test_calibrate_from_records():
    X = PredictorInput(VehicleState(0.0), PedestrianState([7.0, 0.0], [0, 0], [0, 0]), np.full(2, 0.6))
    recs = [(X, np.zeros((3, 2)), np.full((3, 2), i / 100)) for i in range(100)]
    table = calibrate(recs, Partition(), 0.3, 3, n_min=10)
    expected = conformal_quantile([math.hypot(i / 100, i / 100) for i in range(100)], 0.1)
    assert np.allclose(table.profile((1, 1)), expected)
