import numpy as np
import pytest

from helpers import learned_with, random_grid, random_psd
from oracles import best_medoids
from robustgp import (ClusterAssignment, ConfigError, MeterWeights, TimeSeriesRecord,
                      cluster_generators, correlation_distance, infer_aggregate,
                      infer_dimension_reduced, kmedoids, predict_nonmetered)
from robustgp.clustering import aggregate_weights, default_k
from robustgp.inference import assemble_blocks

DT = 0.1


def random_distances(n, seed):
    pts = np.random.default_rng(seed).standard_normal((n, 2))
    return np.linalg.norm(pts[:, None] - pts[None], axis=2)


def block_distances(sizes, far=1.0, near=0.1):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    D = np.where(labels[:, None] == labels[None], near, far)
    np.fill_diagonal(D, 0.0)
    return D, labels


def test_every_point_a_medoid_costs_nothing():
    D = random_distances(7, 0)
    medoids, membership, cost, _ = kmedoids(D, 7)
    assert cost == 0.0
    np.testing.assert_array_equal(medoids, np.arange(7))
    np.testing.assert_array_equal(membership, np.arange(7))


def test_block_structure_is_recovered():
    D, labels = block_distances([4, 3, 5])
    medoids, membership, cost, _ = kmedoids(D, 3, seed=1)
    _, best = best_medoids(D, 3)
    assert cost == pytest.approx(best)
    # same partition up to relabeling
    for c in range(3):
        assert np.unique(labels[membership == c]).size == 1
    assert np.unique(membership).size == 3


@pytest.mark.parametrize("seed", range(5))
def test_pam_ends_at_a_swap_local_optimum(seed):
    D = random_distances(9, seed)
    medoids, _, cost, _ = kmedoids(D, 3, seed=seed)
    _, best = best_medoids(D, 3)
    assert cost >= best - 1e-12
    for slot in range(3):
        for o in np.setdiff1d(np.arange(9), medoids):
            trial = medoids.copy()
            trial[slot] = o
            assert D[:, trial].min(axis=1).sum() >= cost - 1e-12


def test_cost_history_never_increases():
    _, _, cost, history = kmedoids(random_distances(30, 3), 4, seed=2)
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
    assert history[-1] == pytest.approx(cost)


def test_k_is_validated():
    D = random_distances(5, 0)
    for k in (0, 6):
        with pytest.raises(ConfigError):
            kmedoids(D, k)


def test_large_k_is_accepted():
    _, membership, _, _ = kmedoids(random_distances(40, 1), 26)
    assert np.unique(membership).size == 26


def test_default_k():
    assert default_k(10) == 2 and default_k(60) == 6 and default_k(100) == 10


@pytest.fixture(scope="module")
def learned():
    model = random_grid(8, seed=5, gamma=1.0)
    return learned_with(model, random_psd(8, seed=6), [k * DT for k in range(5)])


def test_correlation_distance_properties(learned):
    D = correlation_distance(learned)
    np.testing.assert_allclose(D, D.T)
    assert np.all(np.diag(D) == 0) and np.all((D >= 0) & (D <= 1))


def test_cluster_export_lists_every_generator(learned):
    a = cluster_generators(learned, k=3)
    lines = a.export().strip().splitlines()
    assert lines[0] == "generator,cluster,medoid" and len(lines) == 9
    medoid_rows = [l for l in lines[1:] if l.split(",")[0] == l.split(",")[2]]
    assert len(medoid_rows) == 3


def record(learned, meters, T=5, seed=0):
    n = learned.model.n
    b = assemble_blocks(learned, np.arange(n), [], T, DT, factor=False)
    L = np.linalg.cholesky(b.sigma11 + 1e-12 * np.eye(n * T))
    x = (L @ np.random.default_rng(seed).standard_normal(n * T)).reshape(n, T).T
    return x, TimeSeriesRecord(values=x[:, meters], reporting_rate=1 / DT, meter_set=meters)


def assignment(membership):
    membership = np.asarray(membership)
    k = int(membership.max()) + 1
    medoids = np.array([np.flatnonzero(membership == c)[0] for c in range(k)])
    return ClusterAssignment(k=k, medoids=medoids, membership=membership,
                             distances=np.zeros((len(membership),) * 2), cost=0.0)


METERS = [0, 2, 3, 5, 7]
TARGETS = [1, 4, 6]


def test_single_cluster_reduction_equals_full_conditioning(learned):
    _, rec = record(learned, METERS)
    one = assignment(np.zeros(8, dtype=int))
    # same blocks, same factorization: identical to the last bit
    np.testing.assert_array_equal(infer_dimension_reduced(learned, rec, None, TARGETS, one),
                                  predict_nonmetered(learned, rec, None, TARGETS))


def test_reduction_uses_only_same_cluster_meters(learned):
    _, rec = record(learned, METERS)
    a = assignment([0, 0, 0, 1, 1, 1, 1, 1])
    pred, dims = infer_dimension_reduced(learned, rec, None, TARGETS, a, return_dims=True)
    assert dims == {0: 2 * rec.T, 1: 3 * rec.T}
    assert max(dims.values()) < len(METERS) * rec.T
    # cluster 0 target sees meters 0 and 2 only
    sub = rec.window(0, rec.T)
    direct = predict_nonmetered(learned, TimeSeriesRecord(values=sub.values[:, :2],
                                reporting_rate=1 / DT, meter_set=[0, 2]), None, [1])
    np.testing.assert_allclose(pred[:, 0], direct[:, 0], atol=1e-10)


def test_flagged_meter_leaves_a_cluster_orphaned(learned):
    _, rec = record(learned, METERS)
    a = assignment([0, 0, 0, 1, 1, 1, 1, 1])
    weights = MeterWeights.from_flags(METERS, [0, 2])
    with pytest.raises(ConfigError, match="without surviving meters"):
        infer_dimension_reduced(learned, rec, weights, TARGETS, a)


def test_singleton_aggregate_equals_the_individual_prediction(learned):
    _, rec = record(learned, METERS)
    a = assignment([0, 0, 0, 1, 1, 1, 1, 1])
    agg, ids = infer_aggregate(learned, rec, None, a, targets=[1, 4])
    ind = infer_dimension_reduced(learned, rec, None, [1, 4], a)
    assert ids.tolist() == [0, 1]
    np.testing.assert_allclose(agg, ind, atol=1e-10)


def test_aggregate_is_the_weighted_sum_of_member_predictions(learned):
    # conditional means are linear, so the aggregate of the means is the mean of the aggregate
    _, rec = record(learned, METERS)
    a = assignment([0, 0, 0, 1, 1, 1, 1, 1])
    agg, _ = infer_aggregate(learned, rec, None, a, targets=[4, 6])
    ind = infer_dimension_reduced(learned, rec, None, [4, 6], a)
    w = aggregate_weights(learned.model, [4, 6])
    np.testing.assert_allclose(agg[:, 0], ind @ w, atol=1e-10)


def test_unreduced_aggregate_uses_all_meters(learned):
    _, rec = record(learned, METERS)
    a = assignment([0, 0, 0, 1, 1, 1, 1, 1])
    agg, _ = infer_aggregate(learned, rec, None, a, targets=[4, 6], reduced=False)
    full = predict_nonmetered(learned, rec, None, [4, 6])
    w = aggregate_weights(learned.model, [4, 6])
    np.testing.assert_allclose(agg[:, 0], full @ w, atol=1e-10)


def test_aggregate_weights_follow_inertia(learned):
    w = aggregate_weights(learned.model, [1, 3])
    M = learned.model.inertia
    np.testing.assert_allclose(w, [M[1] / (M[1] + M[3]), M[3] / (M[1] + M[3])])
