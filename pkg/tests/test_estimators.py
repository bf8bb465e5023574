import numpy as np
import pytest
from sklearn.base import clone

from oracles import best_medoids
from robustgp import (ConfigError, FitConfig, GridGPRegressor, KMedoids, KernelTensor,
                      SimulationConfig, eigen_decompose, fit_l1, kmedoids, predict_nonmetered,
                      sample_moments, simulate)
from robustgp.bench import normalized_rmse
from robustgp.timeseries import restrict_to_meters

LAGS = tuple(np.round(0.1 * np.arange(11), 10))


@pytest.fixture(scope="module")
def desk_series(desk_case):
    cfg = SimulationConfig(duration=1500.0, reporting_rate=30, integration_step=1 / 600,
                           Q=desk_case.Q, seed=3)
    truth = simulate(desk_case.model, cfg)
    return desk_case, truth


def regressor(case, **kw):
    return GridGPRegressor(model=case.model, meters=case.meters.tolist(),
                           targets=case.targets.tolist(), lags=LAGS, window=10.0, **kw)


def test_regressor_params_round_trip_through_clone(desk_case):
    est = regressor(desk_case, beta=3.0)
    twin = clone(est)
    assert twin.get_params()["beta"] == 3.0
    assert twin.get_params()["lags"] == LAGS
    assert twin is not est


def test_regressor_matches_the_functional_pipeline(desk_series):
    case, truth = desk_series
    X = truth.values[:, case.meters]
    est = regressor(case).fit(X)
    obs = restrict_to_meters(truth, case.meters)
    mom = sample_moments(obs, LAGS)
    basis = eigen_decompose(case.model)
    learned = fit_l1(mom, KernelTensor.build(basis, LAGS), basis, case.model, FitConfig(lags=LAGS))
    np.testing.assert_allclose(est.learned_.A, learned.A, rtol=1e-9, atol=1e-12)
    span = slice(30000, 30300)
    pred = est.predict(X[span])
    assert pred.shape == (300, 2)
    want = predict_nonmetered(learned, obs.window(30000, 300), None, case.targets)
    np.testing.assert_allclose(pred, want, rtol=1e-6, atol=1e-9)
    for k, t in enumerate(case.targets):
        assert normalized_rmse(pred[:, k], truth.values[span, t]) < 0.1


def test_regressor_returns_std(desk_series):
    case, truth = desk_series
    X = truth.values[:, case.meters]
    est = regressor(case).fit(X)
    mean, std = est.predict(X[:300], return_std=True)
    assert mean.shape == std.shape and np.all(std >= 0)


def test_regressor_flags_a_corrupted_column(desk_series):
    case, truth = desk_series
    X = np.array(truth.values[:, case.meters])
    rng = np.random.default_rng(0)
    X[:, 1] = rng.permutation(X[:, 1])  # meter 1 replaced by shuffled values
    est = regressor(case, beta=2.0).fit(X)
    assert est.flagged_.tolist() == [case.meters[1]]


def test_regressor_validation(desk_case):
    with pytest.raises(ConfigError):
        GridGPRegressor().fit(np.zeros((10, 4)))
    with pytest.raises(ConfigError, match="disjoint"):
        GridGPRegressor(model=desk_case.model, meters=[0, 1], targets=[1]).fit(np.zeros((10, 2)))
    with pytest.raises(ConfigError, match="shape"):
        regressor(desk_case).fit(np.zeros((10, 3)))


def test_kmedoids_estimator_matches_function():
    pts = np.random.default_rng(2).standard_normal((12, 2))
    D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    est = KMedoids(n_clusters=3, random_state=4).fit(D)
    medoids, labels, cost, _ = kmedoids(D, 3, seed=4)
    np.testing.assert_array_equal(est.medoid_indices_, medoids)
    np.testing.assert_array_equal(est.labels_, labels)
    assert est.inertia_ == cost
    assert est.inertia_ >= best_medoids(D, 3)[1] - 1e-12
    np.testing.assert_array_equal(est.predict(D), labels)
    np.testing.assert_array_equal(est.fit_predict(D), labels)


def test_kmedoids_rejects_non_square_input():
    with pytest.raises(ConfigError):
        KMedoids().fit(np.zeros((3, 4)))
