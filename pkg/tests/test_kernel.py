import warnings

import numpy as np
import pytest

from robustgp import (ConfigError, FitConfig, KernelTensor, LearnedCovariance, TimeSeriesRecord,
                      eigen_decompose, kernel_matrix, sample_moments)
from robustgp.kernel import (kernel_matrix_quad, kernel_stack, lags_to_ticks, load_learned,
                             save_learned, sigma_of_A, to_correlation)
from robustgp.learning import fit_l2
from robustgp.simulate import eigeninput_covariance
from test_simulate import grounded_model, lyapunov_speed_covariance


def learned_for(model, A, lags):
    basis = eigen_decompose(model)
    kernel = KernelTensor.build(basis, lags)
    return LearnedCovariance(A=np.asarray(A, dtype=float), kernel=kernel, basis=basis,
                             model=model, meters=np.arange(model.n),
                             normalization=np.ones(model.n))


def test_zero_lag_kernel_is_symmetric_with_positive_diagonal(small_model):
    K = kernel_matrix(eigen_decompose(small_model), 0.0)
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    assert np.all(np.diag(K) > 0)


def test_velocity_variance_of_a_single_oscillator():
    # y'' + g y' + lam y = unit white noise has Var(y') = 1 / (2 g) for any lam
    for gamma, lam in [(0.4, 4.0), (1.0, 0.3), (2.0, 1.0), (3.0, 0.5)]:
        K = kernel_stack(gamma, [lam], [0.0])[0, 0, 0]
        assert K == pytest.approx(1.0 / (2.0 * gamma), rel=1e-10)


def test_closed_form_matches_quadrature(small_model):
    basis = eigen_decompose(small_model)
    for tau in (0.0, 0.3, 1.7):
        np.testing.assert_allclose(kernel_matrix(basis, tau), kernel_matrix_quad(basis, tau),
                                   rtol=1e-6, atol=1e-10)


def test_negative_lag_is_the_transpose():
    K = kernel_stack(0.7, [0.5, 2.0, 9.0], [0.4, -0.4])
    np.testing.assert_allclose(K[1], K[0].T, atol=1e-14)


def test_critically_damped_mode_is_continuous():
    gamma = 2.0
    crit = kernel_stack(gamma, [1.0, 3.0], [0.0, 0.5])
    near = kernel_stack(gamma, [1.0 + 1e-7, 3.0], [0.0, 0.5])
    np.testing.assert_allclose(crit, near, rtol=1e-5, atol=1e-9)


def test_kernel_decays_at_long_lags():
    gamma = 0.5
    lam = [0.0, 0.8, 4.0, 20.0]
    K0 = kernel_stack(gamma, lam, [0.0])[0]
    far = kernel_stack(gamma, lam, [40.0 / gamma])[0]
    assert np.abs(far).max() < 1e-6 * np.abs(K0).max()


def test_undamped_model_is_rejected():
    with pytest.raises(ConfigError):
        kernel_stack(0.0, [1.0], [0.0])


@pytest.mark.parametrize("tau", [0.0, 0.25, 1.0])
def test_sigma_of_true_A_matches_lyapunov_oracle(tau):
    model = grounded_model()
    Q = np.array([[1.0, 0.3, 0.0], [0.3, 0.5, 0.1], [0.0, 0.1, 0.8]])
    learned = learned_for(model, eigeninput_covariance(model, Q), [tau])
    np.testing.assert_allclose(sigma_of_A(learned, tau), lyapunov_speed_covariance(model, Q, tau),
                               rtol=1e-8, atol=1e-12)


def test_sigma_of_A_is_linear(small_model):
    rng = np.random.default_rng(0)
    A1 = rng.standard_normal((4, 4))
    A1 = A1 + A1.T
    A2 = rng.standard_normal((4, 4))
    A2 = A2 + A2.T
    lags = [0.0, 0.5]
    zero = learned_for(small_model, np.zeros((4, 4)), lags)
    assert np.all(sigma_of_A(zero, 0.5) == 0.0)
    s1 = sigma_of_A(learned_for(small_model, A1, lags), 0.5, [0, 2])
    s2 = sigma_of_A(learned_for(small_model, A2, lags), 0.5, [0, 2])
    s12 = sigma_of_A(learned_for(small_model, A1 + A2, lags), 0.5, [0, 2])
    np.testing.assert_allclose(s12, s1 + s2, atol=1e-12)


def test_sigma_requires_a_kernel_lag(small_model):
    learned = learned_for(small_model, np.eye(4), [0.0])
    with pytest.raises(ConfigError):
        sigma_of_A(learned, 0.3)


def test_sigma_sequence_agrees_with_sigma(small_model):
    learned = learned_for(small_model, np.eye(4), [0.0, 0.2])
    seq = learned.sigma_sequence([0.0, 0.2], [1, 3], [0, 2])
    np.testing.assert_allclose(seq[1], sigma_of_A(learned, 0.2, [1, 3], [0, 2]), atol=1e-14)


def test_moments_of_a_constant_signal_vanish():
    rec = TimeSeriesRecord(values=np.full((20, 2), 3.5), reporting_rate=10.0)
    mom = sample_moments(rec, [0.0], scale="std")
    np.testing.assert_allclose(mom.C[0], 0.0, atol=1e-15)


def test_moments_hand_computation():
    # centered columns: (-2, 0, 2) and (0, -2, 2)
    rec = TimeSeriesRecord(values=[[1.0, 2.0], [3.0, 0.0], [5.0, 4.0]], reporting_rate=1.0)
    mom = sample_moments(rec, [0.0, 1.0], scale="std")
    np.testing.assert_allclose(mom.C[0], [[8 / 3, 4 / 3], [4 / 3, 8 / 3]], atol=1e-14)
    # C_1[a, b] = mean over t of z_a(t + 1) z_b(t)
    np.testing.assert_allclose(mom.C[1], [[0.0, -2.0], [2.0, -2.0]], atol=1e-14)
    assert mom.n_samples.tolist() == [3, 2]


def test_quarter_second_lag_set_snaps_to_ticks():
    lags = [0, 0.132, 0.264, 0.396, 0.528, 0.660, 0.792]
    with pytest.warns(UserWarning, match="snapped"):
        ticks = lags_to_ticks(lags, 30.0)
    np.testing.assert_array_equal(ticks, [0, 4, 8, 12, 16, 20, 24])


def test_half_tick_lag_is_rejected():
    with pytest.raises(ConfigError, match="nearest"):
        lags_to_ticks([0.05], 10.0)
    with pytest.raises(ConfigError):
        lags_to_ticks([0.13], 10.0, snap=False)


def test_lag_must_be_shorter_than_record():
    rec = TimeSeriesRecord(values=np.zeros((5, 1)) + np.arange(5)[:, None], reporting_rate=1.0)
    with pytest.raises(ConfigError):
        sample_moments(rec, [0, 5])


def random_record(scales=(1.0, 1.0, 1.0), T=500, seed=0):
    Z = np.random.default_rng(seed).standard_normal((T, len(scales)))
    Z[1:] += 0.5 * Z[:-1]
    return TimeSeriesRecord(values=Z * np.asarray(scales), reporting_rate=10.0)


def test_unit_variance_data_is_unchanged_by_normalization():
    rec = random_record()
    mom = sample_moments(rec, [0.0, 0.1], scale="std")
    unit = to_correlation(mom, np.ones(3))
    np.testing.assert_allclose(unit.C, mom.C)


def test_normalized_moments_are_scale_invariant():
    a = to_correlation(sample_moments(random_record(), [0.0, 0.2], scale="std"))
    b = to_correlation(sample_moments(random_record((1.0, 10.0, 1.0)), [0.0, 0.2], scale="std"))
    np.testing.assert_allclose(a.C, b.C, atol=1e-12)
    np.testing.assert_allclose(np.diag(a.C[0]), 1.0)


def test_flat_meter_cannot_be_normalized():
    values = np.random.default_rng(0).standard_normal((30, 2))
    values[:, 1] = 1.0
    mom = sample_moments(TimeSeriesRecord(values=values, reporting_rate=1.0), [0], scale="std")
    with pytest.raises(ConfigError, match="meter"):
        to_correlation(mom)


def test_mad_scale_matches_std_on_gaussian_data():
    Z = np.random.default_rng(1).standard_normal((200_000, 2))
    rec = TimeSeriesRecord(values=Z, reporting_rate=1.0)
    np.testing.assert_allclose(sample_moments(rec, [0], scale="mad").std,
                               sample_moments(rec, [0], scale="std").std, rtol=0.01)


def test_learned_covariance_round_trip(tmp_path, small_model):
    rec = random_record((1.0, 2.0, 1.0, 1.5), T=300)
    basis = eigen_decompose(small_model)
    mom = sample_moments(rec, [0.0, 0.1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_l2(mom, KernelTensor.build(basis, mom.lags), basis, small_model,
                     FitConfig(objective="l2", lags=(0.0, 0.1)))
    save_learned(fit, tmp_path / "fit.npz")
    back = load_learned(tmp_path / "fit.npz", small_model)
    np.testing.assert_array_equal(back.A, fit.A)
    np.testing.assert_array_equal(back.kernel.lags, fit.kernel.lags)
    np.testing.assert_array_equal(back.meters, fit.meters)
    assert back.objective == "l2"
    np.testing.assert_allclose(back.sigma(0.1), fit.sigma(0.1))


def test_selecting_blocks_commutes_with_evaluation(small_model):
    learned = learned_for(small_model, np.diag([0.5, 1.0, 2.0, 0.7]), [0.0, 0.3])
    full = sigma_of_A(learned, 0.3)
    rows, cols = [3, 0], [1, 2]
    np.testing.assert_allclose(sigma_of_A(learned, 0.3, rows, cols), full[np.ix_(rows, cols)],
                               atol=1e-14)
