"""Randomized invariants."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import best_medoids
from robustgp import build_mask, kmedoids
from robustgp.bench import normalized_rmse
from robustgp.inference import toeplitz_blocks

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(arrays(float, st.integers(1, 12), elements=st.sampled_from([0.0, 1.0])))
def test_binary_mask_is_symmetric_and_complementary(w):
    W, M = build_mask(w)
    np.testing.assert_array_equal(W, W.T)
    np.testing.assert_array_equal(W + M, np.ones_like(W))
    trusted = w == 0
    np.testing.assert_array_equal(M, np.outer(trusted, trusted))


@given(arrays(float, 20, elements=finite), arrays(float, 20, elements=finite),
       st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
def test_nrmse_ignores_affine_rescaling(est, act, scale, shift):
    if np.ptp(act) < 1e-3:
        return
    a = normalized_rmse(est, act)
    b = normalized_rmse(scale * est + shift, scale * act + shift)
    assert np.isclose(a, b, rtol=1e-6, atol=1e-12)


@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_toeplitz_assembly_is_symmetric_on_a_shared_set(m, T, seed):
    rng = np.random.default_rng(seed)
    seq = rng.standard_normal((T, m, m))
    seq[0] = seq[0] + seq[0].T
    S = toeplitz_blocks(seq, np.arange(m), np.arange(m), T)
    np.testing.assert_array_equal(S, S.T)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_kmedoids_is_never_better_than_the_optimum(n, seed):
    pts = np.random.default_rng(seed).standard_normal((n, 2))
    D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    k = 1 + seed % n
    medoids, membership, cost, history = kmedoids(D, k, seed=seed % 7)
    assert cost >= best_medoids(D, k)[1] - 1e-12
    assert len(set(medoids.tolist())) == k
    # every point sits with its nearest medoid
    np.testing.assert_allclose(D[np.arange(n), medoids[membership]], D[:, medoids].min(axis=1))
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
