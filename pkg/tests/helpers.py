"""Small random problem builders shared by the unit and acceptance tests."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from robustgp import GridModel, KernelTensor, LearnedCovariance, eigen_decompose
from robustgp.kernel import Moments


def random_grid(n, seed=0, gamma=None):
    """Connected random network on ``n`` generators."""
    rng = np.random.default_rng(seed)
    W = np.triu(rng.uniform(0.5, 3.0, (n, n)) * (rng.uniform(size=(n, n)) < 0.6), 1)
    for i in range(n - 1):
        W[i, i + 1] = max(W[i, i + 1], 1.0)
    W = W + W.T
    L = np.diag(W.sum(axis=1)) - W
    gamma = rng.uniform(0.5, 2.0) if gamma is None else gamma
    return GridModel(inertia=rng.uniform(1.0, 4.0, n), gamma=gamma, laplacian=L)


def moments_from(C, lags, meters, std=None):
    C = np.asarray(C, dtype=float)
    std = np.ones(C.shape[1]) if std is None else np.asarray(std, dtype=float)
    return Moments(lags=np.asarray(lags, dtype=float), ticks=np.arange(len(lags)), C=C, std=std,
                   meters=np.asarray(meters, dtype=int), n_samples=np.full(len(lags), 1000))


def model_moments(model, A, lags, meters):
    """Moments equal to ``Sigma_tau(A)`` exactly, with model standard deviations."""
    basis = eigen_decompose(model)
    kernel = KernelTensor.build(basis, lags)
    B = basis.speed_map()[np.asarray(meters)]
    C = np.stack([B @ (A * kernel[t]) @ B.T for t in lags])
    return moments_from(C, lags, meters, np.sqrt(np.diag(C[0])))


def random_psd(r, seed=0, rank=None):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((r, rank or r))
    return G @ G.T / (rank or r)


def tiny_l1_instance(seed):
    """Random L1 fitting problem with at most 28 unknowns and arbitrary sample moments."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    m = int(rng.integers(2, n + 1))
    model = random_grid(n, seed)
    lags = tuple(np.round(0.1 * np.arange(int(rng.integers(1, 4))), 10))
    meters = np.sort(rng.choice(n, m, replace=False))
    G = rng.standard_normal((m, m))
    C = np.stack([G @ G.T / m + 0.3 * rng.standard_normal((m, m)) for _ in lags])
    return model, moments_from(C, lags, meters, rng.uniform(0.5, 2.0, m))


def learned_with(model, A, lags, meters=None):
    basis = eigen_decompose(model)
    meters = np.arange(model.n) if meters is None else np.asarray(meters)
    return LearnedCovariance(A=np.asarray(A, dtype=float), kernel=KernelTensor.build(basis, lags),
                             basis=basis, model=model, meters=meters,
                             normalization=np.ones(len(meters)))


def low_mode_problem(seed, n=8, r=3, lags=(0.0, 0.2, 0.5)):
    """Every generator metered, only the ``r`` slowest modes excited (more meters than modes)."""
    model = random_grid(n, seed=seed)
    basis = replace(eigen_decompose(model), retained_modes=np.arange(r))
    kernel = KernelTensor.build(basis, lags)
    A = random_psd(r, seed=seed)
    B = basis.speed_map()
    C = np.stack([B @ (A * kernel[t]) @ B.T for t in lags])
    return model, basis, kernel, A, moments_from(C, lags, np.arange(n), np.sqrt(np.diag(C[0])))
