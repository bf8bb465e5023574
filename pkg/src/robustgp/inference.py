"""Gaussian-process conditioning of non-metered speeds on metered ones.

Space-time vectors are stacked meter-major: entry ``i * T + t`` is generator
``i`` at tick ``t``, and the covariance between ``(i, t)`` and ``(j, s)`` is
``Sigma_{(t - s) dt}(A)[i, j]``, so every block is block-Toeplitz.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError
from .kernel import LearnedCovariance
from .timeseries import TimeSeriesRecord, restrict_to_meters

JITTER_START = 1e-8
JITTER_MAX = 1e-4


def toeplitz_blocks(seq: np.ndarray, rows, cols, T: int) -> np.ndarray:
    """Stack lagged covariances into a ``(|rows| T) x (|cols| T)`` matrix.

    ``seq[k]`` is ``Sigma_{k dt}`` over a common index set; ``rows`` and
    ``cols`` index into that set.
    """
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    # entry (a t, b s) is Sigma_{t-s}[i, j], and Sigma_{s-t}[j, i] when s > t
    ahead = seq[:T][:, rows][:, :, cols].transpose(1, 2, 0)
    behind = seq[:T][:, cols][:, :, rows].transpose(2, 1, 0)
    out = np.empty((len(rows), T, len(cols), T))
    for t in range(T):
        out[:, t, :, :t + 1] = ahead[:, :, t::-1]
        out[:, t, :, t + 1:] = behind[:, :, 1:T - t]
    return out.reshape(len(rows) * T, len(cols) * T)


@dataclass
class JointBlocks:
    """Joint Gaussian blocks for observed (1) and target (2) space-time vectors."""

    sigma11: np.ndarray
    sigma21: np.ndarray
    sigma22: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    jitter: float = 0.0
    meters: np.ndarray = None
    targets: np.ndarray = None
    ticks: int = None
    _chol: tuple = None

    def factor(self):
        """Cholesky factor of ``sigma11`` with escalating diagonal jitter."""
        if self._chol is not None:
            return self._chol
        S = self.sigma11
        dim = S.shape[0]
        base = np.trace(S) / dim if dim else 1.0
        # no jitter first, then 1e-8 .. 1e-4 of the mean diagonal
        for rel in [0.0] + [JITTER_START * 10.0**k for k in range(5)]:
            if rel > JITTER_MAX * (1 + 1e-9):
                break
            jit = rel * base
            try:
                shifted = S.copy()
                shifted.flat[::dim + 1] += jit
                c = scipy.linalg.cho_factor(shifted, lower=True, overwrite_a=True,
                                            check_finite=False)
            except np.linalg.LinAlgError:
                continue
            self.jitter = jit
            self._chol = c
            return c
        raise NumericalError(
            f"sigma11 ({dim} x {dim}) is not positive definite even with "
            f"{JITTER_MAX:g} relative jitter"
        )


def add_observation_noise(sigma11, variances, ticks: int, noise: float):
    """Add ``noise`` times the mean meter variance to the diagonal of ``sigma11`` (in place)."""
    if noise < 0:
        raise ConfigError("observation noise must be nonnegative")
    if noise:
        idx = np.arange(sigma11.shape[0])
        sigma11[idx, idx] += noise * float(np.mean(variances))
    return sigma11


def assemble_blocks(learned: LearnedCovariance, meters, targets, ticks: int, dt: float = None,
                    with_sigma22: bool = True, factor: bool = True,
                    noise: float = 0.0) -> JointBlocks:
    """Space-time covariance blocks over ``ticks`` consecutive reporting instants.

    ``noise`` models white measurement error whose variance is ``noise``
    times the mean prior variance of the meters; 0 gives noiseless
    conditioning.
    """
    meters = np.asarray(meters, dtype=int)
    targets = np.asarray(targets, dtype=int)
    if meters.size == 0:
        raise ConfigError("no meters to condition on")
    if ticks < 1:
        raise ConfigError("ticks must be positive")
    if dt is None:
        dt = learned.report.get("dt")
        if dt is None:
            raise ConfigError("reporting interval dt is required")
    learned = learned.psd_part()
    union, inv = np.unique(np.concatenate([meters, targets]), return_inverse=True)
    mi, ti = inv[: len(meters)], inv[len(meters):]
    seq = learned.sigma_sequence(np.arange(ticks) * dt, union, union)
    s11 = add_observation_noise(toeplitz_blocks(seq, mi, mi, ticks),
                                np.diag(seq[0])[mi], ticks, noise)
    s21 = toeplitz_blocks(seq, ti, mi, ticks) if len(targets) else np.zeros((0, s11.shape[0]))
    s22 = (toeplitz_blocks(seq, ti, ti, ticks) if with_sigma22 and len(targets)
           else np.zeros((0, 0)))
    blocks = JointBlocks(sigma11=s11, sigma21=s21, sigma22=s22,
                         mu1=np.zeros(s11.shape[0]), mu2=np.zeros(s21.shape[0]),
                         meters=meters, targets=targets, ticks=ticks)
    if factor:
        blocks.factor()
    return blocks


def conditional_mean(blocks: JointBlocks, x1) -> np.ndarray:
    """``mu2 + Sigma21 Sigma11^{-1} (x1 - mu1)`` via the Cholesky factor."""
    x1 = np.asarray(x1, dtype=float)
    if x1.shape[0] != blocks.sigma11.shape[0]:
        raise ConfigError(
            f"observation length {x1.shape[0]} does not match sigma11 ({blocks.sigma11.shape[0]})"
        )
    alpha = scipy.linalg.cho_solve(blocks.factor(), (x1.T - blocks.mu1).T, check_finite=False)
    return (blocks.mu2 + (blocks.sigma21 @ alpha).T).T


def conditional_cov(blocks: JointBlocks) -> np.ndarray:
    """``Sigma22 - Sigma21 Sigma11^{-1} Sigma21^T`` (symmetrized)."""
    if blocks.sigma22.shape[0] != blocks.sigma21.shape[0]:
        raise ConfigError("sigma22 was not assembled")
    c, lower = blocks.factor()
    W = scipy.linalg.solve_triangular(c, blocks.sigma21.T, lower=lower, check_finite=False)
    post = blocks.sigma22 - W.T @ W
    return 0.5 * (post + post.T)


def conditional_var(blocks: JointBlocks, sigma22_diag) -> np.ndarray:
    c, lower = blocks.factor()
    W = scipy.linalg.solve_triangular(c, blocks.sigma21.T, lower=lower, check_finite=False)
    return sigma22_diag - np.einsum("ij,ij->j", W, W)


def stack_observations(record: TimeSeriesRecord) -> np.ndarray:
    """Meter-major stacking of a ``T x m`` record."""
    return np.asarray(record.values, dtype=float).T.reshape(-1)


def unstack(vec, n_series: int, T: int) -> np.ndarray:
    return np.asarray(vec).reshape(n_series, T).T


def apply_weights(record: TimeSeriesRecord, weights) -> TimeSeriesRecord:
    if weights is None:
        return record
    from .identification import apply_mask_to_inference_inputs
    return apply_mask_to_inference_inputs(record, weights)


def predict_nonmetered(learned: LearnedCovariance, record: TimeSeriesRecord, weights, targets,
                       return_std: bool = False, noise: float = 0.0):
    """Posterior mean (and optional standard deviation) of ``targets`` over the record window.

    Columns flagged in ``weights`` are dropped before conditioning.  Returns a
    ``T x len(targets)`` array, or ``(mean, std)`` with ``return_std``.
    """
    targets = np.asarray(targets, dtype=int)
    kept = apply_weights(record, weights)
    overlap = np.intersect1d(targets, kept.meter_set)
    if overlap.size:
        raise ConfigError(f"targets {overlap.tolist()} are metered; targets must be non-metered")
    blocks = assemble_blocks(learned, kept.meter_set, targets, record.T, record.dt,
                             with_sigma22=False, noise=noise)
    mean = unstack(conditional_mean(blocks, stack_observations(kept)), len(targets), record.T)
    if not return_std:
        return mean
    prior = learned.sigma(0.0, targets) if _has_zero(learned) else \
        learned.sigma_sequence([0.0], targets, targets)[0]
    var = conditional_var(blocks, np.repeat(np.diag(prior), record.T))
    std = unstack(np.sqrt(np.maximum(var, 0.0)), len(targets), record.T)
    return mean, std


def _has_zero(learned):
    return bool(np.any(np.abs(learned.kernel.lags) <= 1e-12))


def predict_window(learned, record, weights, targets, start: int = 0, length: int = None,
                   return_std: bool = False, noise: float = 0.0):
    """:func:`predict_nonmetered` on ticks ``start .. start + length - 1``."""
    length = record.T - start if length is None else length
    return predict_nonmetered(learned, record.window(start, length), weights, targets,
                              return_std=return_std, noise=noise)


def condition_on(learned, record: TimeSeriesRecord, meters, targets) -> np.ndarray:
    """Posterior mean of ``targets`` given only the ``meters`` columns of ``record``."""
    sub = restrict_to_meters(record, meters)
    blocks = assemble_blocks(learned, sub.meter_set, targets, sub.T, sub.dt, with_sigma22=False)
    return unstack(conditional_mean(blocks, stack_observations(sub)), len(targets), sub.T)


def predict_stitched(learned, record: TimeSeriesRecord, weights, targets, window: int,
                     noise: float = 0.0, return_std: bool = False):
    """Predict the whole record in consecutive windows of ``window`` ticks.

    The last window is widened backwards to full length when the record
    is not a whole number of windows, so every block has the same size.
    """
    targets = np.asarray(targets, dtype=int)
    if window < 2:
        raise ConfigError("window must cover at least 2 ticks")
    window = min(window, record.T)
    out = np.empty((record.T, targets.size))
    std = np.empty_like(out) if return_std else None
    start = 0
    while start < record.T:
        lo = min(start, record.T - window)
        pred = predict_nonmetered(learned, record.window(lo, window), weights, targets,
                                  return_std=return_std, noise=noise)
        if return_std:
            pred, sd = pred
            std[start:lo + window] = sd[start - lo:]
        out[start:lo + window] = pred[start - lo:]
        start = lo + window
    return (out, std) if return_std else out
