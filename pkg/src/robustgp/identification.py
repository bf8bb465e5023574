"""Locating corrupted meters with a sparse weight vector over the covariance mask.

Meter ``i`` gets a weight ``w_i`` in ``[0, 1]``; 0 means trusted and 1
means corrupted.  Entry ``(a, b)`` of every lagged residual is kept with
weight ``M_ab = (1 - w_a)(1 - w_b)``, so a flagged meter removes its whole
row and column.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericalError
from .kernel import LearnedCovariance, Moments
from .learning import FitConfig, fit_l1, residuals
from .timeseries import TimeSeriesRecord, restrict_to_meters

THRESHOLD = 0.5
N_RESTARTS = 8


@dataclass(frozen=True)
class MeterWeights:
    """Continuous weights, their 0.5-threshold binarization and the run's bookkeeping.

    ``meters`` are the generator indices the weights refer to, in record
    column order.  Exactly 0.5 binarizes to "good".
    """

    w: np.ndarray
    beta: float
    meters: np.ndarray = None
    threshold: float = THRESHOLD
    objective: float = float("nan")
    restarts: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if np.any(w < 0) or np.any(w > 1) or not np.all(np.isfinite(w)):
            raise ConfigError("meter weights must lie in [0, 1]")
        meters = np.arange(w.size) if self.meters is None else np.asarray(self.meters, dtype=int)
        if meters.shape != w.shape:
            raise ConfigError("one meter index per weight is required")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "meters", meters)

    @property
    def binarized(self) -> np.ndarray:
        return self.w > self.threshold

    @property
    def flagged(self) -> np.ndarray:
        """Generator indices of meters binarized as corrupted."""
        return self.meters[self.binarized]

    def report(self) -> str:
        lines = [f"beta {self.beta:.17g}", f"objective {self.objective:.17g}",
                 "meter,w,flagged"]
        for g, wi, b in zip(self.meters, self.w, self.binarized):
            lines.append(f"{int(g)},{wi:.17g},{int(b)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "MeterWeights":
        """Inverse of :meth:`report`."""
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        try:
            beta = float(lines[0].split()[1])
            objective = float(lines[1].split()[1])
            rows = [ln.split(",") for ln in lines[3:]]
            meters = [int(r[0]) for r in rows]
            w = [float(r[1]) for r in rows]
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"not an identification report ({exc})") from exc
        return cls(w=np.array(w), beta=beta, meters=np.array(meters, dtype=int),
                   objective=objective)

    @classmethod
    def clean(cls, meters, beta: float = 0.0) -> "MeterWeights":
        meters = np.asarray(meters, dtype=int)
        return cls(w=np.zeros(meters.size), beta=beta, meters=meters)

    @classmethod
    def from_flags(cls, meters, flagged, beta: float = 0.0) -> "MeterWeights":
        meters = np.asarray(meters, dtype=int)
        return cls(w=np.isin(meters, list(flagged)).astype(float), beta=beta, meters=meters)


def build_mask(w):
    """``W = w w^T + w (1-w)^T + (1-w) w^T`` and ``M = 1 - W``."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if np.any(w < 0) or np.any(w > 1) or not np.all(np.isfinite(w)):
        raise ConfigError("mask weights must lie in [0, 1]")
    u = 1.0 - w
    W = np.outer(w, w) + np.outer(w, u) + np.outer(u, w)
    return W, 1.0 - W


def residual_mass(learned: LearnedCovariance, moments: Moments, lags) -> np.ndarray:
    """``G = sum_tau |Sigma_tau(A) - C_tau|`` on the correlation scale."""
    return np.abs(residuals(learned, moments, lags)).sum(axis=0)


def mask_objective(G, w, beta: float) -> float:
    """Masked L1 residual plus ``beta * sum(w)``."""
    w = np.asarray(w, dtype=float)
    u = 1.0 - w
    return float(u @ G @ u + beta * w.sum())


def _projected_gradient(G, beta, w0, max_iter=20000, tol=1e-10):
    H = G + G.T
    step = 1.0 / max(np.linalg.norm(H, 2), 1e-300)
    w = np.clip(w0, 0.0, 1.0)
    for it in range(max_iter):
        grad = -H @ (1.0 - w) + beta
        w_new = np.clip(w - step * grad, 0.0, 1.0)
        if np.max(np.abs(w_new - w)) <= tol:
            return w_new, True
        w = w_new
    # converged iff the projected-gradient map is (nearly) stationary
    grad = -H @ (1.0 - w) + beta
    gap = np.max(np.abs(np.clip(w - step * grad, 0.0, 1.0) - w))
    return w, gap <= 1e-8


def optimize_weights(G, beta: float, restarts: int = N_RESTARTS, seed: int = 0):
    """Multi-start projected gradient for ``min u^T G u + beta sum(w)`` over the box.

    Starts: all zeros, then ``restarts`` uniform draws.  The best final
    objective wins; ties go to the earliest start.  Returns
    ``(w, objective, per_start_objectives)``.
    """
    G = np.asarray(G, dtype=float)
    m = G.shape[0]
    rng = np.random.default_rng(seed)
    starts = [np.zeros(m)] + [rng.uniform(0.0, 1.0, m) for _ in range(restarts)]
    best, best_obj, objs, any_ok = None, np.inf, [], False
    for w0 in starts:
        w, ok = _projected_gradient(G, beta, w0)
        any_ok |= ok
        obj = mask_objective(G, w, beta)
        objs.append(obj)
        if obj < best_obj:
            best, best_obj = w, obj
    if not any_ok:
        raise NumericalError(
            f"weight optimization did not converge; best iterate {np.round(best, 4).tolist()} "
            f"(objective {best_obj:.6g})"
        )
    return best, best_obj, tuple(objs)


def identify(moments: Moments, learned: LearnedCovariance, beta: float, lags=None,
             restarts: int = N_RESTARTS, seed: int = 0, refine: bool = False,
             max_rounds: int = 5) -> MeterWeights:
    """Weights minimizing the masked multi-lag L1 residual of a fixed fit plus ``beta ||w||_1``.

    With ``refine`` the fit is redone on the unmasked entries and the
    weights re-optimized until the flagged set stops changing.
    """
    if not beta > 0:
        raise ConfigError("beta must be positive")
    lags = learned.kernel.lags if lags is None else np.atleast_1d(np.asarray(lags, dtype=float))
    meters = np.asarray(moments.meters, dtype=int)
    G = residual_mass(learned, moments, lags)
    w, obj, objs = optimize_weights(G, beta, restarts, seed)
    out = _checked(MeterWeights(w=w, beta=beta, meters=meters, objective=obj, restarts=objs))
    if not refine:
        return out
    for _ in range(max_rounds):
        _, M = build_mask(out.binarized.astype(float))
        cfg = FitConfig(objective="l1", lags=tuple(float(t) for t in lags))
        refit = fit_l1(moments, learned.kernel, learned.basis, learned.model, cfg,
                       weights=np.broadcast_to(M, (len(lags),) + M.shape))
        G = residual_mass(refit, moments, lags)
        w, obj, objs = optimize_weights(G, beta, restarts, seed)
        nxt = _checked(MeterWeights(w=w, beta=beta, meters=meters, objective=obj, restarts=objs))
        if np.array_equal(nxt.binarized, out.binarized):
            return nxt
        out = nxt
    return out


def _checked(weights: MeterWeights) -> MeterWeights:
    if weights.binarized.all():
        raise NumericalError(
            f"every meter was flagged at beta={weights.beta:g}; increase beta"
        )
    return weights


def apply_mask_to_inference_inputs(record: TimeSeriesRecord, weights) -> TimeSeriesRecord:
    """Drop the columns of flagged meters."""
    if weights is None:
        return record
    flagged = set(int(g) for g in weights.flagged)
    if not flagged:
        return record
    keep = [int(g) for g in record.meter_set if int(g) not in flagged]
    if not keep:
        raise ConfigError("every meter is flagged; nothing left to condition on")
    return restrict_to_meters(record, keep)


def union(a: MeterWeights, b: MeterWeights) -> MeterWeights:
    """Weights flagging every meter flagged by either input."""
    if not np.array_equal(a.meters, b.meters):
        raise ConfigError("weights refer to different meters")
    w = (a.binarized | b.binarized).astype(float)
    return replace(a, w=w, objective=float("nan"), restarts=())
