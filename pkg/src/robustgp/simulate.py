"""Euler-Maruyama integration of the stochastic linear swing equations."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ConfigError, NumericalError
from .grid import GridModel, eigen_decompose
from .timeseries import TimeSeriesRecord

logger = logging.getLogger(__name__)

UNSTABLE_NORM = 1e6
_CHUNK = 200_000


@dataclass(frozen=True)
class SimulationConfig:
    """Integration and reporting settings.

    ``Q`` is the white-noise intensity of the power mismatch ``p(t)``
    (``sigma^2 I`` when only ``sigma`` is given).  ``duration`` is the
    length of the reported record; a burn-in of ``burn_in`` seconds
    (default ``min(20 / gamma, duration)``) is simulated first and dropped.
    ``impulse`` optionally kicks ``p`` at ``t = 0``, so speeds start at
    ``M^{-1} impulse`` (useful with ``Q = 0``).
    """

    duration: float
    reporting_rate: float
    integration_step: float = 1e-4
    Q: np.ndarray = None
    sigma: float = 1.0
    seed: int = 0
    burn_in: float = None
    impulse: np.ndarray = None
    units: str = "per-unit speed deviation"

    def __post_init__(self):
        if not (self.duration > 0 and self.reporting_rate > 0 and self.integration_step > 0):
            raise ConfigError("duration, reporting_rate and integration_step must be positive")
        if self.integration_step > 1.0 / (2.0 * self.reporting_rate) + 1e-15:
            raise ConfigError(
                f"integration_step {self.integration_step} exceeds half the reporting interval "
                f"{1.0 / (2.0 * self.reporting_rate)}"
            )
        if self.Q is not None:
            Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
            if Q.shape[0] != Q.shape[1] or np.abs(Q - Q.T).max(initial=0) > 1e-10:
                raise ConfigError("Q must be a symmetric matrix")
            if np.linalg.eigvalsh(Q).min() < -1e-10:
                raise ConfigError("Q must be positive semidefinite")
            object.__setattr__(self, "Q", Q)
        if self.burn_in is not None and self.burn_in < 0:
            raise ConfigError("burn_in must be nonnegative")

    def noise_intensity(self, n: int) -> np.ndarray:
        if self.Q is None:
            return self.sigma**2 * np.eye(n)
        if self.Q.shape != (n, n):
            raise ConfigError(f"Q has shape {self.Q.shape}, model has {n} generators")
        return self.Q

    def stride(self) -> int:
        ratio = 1.0 / (self.reporting_rate * self.integration_step)
        k = int(round(ratio))
        if abs(ratio - k) > 1e-6 * ratio:
            raise ConfigError(
                f"reporting interval {1 / self.reporting_rate} s is not a whole number of "
                f"integration steps of {self.integration_step} s"
            )
        return k

    def burn_in_for(self, gamma: float) -> float:
        if self.burn_in is None:
            return min(20.0 / gamma, self.duration) if gamma > 0 else 0.0
        if self.burn_in > self.duration:
            raise ConfigError(
                f"duration {self.duration} s is shorter than the burn-in {self.burn_in} s"
            )
        return self.burn_in


def _psd_factor(Q):
    s, U = np.linalg.eigh(Q)
    return U * np.sqrt(np.clip(s, 0.0, None))


def simulate(model: GridModel, config: SimulationConfig) -> TimeSeriesRecord:
    """Integrate from rest, drop the burn-in and decimate to the reporting rate.

    Euler-Maruyama is equivariant under the modal change of variables, so the
    recursion is run per mode: ``y+ = y + h v`` and
    ``v+ = v - h (gamma v + lam y) + xi`` with ``xi = V^T M^{-1/2} dW``, which is
    a second-order IIR filter of the noise sequence.
    """
    basis = eigen_decompose(model)
    n, h, gamma = model.n, config.integration_step, model.gamma
    stride = config.stride()
    burn = config.burn_in_for(gamma)
    burn_ticks = int(round(burn * config.reporting_rate))
    T = int(round(config.duration * config.reporting_rate))
    n_steps = (burn_ticks + T - 1) * stride + 1

    to_modal = basis.V / np.sqrt(model.inertia)[:, None]      # xi = dW @ to_modal
    to_speed = (basis.V / np.sqrt(model.inertia)[:, None]).T   # w = v @ to_speed
    Q = config.noise_intensity(n)
    noise_map = np.sqrt(h) * _psd_factor(Q).T @ to_modal if np.any(Q) else None

    lam = basis.lam
    growth = 1.0 - h * gamma + h * h * lam
    if np.any(growth >= 1.0):
        bad = float(lam[np.argmax(growth)])
        logger.warning("step %.3g s is unstable for mode lam=%.4g; reduce integration_step",
                       h, bad)
    b = np.array([0.0, 1.0, -1.0])
    dens = [np.array([1.0, h * gamma - 2.0, 1.0 - h * gamma + h * h * l]) for l in lam]
    zi = np.zeros((n, 2))
    ypos = np.zeros(n)
    rng = np.random.default_rng(config.seed)

    keep = np.arange(burn_ticks, burn_ticks + T) * stride
    out = np.empty((T, n))
    filled = 0
    start = 0
    while start < n_steps:
        stop = min(start + _CHUNK, n_steps)
        xi = np.zeros((stop - start, n))
        if noise_map is not None:
            xi += rng.standard_normal((stop - start, n)) @ noise_map
        kicked = start == 0 and config.impulse is not None
        if kicked:
            # a kick one step before t = 0 leaves v(0) = kick, y(0) = 0
            kick = np.asarray(config.impulse, dtype=float) @ to_modal
            xi = np.vstack([kick, xi])
        v = np.empty_like(xi)
        for i in range(n):
            v[:, i], zi[i] = signal.lfilter(b, dens[i], xi[:, i], zi=zi[i])
        if kicked:
            v = v[1:]
        # modal displacement only feeds the stability check
        y = ypos + h * np.concatenate([np.zeros((1, n)), np.cumsum(v[:-1], axis=0)])
        ypos = y[-1] + h * v[-1]
        peak = max(np.abs(v).max(), np.abs(y).max()) / np.sqrt(model.inertia.min())
        if not np.isfinite(peak) or peak > UNSTABLE_NORM:
            raise NumericalError(
                f"integration diverged (state norm {peak:.3g} > {UNSTABLE_NORM:g}) "
                f"with integration_step {h}; reduce the step"
            )
        sel = keep[(keep >= start) & (keep < stop)]
        if sel.size:
            out[filled:filled + sel.size] = v[sel - start] @ to_speed
            filled += sel.size
        start = stop

    meta = {"seed": config.seed, "units": config.units, "burn_in": burn,
            "integration_step": h, "source": "simulate"}
    return TimeSeriesRecord(values=out, reporting_rate=config.reporting_rate,
                            start_time=burn_ticks / config.reporting_rate,
                            meter_set=np.arange(n), generator_ids=model.generator_ids,
                            metadata=meta)


def eigeninput_covariance(model: GridModel, Q) -> np.ndarray:
    """Covariance ``V^T M^{-1/2} Q M^{-1/2} V`` of the modal inputs (the true ``A``)."""
    basis = eigen_decompose(model)
    T = basis.V / np.sqrt(model.inertia)[:, None]
    return T.T @ np.asarray(Q, dtype=float) @ T
