"""Spatio-temporal speed covariance of the modal swing model.

For unit white eigeninputs, the velocity of mode ``i`` is the impulse-response
derivative ``dh_i`` convolved with the input, so for ``tau >= 0``::

    K_tau[i, j] = integral_0^inf dh_i(tau + s) dh_j(s) ds

and generator-speed covariances follow as
``E[w(t + tau) w(t)^T] = M^{-1/2} V (A * K_tau) V^T M^{-1/2}``, with ``A`` the
eigeninput covariance and ``*`` the entrywise product.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .errors import ConfigError, NumericalError
from .grid import EigenBasis, GridModel, eigen_decompose

logger = logging.getLogger(__name__)

LAG_ATOL = 1e-9
# relative root separation below which a mode is treated as critically damped
_CRITICAL_RTOL = 1e-6


def _poles(gamma, lam):
    """Roots of ``s^2 + gamma s + lam`` and the residues of the impulse-response derivative."""
    lam = np.asarray(lam, dtype=float)
    disc = np.sqrt((gamma**2 - 4.0 * lam).astype(complex))
    p = np.stack([(-gamma + disc) / 2.0, (-gamma - disc) / 2.0], axis=-1)
    sep = p[..., 0] - p[..., 1]
    critical = np.abs(sep) <= _CRITICAL_RTOL * np.maximum(np.abs(p).max(axis=-1), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.stack([p[..., 0] / sep, -p[..., 1] / sep], axis=-1)
    c[critical] = 0.0
    return p, c, critical


def _decay_rate(gamma, lam):
    p, c, critical = _poles(gamma, np.array([lam]))
    if critical[0]:
        return gamma / 2.0
    # a near-zero lam leaves a slow pole with a negligible residue; ignore it
    live = np.abs(c[0]) > 1e-9 * np.abs(c[0]).max()
    return float(-p[0, live].real.max())


def impulse_velocity(gamma: float, lam: float, t) -> np.ndarray:
    """Derivative of the unit impulse response of ``y'' + gamma y' + lam y = x``."""
    t = np.asarray(t, dtype=float)
    p, c, critical = _poles(gamma, np.array([lam]))
    if critical[0]:
        q = -gamma / 2.0
        return (1.0 + q * t) * np.exp(q * t)
    return np.real(c[0, 0] * np.exp(p[0, 0] * t) + c[0, 1] * np.exp(p[0, 1] * t))


def _kernel_quad_pair(gamma, lam_i, lam_j, tau, rtol=1e-8):
    if tau < 0:
        return _kernel_quad_pair(gamma, lam_j, lam_i, -tau, rtol)
    decay = min(_decay_rate(gamma, lam_i), _decay_rate(gamma, lam_j))
    if decay <= 0:
        raise NumericalError(f"mode pair ({lam_i}, {lam_j}) is undamped; kernel integral diverges")
    upper = 60.0 / decay

    def f(s):
        return impulse_velocity(gamma, lam_i, tau + s) * impulse_velocity(gamma, lam_j, s)

    # split at oscillation periods so quad sees smooth pieces
    w = np.sqrt(max(lam_i, lam_j, gamma**2 / 4.0))
    n_pieces = int(min(max(upper * w / np.pi, 1), 4000))
    edges = np.linspace(0.0, upper, n_pieces + 1)
    total, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e, info = integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=200,
                                      full_output=True)[:3]
        total += val
        err += e
    scale = max(abs(total), 1e-300)
    if err > 1e3 * rtol * scale and err > 1e-14:
        raise NumericalError(
            f"kernel quadrature did not converge for mode pair (lam={lam_i}, {lam_j}), "
            f"tau={tau}: estimated error {err:.3g}"
        )
    return total


def kernel_matrix_quad(basis: EigenBasis, tau: float, rtol: float = 1e-8) -> np.ndarray:
    """Adaptive-quadrature evaluation of ``K_tau`` over the retained modes."""
    lam = basis.lam[basis.retained_modes]
    r = len(lam)
    K = np.empty((r, r))
    for i in range(r):
        for j in range(r):
            K[i, j] = _kernel_quad_pair(basis.gamma, lam[i], lam[j], tau, rtol)
    return K


def kernel_stack(gamma: float, lam, lags) -> np.ndarray:
    """Closed-form ``K_tau`` for every lag (seconds), shape ``(len(lags), r, r)``.

    Critically damped modes (repeated root) fall back to quadrature.
    """
    lam = np.asarray(lam, dtype=float)
    lags = np.atleast_1d(np.asarray(lags, dtype=float))
    if gamma <= 0:
        raise ConfigError("the speed kernel needs gamma > 0 (undamped modes never decorrelate)")
    p, c, critical = _poles(gamma, lam)
    r = len(lam)
    out = np.empty((len(lags), r, r))
    pos = lags >= 0
    for sign_mask, taus, transpose in ((pos, lags[pos], False), (~pos, -lags[~pos], True)):
        if not taus.size:
            continue
        E = c[None, :, :] * np.exp(p[None, :, :] * taus[:, None, None])
        denom = -(p[:, :, None, None] + p[None, None, :, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            D = np.where(c[None, None, :, :] != 0, c[None, None, :, :] / denom, 0.0)
        K = np.real(np.einsum("tik,ikjl->tij", E, D))
        if transpose:
            K = K.transpose(0, 2, 1)
        out[sign_mask] = K
    if critical.any():
        crit = np.flatnonzero(critical)
        for t, tau in enumerate(lags):
            for i in crit:
                for j in range(r):
                    out[t, i, j] = _kernel_quad_pair(gamma, lam[i], lam[j], tau)
                    out[t, j, i] = _kernel_quad_pair(gamma, lam[j], lam[i], tau)
    if not np.all(np.isfinite(out)):
        raise NumericalError("kernel evaluation produced non-finite values")
    return out


def kernel_matrix(basis: EigenBasis, tau: float) -> np.ndarray:
    """``K_tau`` over the retained modes of ``basis`` (r x r)."""
    lam = basis.lam[basis.retained_modes]
    return kernel_stack(basis.gamma, lam, [tau])[0]


@dataclass(frozen=True)
class KernelTensor:
    lags: np.ndarray
    entries: np.ndarray
    gamma: float
    lam: np.ndarray

    @classmethod
    def build(cls, basis: EigenBasis, lags) -> "KernelTensor":
        lags = np.atleast_1d(np.asarray(lags, dtype=float))
        lam = basis.lam[basis.retained_modes]
        return cls(lags=lags, entries=kernel_stack(basis.gamma, lam, lags),
                   gamma=basis.gamma, lam=lam)

    def index(self, tau: float) -> int:
        hit = np.flatnonzero(np.abs(self.lags - tau) <= LAG_ATOL)
        if not hit.size:
            raise ConfigError(f"lag {tau} not in kernel; available lags: {self.lags.tolist()}")
        return int(hit[0])

    def __getitem__(self, tau: float) -> np.ndarray:
        return self.entries[self.index(tau)]


@dataclass
class LearnedCovariance:
    """Fitted eigeninput covariance ``A`` with everything needed to evaluate ``Sigma_tau(A)``.

    ``meters`` are the generator indices the moments came from and
    ``normalization`` their sample standard deviations (used to put
    residuals on a correlation scale).
    """

    A: np.ndarray
    kernel: KernelTensor
    basis: EigenBasis
    model: GridModel
    meters: np.ndarray
    normalization: np.ndarray
    objective: str = "l2"
    report: dict = field(default_factory=dict)
    _kernels: dict = field(default_factory=dict, repr=False, compare=False)
    _psd: list = field(default_factory=list, repr=False, compare=False)

    def psd_part(self) -> "LearnedCovariance":
        """Copy with ``A`` replaced by its nearest PSD matrix (negative eigenvalues clipped).

        Fitting leaves ``A`` unconstrained; a space-time covariance built from an
        indefinite ``A`` cannot be factorized, so inference conditions on this.
        """
        if self._psd:
            return self._psd[0]
        lam, U = np.linalg.eigh(0.5 * (self.A + self.A.T))
        if lam.min(initial=0.0) >= 0.0:
            return self
        A = (U * np.clip(lam, 0.0, None)) @ U.T
        report = dict(self.report, psd_clipped=float(-lam.min()))
        self._psd.append(replace(self, A=0.5 * (A + A.T), report=report, _kernels={}, _psd=[]))
        return self._psd[0]

    def speed_map(self, selector=None) -> np.ndarray:
        B = self.basis.speed_map()
        return B if selector is None else B[np.asarray(selector, dtype=int)]

    def sigma(self, tau: float, selector=None, cols=None) -> np.ndarray:
        return sigma_of_A(self, tau, selector, cols)

    def sigma_sequence(self, lags, rows=None, cols=None) -> np.ndarray:
        """``Sigma_tau(A)[rows, cols]`` for arbitrary lags, shape ``(len(lags), |rows|, |cols|)``."""
        lags = np.asarray(lags, dtype=float)
        key = lags.tobytes()
        AK = self._kernels.get(key)
        if AK is None:
            AK = self.A[None] * kernel_stack(self.basis.gamma, self.kernel.lam, lags)
            self._kernels.clear()
            self._kernels[key] = AK
        Br = self.speed_map(rows)
        Bc = self.speed_map(cols)
        return np.einsum("ai,tij,bj->tab", Br, AK, Bc, optimize=True)

    def model_std(self, selector=None) -> np.ndarray:
        """Model-implied speed standard deviations from ``Sigma_0(A)``."""
        B = self.speed_map(selector)
        var = np.einsum("ai,ij,aj->a", B, self.A * self.kernel_at(0.0), B)
        return np.sqrt(np.maximum(var, 0.0))

    def kernel_at(self, tau: float) -> np.ndarray:
        try:
            return self.kernel[tau]
        except ConfigError:
            return kernel_stack(self.basis.gamma, self.kernel.lam, [tau])[0]


def sigma_of_A(learned: LearnedCovariance, tau: float, selector=None, cols=None) -> np.ndarray:
    """Selected block of ``M^{-1/2} V (A * K_tau) V^T M^{-1/2}``.

    ``selector`` picks rows (and columns unless ``cols`` is given); ``None``
    means all generators.  ``tau`` must be one of the kernel's lags.
    """
    if selector is not None and len(selector) == 0:
        raise ConfigError("selector must be nonempty")
    K = learned.kernel[tau]
    Br = learned.speed_map(selector)
    Bc = Br if cols is None else learned.speed_map(cols)
    return Br @ (learned.A * K) @ Bc.T


@dataclass(frozen=True)
class Moments:
    """Lagged sample second moments ``C_tau`` of metered speeds.

    ``C[k]`` is the ``m x m`` moment at ``lags[k]`` seconds
    (``ticks[k]`` reporting intervals).  ``std`` holds the per-meter sample
    standard deviations; ``normalized`` tells whether ``C`` has already
    been divided by them.
    """

    lags: np.ndarray
    ticks: np.ndarray
    C: np.ndarray
    std: np.ndarray
    meters: np.ndarray
    n_samples: np.ndarray
    normalized: bool = False

    def at(self, tau: float) -> np.ndarray:
        hit = np.flatnonzero(np.abs(self.lags - tau) <= LAG_ATOL)
        if not hit.size:
            raise ConfigError(f"lag {tau} not available; moments have {self.lags.tolist()}")
        return self.C[hit[0]]


def lags_to_ticks(lags, reporting_rate: float, snap: bool = True) -> np.ndarray:
    """Convert lags in seconds to whole reporting ticks.

    Lags off the tick grid are snapped to the nearest tick with a warning
    (``snap=True``) or rejected; exact half-tick lags are always rejected.
    """
    lags = np.atleast_1d(np.asarray(lags, dtype=float))
    if np.any(lags < 0):
        raise ConfigError(f"lags must be nonnegative, got {lags.tolist()}")
    raw = lags * reporting_rate
    ticks = np.rint(raw).astype(int)
    off = np.abs(raw - ticks)
    for lag, tick, o in zip(lags, ticks, off):
        if o <= 1e-6:
            continue
        nearest = tick / reporting_rate
        if not snap or abs(o - 0.5) <= 1e-9:
            raise ConfigError(
                f"lag {lag} s is not a multiple of the {1 / reporting_rate:.6g} s tick; "
                f"nearest representable lag is {nearest:.6g} s"
            )
        warnings.warn(f"lag {lag} s snapped to {nearest:.6g} s ({tick} ticks)", stacklevel=3)
    return ticks


MAD_TO_STD = 1.482602218505602


def robust_scale(Z) -> np.ndarray:
    """Per-column ``1.4826 * median |z - median z|``, a spike-resistant standard deviation."""
    Z = np.asarray(Z, dtype=float)
    return MAD_TO_STD * np.median(np.abs(Z - np.median(Z, axis=0)), axis=0)


def sample_moments(record, lags, snap: bool = True, scale: str = "mad") -> Moments:
    """Mean-removed lagged moments ``C_tau = 1/T' sum_t z(t + tau) z(t)^T``.

    ``scale`` picks the per-meter spread stored in ``std``: ``"mad"``
    (default) resists isolated bad samples, ``"std"`` is the plain sample
    standard deviation.  Both agree for clean Gaussian data.
    """
    if scale not in ("mad", "std"):
        raise ConfigError(f"scale must be 'mad' or 'std', got {scale!r}")
    ticks = lags_to_ticks(lags, record.reporting_rate, snap=snap)
    Z = np.asarray(record.values, dtype=float)
    T = Z.shape[0]
    if ticks.max() >= T:
        raise ConfigError(f"largest lag ({ticks.max()} ticks) must be shorter than the record ({T})")
    Z = Z - Z.mean(axis=0)
    C = np.empty((len(ticks), Z.shape[1], Z.shape[1]))
    n = np.empty(len(ticks), dtype=int)
    for k, d in enumerate(ticks):
        n[k] = T - d
        C[k] = Z[d:].T @ Z[: T - d] / n[k]
    std = robust_scale(Z) if scale == "mad" else Z.std(axis=0)
    return Moments(lags=ticks / record.reporting_rate, ticks=ticks, C=C,
                   std=std, meters=np.asarray(record.meter_set), n_samples=n)


def to_correlation(moments: Moments, stds=None) -> Moments:
    """Divide entry ``(i, j)`` of every ``C_tau`` by ``std_i * std_j``."""
    stds = moments.std if stds is None else np.asarray(stds, dtype=float)
    flat = np.flatnonzero(~(stds > 0))
    if flat.size:
        names = [int(moments.meters[i]) for i in flat]
        raise ConfigError(f"zero standard deviation (flat signal) at meter(s) {names}")
    scale = np.outer(stds, stds)
    return Moments(lags=moments.lags, ticks=moments.ticks, C=moments.C / scale[None],
                   std=stds, meters=moments.meters, n_samples=moments.n_samples,
                   normalized=True)


def check_kernel(kernel: KernelTensor) -> None:
    K0 = kernel[0.0]
    if np.abs(K0 - K0.T).max() > 1e-10 * max(np.abs(K0).max(), 1.0):
        raise NumericalError("K_0 is not symmetric")
    if np.any(np.diag(K0) <= 0):
        raise NumericalError("K_0 has a nonpositive diagonal")


def save_learned(learned: LearnedCovariance, path) -> None:
    """Store ``A`` and what is needed to rebuild the kernel (the grid model is kept apart)."""
    report = json.dumps(learned.report, default=lambda o: np.asarray(o).tolist())
    np.savez(path, A=learned.A, lags=learned.kernel.lags, meters=learned.meters,
             normalization=learned.normalization, objective=learned.objective,
             retained_modes=learned.basis.retained_modes, report=report)


def load_learned(path, model: GridModel) -> LearnedCovariance:
    """Inverse of :func:`save_learned`; ``model`` must be the grid the fit was made on."""
    with np.load(path, allow_pickle=False) as f:
        doc = {k: f[k] for k in f.files}
    basis = eigen_decompose(model)
    modes = doc["retained_modes"].astype(int)
    if modes.size and modes.max() >= basis.n or doc["A"].shape != (modes.size, modes.size):
        raise ConfigError(f"{path}: fitted covariance does not match a {model.n}-generator model")
    basis = replace(basis, retained_modes=modes)
    return LearnedCovariance(A=doc["A"], kernel=KernelTensor.build(basis, doc["lags"]),
                             basis=basis, model=model, meters=doc["meters"].astype(int),
                             normalization=doc["normalization"],
                             objective=str(doc["objective"]),
                             report=json.loads(str(doc["report"])))


__all__ = [
    "KernelTensor", "LearnedCovariance", "Moments", "check_kernel", "impulse_velocity",
    "kernel_matrix", "kernel_matrix_quad", "kernel_stack", "lags_to_ticks", "load_learned",
    "sample_moments", "save_learned", "sigma_of_A", "to_correlation",
]
