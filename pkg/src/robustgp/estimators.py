"""scikit-learn style wrappers around the learning, identification and clustering steps."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .clustering import MAX_SWAPS, kmedoids
from .errors import ConfigError
from .grid import GridModel, eigen_decompose, select_modes
from .identification import N_RESTARTS, MeterWeights, identify
from .inference import predict_stitched
from .kernel import KernelTensor, sample_moments
from .learning import FitConfig, fit_l1, fit_l2
from .timeseries import TimeSeriesRecord, bandpass_record


class GridGPRegressor(RegressorMixin, BaseEstimator):
    """Learn the speed covariance from metered columns and predict the non-metered ones.

    ``X`` is a ``(T, len(meters))`` array of speed deviations sampled at
    ``reporting_rate``; column ``k`` belongs to generator ``meters[k]``.
    With ``beta`` set (and ``objective="l1"``) corrupted meters are
    identified during ``fit`` and their columns ignored by ``predict``.

    Parameters
    ----------
    model : GridModel
    meters, targets : sequence of int
        Generator indices (0-based); they must not overlap.
    reporting_rate : float
        Samples per second.
    lags : sequence of float
        Moment lags in seconds.
    objective : {"l1", "l2"}
    beta : float or None
        Sparsity weight for meter identification; ``None`` skips it.
    band : (float, float) or None
        Bandpass in Hz applied to the data, with matching mode selection.
    scale : {"mad", "std"}
        Per-meter spread used to normalize the moments.
    window : float or None
        Inference window in seconds (``None``: the whole input at once).
    noise : float
        Measurement-noise variance relative to the mean meter variance.
    """

    def __init__(self, model: GridModel = None, meters=None, targets=None,
                 reporting_rate: float = 30.0, lags=(0.0,), objective: str = "l1",
                 beta: float = None, band=None, scale: str = "mad", window: float = None,
                 noise: float = 0.0, restarts: int = N_RESTARTS, random_state: int = 0):
        self.model = model
        self.meters = meters
        self.targets = targets
        self.reporting_rate = reporting_rate
        self.lags = lags
        self.objective = objective
        self.beta = beta
        self.band = band
        self.scale = scale
        self.window = window
        self.noise = noise
        self.restarts = restarts
        self.random_state = random_state

    def _record(self, X):
        X = np.asarray(X, dtype=float)
        meters = np.asarray(self.meters, dtype=int)
        if X.ndim != 2 or X.shape[1] != meters.size:
            raise ConfigError(f"X must be (T, {meters.size}), got shape {X.shape}")
        rec = TimeSeriesRecord(values=X, reporting_rate=float(self.reporting_rate),
                               meter_set=meters,
                               generator_ids=tuple(self.model.generator_ids[m] for m in meters))
        return bandpass_record(rec, self.band) if self.band is not None else rec

    def fit(self, X, y=None):
        if self.model is None or self.meters is None or self.targets is None:
            raise ConfigError("model, meters and targets are required")
        if self.objective not in ("l1", "l2"):
            raise ConfigError(f"objective must be 'l1' or 'l2', got {self.objective!r}")
        if np.intersect1d(self.meters, self.targets).size:
            raise ConfigError("meters and targets must be disjoint")
        rec = self._record(X)
        basis = eigen_decompose(self.model)
        if self.band is not None:
            basis = select_modes(basis, self.band)
        self.moments_ = sample_moments(rec, self.lags, scale=self.scale)
        cfg = FitConfig(objective=self.objective, lags=tuple(self.moments_.lags.tolist()))
        kernel = KernelTensor.build(basis, self.moments_.lags)
        solver = fit_l1 if self.objective == "l1" else fit_l2
        self.learned_ = solver(self.moments_, kernel, basis, self.model, cfg)
        self.learned_.report["dt"] = rec.dt
        if self.beta is not None and self.objective == "l1":
            self.weights_ = identify(self.moments_, self.learned_, float(self.beta),
                                     restarts=self.restarts, seed=self.random_state)
        else:
            self.weights_ = MeterWeights.clean(self.meters)
        self.flagged_ = self.weights_.flagged
        self.n_features_in_ = len(self.meters)
        return self

    def predict(self, X, return_std: bool = False):
        """Posterior mean ``(T, len(targets))`` (and standard deviation with ``return_std``)."""
        check_is_fitted(self, "learned_")
        rec = self._record(X)
        window = rec.T if self.window is None else int(round(self.window * rec.reporting_rate))
        return predict_stitched(self.learned_, rec, self.weights_, self.targets, window,
                                noise=self.noise, return_std=return_std)


class KMedoids(ClusterMixin, BaseEstimator):
    """k-medoids on a precomputed distance matrix (greedy build, then best-improvement swaps).

    Attributes after ``fit``: ``medoid_indices_``, ``labels_``, ``inertia_``
    (summed distance to the nearest medoid) and ``cost_history_``.
    """

    def __init__(self, n_clusters: int = 2, random_state: int = 0, max_swaps: int = MAX_SWAPS):
        self.n_clusters = n_clusters
        self.random_state = random_state
        self.max_swaps = max_swaps

    def fit(self, X, y=None):
        D = np.asarray(X, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ConfigError(f"X must be a square distance matrix, got shape {D.shape}")
        medoids, labels, cost, history = kmedoids(D, int(self.n_clusters), self.random_state,
                                                  self.max_swaps)
        self.medoid_indices_ = medoids
        self.labels_ = labels
        self.inertia_ = cost
        self.cost_history_ = history
        return self

    def predict(self, X):
        """Nearest medoid for each row of sample-to-fitted-point distances ``X``."""
        check_is_fitted(self, "medoid_indices_")
        D = np.atleast_2d(np.asarray(X, dtype=float))
        return np.argmin(D[:, self.medoid_indices_], axis=1)
