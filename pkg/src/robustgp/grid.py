"""Linearized swing-equation network model.

The network obeys ``M w' + gamma M w + L theta = p`` with ``theta' = w``.
Substituting ``u = M^{1/2} theta`` and diagonalizing
``M^{-1/2} L M^{-1/2} = V diag(lam) V^T`` decouples the system into scalar
oscillators ``y'' + gamma y' + lam_i y = x_i`` with ``y = V^T u`` and
eigeninputs ``x = V^T M^{-1/2} p``.  Generator speeds are recovered as
``w = M^{-1/2} V y'``.
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError

SYMMETRY_RTOL = 1e-10
PSD_SLACK = 1e-8

MODEL_UNITS = {
    "inertia": "per-unit * s^2 (diagonal of M)",
    "gamma": "1/s (uniform damping, D = gamma * M)",
    "laplacian": "per-unit (Kron-reduced negative power-flow Jacobian)",
    "susceptance": "per-unit",
}


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _relative_asymmetry(a):
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return 0.0
    return np.linalg.norm(a - a.T) / norm


@dataclass(frozen=True)
class GridModel:
    """Generator inertias, uniform damping ratio and Kron-reduced Laplacian."""

    inertia: np.ndarray
    gamma: float
    laplacian: np.ndarray
    generator_ids: tuple = None

    def __post_init__(self):
        inertia = np.atleast_1d(np.asarray(self.inertia, dtype=float))
        lap = np.atleast_2d(np.asarray(self.laplacian, dtype=float))
        n = inertia.shape[0]
        if inertia.ndim != 1 or n == 0:
            raise ConfigError("inertia must be a nonempty vector")
        if lap.shape != (n, n):
            raise ConfigError(f"laplacian shape {lap.shape} does not match {n} generators")
        if not np.all(np.isfinite(inertia)) or not np.all(np.isfinite(lap)):
            raise ConfigError("model contains non-finite entries")
        if np.any(inertia <= 0):
            bad = np.flatnonzero(inertia <= 0).tolist()
            raise ConfigError(f"inertia must be strictly positive (generators {bad})")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ConfigError(f"gamma must be a finite nonnegative scalar, got {self.gamma}")
        if _relative_asymmetry(lap) > SYMMETRY_RTOL:
            raise ConfigError("laplacian is not symmetric")
        lap = 0.5 * (lap + lap.T)
        s = 1.0 / np.sqrt(inertia)
        lam_min = np.linalg.eigvalsh(s[:, None] * lap * s[None, :]).min()
        if lam_min < -PSD_SLACK:
            raise ConfigError(
                f"M^-1/2 L M^-1/2 is not positive semidefinite (min eigenvalue {lam_min:.3g})"
            )
        ids = self.generator_ids
        if ids is None:
            ids = tuple(str(i + 1) for i in range(n))
        ids = tuple(str(g) for g in ids)
        if len(ids) != n or len(set(ids)) != n:
            raise ConfigError("generator_ids must be unique and one per generator")
        object.__setattr__(self, "inertia", _frozen(inertia))
        object.__setattr__(self, "laplacian", _frozen(lap))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "generator_ids", ids)

    @property
    def n(self) -> int:
        return self.inertia.shape[0]

    @property
    def damping(self) -> np.ndarray:
        return self.gamma * self.inertia

    def scaled_laplacian(self) -> np.ndarray:
        """Return ``M^{-1/2} L M^{-1/2}``."""
        s = 1.0 / np.sqrt(self.inertia)
        return s[:, None] * self.laplacian * s[None, :]


@dataclass(frozen=True)
class EigenBasis:
    """Modal decomposition of a :class:`GridModel`.

    ``V`` holds orthonormal eigenvectors of ``M^{-1/2} L M^{-1/2}`` in
    columns, ``lam`` the ascending eigenvalues.  ``retained_modes`` indexes
    the subset of modes kept after bandpass selection (all by default).
    """

    V: np.ndarray
    lam: np.ndarray
    gamma: float
    inertia: np.ndarray
    retained_modes: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.retained_modes is None:
            object.__setattr__(self, "retained_modes", np.arange(len(self.lam)))
        object.__setattr__(self, "retained_modes", np.asarray(self.retained_modes, dtype=int))

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def r(self) -> int:
        return len(self.retained_modes)

    def damped_frequencies(self) -> np.ndarray:
        """Damped natural frequency of each mode in Hz."""
        return np.sqrt(np.maximum(self.lam - self.gamma**2 / 4.0, 0.0)) / (2.0 * np.pi)

    def undamped_frequencies(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.lam, 0.0)) / (2.0 * np.pi)

    def speed_map(self) -> np.ndarray:
        """``M^{-1/2} V_r``: maps retained modal velocities to generator speeds (n x r)."""
        V = self.V[:, self.retained_modes]
        return V / np.sqrt(self.inertia)[:, None]

    def reconstruct(self) -> np.ndarray:
        return (self.V * self.lam) @ self.V.T


def kron_reduce(full_laplacian, generator_buses: Sequence[int]) -> np.ndarray:
    """Eliminate non-generator buses by Schur complement.

    The returned matrix is ordered like ``generator_buses``.  Raises
    :class:`NumericalError` naming the bus whose pivot vanishes when the
    interior block is singular (e.g. an island without generators).
    """
    Y = np.asarray(full_laplacian, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise ConfigError(f"full laplacian must be square, got shape {Y.shape}")
    if _relative_asymmetry(Y) > SYMMETRY_RTOL:
        raise ConfigError("full laplacian is not symmetric")
    gen = np.asarray(generator_buses, dtype=int)
    nb = Y.shape[0]
    if len(set(gen.tolist())) != len(gen) or np.any(gen < 0) or np.any(gen >= nb):
        raise ConfigError("generator_buses must be distinct bus indices")
    interior = np.setdiff1d(np.arange(nb), gen)
    if interior.size == 0:
        return Y[np.ix_(gen, gen)].copy()
    Yii = Y[np.ix_(interior, interior)]
    with warnings.catch_warnings():
        # a zero pivot is reported below with the offending bus
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(Yii, check_finite=True)
    diag = np.abs(np.diag(lu))
    scale = max(np.abs(Yii).max(), np.finfo(float).tiny)
    small = np.flatnonzero(diag <= 1e-12 * scale)
    if small.size:
        raise NumericalError(
            f"interior block is singular at pivot {int(small[0])} "
            f"(bus {int(interior[small[0]])}); is that bus isolated from all generators?"
        )
    Ygi = Y[np.ix_(gen, interior)]
    red = Y[np.ix_(gen, gen)] - Ygi @ scipy.linalg.lu_solve((lu, piv), Ygi.T)
    return 0.5 * (red + red.T)


def eigen_decompose(model: GridModel) -> EigenBasis:
    """Diagonalize ``M^{-1/2} L M^{-1/2}`` (eigenvalues ascending)."""
    try:
        lam, V = scipy.linalg.eigh(model.scaled_laplacian())
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigen decomposition failed: {exc}") from exc
    # Fix column signs so the largest-magnitude entry of each vector is positive.
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[idx, np.arange(V.shape[1])])
    return EigenBasis(V=_frozen(V), lam=_frozen(lam), gamma=model.gamma, inertia=model.inertia)


def select_modes(basis: EigenBasis, band_hz) -> EigenBasis:
    """Keep modes whose damped frequency ``sqrt(max(lam - gamma^2/4, 0)) / 2pi`` lies in the band.

    The damped frequency is the oscillation visible in measured speeds; the
    undamped ``sqrt(lam) / 2pi`` is available from
    :meth:`EigenBasis.undamped_frequencies` for comparison.
    """
    f_lo, f_hi = (float(b) for b in band_hz)
    if not (0.0 <= f_lo < f_hi):
        raise ConfigError(f"band must satisfy 0 <= f_lo < f_hi, got [{f_lo}, {f_hi}]")
    f = basis.damped_frequencies()
    keep = np.flatnonzero((f >= f_lo) & (f <= f_hi))
    if keep.size == 0:
        raise ConfigError(
            f"no mode in band [{f_lo}, {f_hi}] Hz (mode frequencies span "
            f"{f.min():.3g}..{f.max():.3g} Hz); widen the band"
        )
    return replace(basis, retained_modes=keep)


def laplacian_from_branches(n_bus: int, branches) -> np.ndarray:
    """Bus susceptance Laplacian from ``(from, to, susceptance)`` triples (0-based buses)."""
    Y = np.zeros((n_bus, n_bus))
    for f, t, b in branches:
        if f == t:
            raise ConfigError(f"branch connects bus {f} to itself")
        Y[f, f] += b
        Y[t, t] += b
        Y[f, t] -= b
        Y[t, f] -= b
    return Y


def model_from_dict(doc: dict) -> GridModel:
    """Build a :class:`GridModel` from a parsed model document."""
    try:
        inertia = np.asarray(doc["inertia"], dtype=float)
        gamma = float(doc["gamma"])
    except KeyError as exc:
        raise ConfigError(f"model file missing key {exc}") from exc
    n = int(doc.get("n", len(inertia)))
    if n != len(inertia):
        raise ConfigError(f"n = {n} but {len(inertia)} inertia values given")
    if "damping" in doc:
        damping = np.asarray(doc["damping"], dtype=float)
        if not np.allclose(damping, gamma * inertia, rtol=1e-9, atol=0):
            raise ConfigError(
                "heterogeneous damping is not supported: damping must equal gamma * inertia"
            )
    has_lap, has_net = "laplacian" in doc, "network" in doc
    if has_lap == has_net:
        raise ConfigError("model file must give exactly one of 'laplacian' or 'network'")
    if has_lap:
        lap = np.asarray(doc["laplacian"], dtype=float)
        if lap.ndim == 1:
            lap = lap.reshape(n, n)
    else:
        net = doc["network"]
        buses = list(net["buses"])
        pos = {b: i for i, b in enumerate(buses)}
        try:
            triples = [(pos[br["from"]], pos[br["to"]], float(br["susceptance"]))
                       for br in net["branches"]]
            gen = [pos[b] for b in net["generator_buses"]]
        except KeyError as exc:
            raise ConfigError(f"network references unknown bus or key {exc}") from exc
        if len(gen) != n:
            raise ConfigError(f"{len(gen)} generator buses for n = {n}")
        lap = kron_reduce(laplacian_from_branches(len(buses), triples), gen)
    return GridModel(inertia=inertia, gamma=gamma, laplacian=lap,
                     generator_ids=doc.get("generator_ids"))


def model_to_dict(model: GridModel) -> dict:
    return {
        "units": MODEL_UNITS,
        "n": model.n,
        "generator_ids": list(model.generator_ids),
        "inertia": model.inertia.tolist(),
        "gamma": model.gamma,
        "laplacian": model.laplacian.ravel().tolist(),
    }


def load_model(path) -> GridModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)


def save_model(model: GridModel, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
