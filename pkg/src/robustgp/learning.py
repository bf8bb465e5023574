"""Method-of-moments fitting of the eigeninput covariance ``A``.

``Sigma_tau(A)`` is linear in ``A``, so matching model moments to sample
moments is a linear regression over the upper triangle of ``A``.  Residuals
are measured on the correlation scale: entry ``(a, b)`` is divided by the
sample standard deviations of meters ``a`` and ``b``, which evens out the
sampling noise between loud and quiet meters.  ``A`` itself stays in
covariance units.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import ConfigError, NumericalError
from .grid import EigenBasis, GridModel
from .kernel import KernelTensor, LearnedCovariance, Moments

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by :func:`fit_l2` and :func:`fit_l1`.

    ``max_iterations`` caps the L1 linear-program iterations, ``tolerance``
    bounds the relative least-squares gradient and ``rcond`` is the relative
    singular-value cutoff below which directions of ``A`` are declared
    unidentifiable and pinned to zero.
    """

    objective: str = "l1"
    lags: tuple = (0.0,)
    max_iterations: int = 1_000_000
    tolerance: float = 1e-12
    rcond: float = 1e-9
    normalize: bool = True
    symmetry: bool = True

    def __post_init__(self):
        if self.objective not in ("l1", "l2"):
            raise ConfigError(f"objective must be 'l1' or 'l2', got {self.objective!r}")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")
        if len(self.lags) == 0:
            raise ConfigError("at least one lag is required")
        if not self.symmetry:
            raise ConfigError("A is always fitted as a symmetric matrix")
        if not any(abs(t) < 1e-12 for t in self.lags):
            warnings.warn("lag 0 is not among the fitting lags", stacklevel=3)
        object.__setattr__(self, "lags", tuple(float(t) for t in self.lags))


def _upper(r):
    return np.triu_indices(r)


def unpack(theta, r) -> np.ndarray:
    iu = _upper(r)
    A = np.zeros((r, r))
    A[iu] = theta
    return A + np.triu(A, 1).T


def pack(A) -> np.ndarray:
    return np.asarray(A)[_upper(A.shape[0])]


def design_matrix(basis: EigenBasis, kernel: KernelTensor, meters, lags, scale=None):
    """Linear map from ``pack(A)`` to stacked ``vec(Sigma_tau(A))`` over ``lags``.

    Rows are ordered ``(lag, a, b)`` with ``a, b`` over ``meters``; ``scale``
    divides row ``(a, b)`` by ``scale[a] * scale[b]``.
    """
    B = basis.speed_map()[np.asarray(meters, dtype=int)]
    K = np.stack([kernel[t] for t in lags])
    m, r = B.shape
    full = np.einsum("ai,bj,tij->tabij", B, B, K, optimize=True)
    full = full + np.swapaxes(full, -1, -2) * (1 - np.eye(r))
    iu = _upper(r)
    X = full[..., iu[0], iu[1]]
    if scale is not None:
        s = np.asarray(scale, dtype=float)
        X = X / np.outer(s, s)[None, :, :, None]
    return X.reshape(len(lags) * m * m, -1)


def _targets(moments: Moments, lags, normalize):
    C = np.stack([moments.at(t) for t in lags])
    if normalize and not moments.normalized:
        s = moments.std
        if np.any(s <= 0):
            raise ConfigError("flat signal at a meter; cannot normalize")
        C = C / np.outer(s, s)[None]
    return C.reshape(-1)


@dataclass
class _Problem:
    X: np.ndarray
    c: np.ndarray
    r: int
    U: np.ndarray = None
    s: np.ndarray = None
    Vt: np.ndarray = None
    rank: int = None
    null: list = field(default_factory=list)

    def reduce(self, rcond):
        U, s, Vt = np.linalg.svd(self.X, full_matrices=False)
        keep = s > rcond * (s[0] if s.size else 0.0)
        self.U, self.s, self.Vt = U[:, keep], s[keep], Vt[keep]
        self.rank = int(keep.sum())
        self.null = Vt[~keep]
        if self.X.shape[1] > self.X.shape[0]:
            extra = np.linalg.svd(self.X, full_matrices=True)[2][self.X.shape[0]:]
            self.null = np.vstack([self.null, extra]) if len(self.null) else extra
        return self

    def theta(self, phi):
        """Map reduced coordinates (in the scaled row space) to packed A."""
        return self.Vt.T @ (phi / self.s)


def _problem(moments, kernel, basis, meters, config):
    lags = config.lags
    missing = [t for t in lags if not np.any(np.abs(kernel.lags - t) <= 1e-9)]
    if missing:
        raise ConfigError(f"kernel lacks lags {missing}")
    scale = moments.std if config.normalize else None
    X = design_matrix(basis, kernel, meters, lags, scale)
    c = _targets(moments, lags, config.normalize)
    return _Problem(X=X, c=c, r=basis.r).reduce(config.rcond)


def _null_warning(prob: _Problem):
    if not len(prob.null):
        return None
    r = prob.r
    iu = _upper(r)
    dirs = []
    for v in prob.null:
        k = int(np.argmax(np.abs(v)))
        dirs.append((int(iu[0][k]), int(iu[1][k])))
    msg = (f"{len(prob.null)} unidentifiable direction(s) of A pinned to zero "
           f"(dominant entries {dirs[:10]}{'...' if len(dirs) > 10 else ''})")
    warnings.warn(msg, stacklevel=4)
    return msg


def _learned(theta, prob, moments, kernel, basis, model, objective, report):
    A = unpack(theta, prob.r)
    resid = prob.X @ theta - prob.c
    report = dict(report)
    report.setdefault("warnings", [])
    report["l1"] = float(np.abs(resid).sum())
    report["l2"] = float(resid @ resid)
    report["rank"] = prob.rank
    report["n_unknowns"] = prob.X.shape[1]
    lam_min = np.linalg.eigvalsh(A).min() if A.size else 0.0
    norm = np.linalg.norm(A, 2) if A.size else 0.0
    if lam_min < -1e-6 * norm:
        msg = f"fitted A is indefinite (min eigenvalue {lam_min:.3g}, norm {norm:.3g})"
        warnings.warn(msg, stacklevel=3)
        report["warnings"].append(msg)
    return LearnedCovariance(A=A, kernel=kernel, basis=basis, model=model,
                             meters=np.asarray(moments.meters, dtype=int),
                             normalization=np.asarray(moments.std, dtype=float),
                             objective=objective, report=report)


def fit_l2(moments: Moments, kernel: KernelTensor, basis: EigenBasis, model: GridModel,
           config: FitConfig = None) -> LearnedCovariance:
    """Least-squares method of moments (minimum-norm on unidentifiable directions)."""
    config = config or FitConfig(objective="l2")
    prob = _problem(moments, kernel, basis, moments.meters, config)
    phi = prob.U.T @ prob.c
    theta = prob.theta(phi)
    grad = prob.X.T @ (prob.X @ theta - prob.c)
    gnorm = float(np.linalg.norm(grad))
    scale = float(np.linalg.norm(prob.X.T @ prob.c)) or 1.0
    if gnorm > max(config.tolerance, 1e-9) * scale * 1e3:
        raise NumericalError(f"least-squares solve inaccurate (gradient norm {gnorm:.3g})")
    report = {"warnings": [], "gradient_norm": gnorm}
    msg = _null_warning(prob)
    if msg:
        report["warnings"].append(msg)
    return _learned(theta, prob, moments, kernel, basis, model, "l2", report)


def _lad(Z, c, config):
    """Exact ``argmin sum |Z phi - c|`` through its linear-programming dual (HiGHS).

    The dual ``max c'y`` subject to ``Z'y = 0`` and ``-1 <= y <= 1`` has one
    equality row per unknown instead of one per residual, which keeps the
    interior-point normal equations small.  ``phi`` is read off the equality
    multipliers; crossover returns a vertex of the optimal face.
    """
    n, k = Z.shape
    res = scipy.optimize.linprog(
        -c, A_eq=Z.T, b_eq=np.zeros(k), bounds=(-1.0, 1.0), method="highs-ipm",
        options={"maxiter": config.max_iterations, "primal_feasibility_tolerance": 1e-10,
                 "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise NumericalError(f"L1 linear program failed: {res.message}")
    return -np.asarray(res.eqlin.marginals), int(res.nit)


def fit_l1(moments: Moments, kernel: KernelTensor, basis: EigenBasis, model: GridModel,
           config: FitConfig = None, weights=None) -> LearnedCovariance:
    """Least-absolute-deviation method of moments, summed over ``config.lags``.

    Solved exactly as a linear program over the identifiable directions of
    ``A``; the report's history holds the least-squares starting objective
    and the optimum.  ``weights`` (one per residual, e.g. a binary mask)
    restrict the objective to a subset of entries.
    """
    config = config or FitConfig()
    prob = _problem(moments, kernel, basis, moments.meters, config)
    Z = prob.U
    c = prob.c
    if weights is not None:
        wts = np.asarray(weights, dtype=float).reshape(-1)
        if wts.shape != c.shape or np.any(wts < 0):
            raise ConfigError("weights must be nonnegative, one per moment entry")
        Zw, cw = Z * wts[:, None], c * wts
        lost = Z.shape[1] - np.linalg.matrix_rank(Zw)
        if lost == Z.shape[1]:
            raise NumericalError("every moment entry is masked out")
        if lost:
            warnings.warn(f"masking leaves {lost} more direction(s) of A unidentifiable; "
                          "using the minimum-norm solution", stacklevel=2)
    else:
        Zw, cw = Z, c
    phi0 = np.linalg.lstsq(Zw, cw, rcond=None)[0]
    live = np.any(Zw != 0, axis=1) | (cw != 0)
    phi, iters = _lad(Zw[live], cw[live], config)
    history = [float(np.abs(Zw @ phi0 - cw).sum()), float(np.abs(Zw @ phi - cw).sum())]
    theta = prob.theta(phi)
    report = {"warnings": [], "history": history, "iterations": iters}
    msg = _null_warning(prob)
    if msg:
        report["warnings"].append(msg)
    out = _learned(theta, prob, moments, kernel, basis, model, "l1", report)
    if weights is not None:
        out.report["masked_l1"] = float(np.abs(Zw @ phi - cw).sum())
    return out


def fit(moments, kernel, basis, model, config: FitConfig):
    """Dispatch on ``config.objective``."""
    if config.objective == "l2":
        return fit_l2(moments, kernel, basis, model, config)
    return fit_l1(moments, kernel, basis, model, config)


def residuals(learned: LearnedCovariance, moments: Moments, lags=None, normalize=True):
    """Model-minus-sample moments, shape ``(len(lags), m, m)``, on the correlation scale."""
    lags = learned.kernel.lags if lags is None else np.atleast_1d(lags)
    meters = np.asarray(moments.meters, dtype=int)
    out = []
    for t in lags:
        S = learned.sigma(float(t), meters)
        C = moments.at(float(t))
        if normalize:
            scale = np.outer(moments.std, moments.std)
            S = S / scale
            if not moments.normalized:
                C = C / scale
        elif moments.normalized:
            C = C * np.outer(moments.std, moments.std)
        out.append(S - C)
    return np.stack(out)


def objective_value(learned, moments, lags=None, norm="l1") -> float:
    R = residuals(learned, moments, lags)
    return float(np.abs(R).sum()) if norm == "l1" else float((R * R).sum())


def fit_report(learned: LearnedCovariance, moments: Moments) -> str:
    """Objective trajectory, warnings and the first-lag ``|residual|`` grid as plain text."""
    rep = learned.report
    lines = [f"objective {learned.objective}",
             f"l1 {rep.get('l1', float('nan')):.17g}",
             f"l2 {rep.get('l2', float('nan')):.17g}",
             f"rank {rep.get('rank', '')} of {rep.get('n_unknowns', '')}",
             "history " + " ".join(f"{h:.17g}" for h in rep.get("history", []))]
    lines += [f"warning {w}" for w in rep.get("warnings", [])]
    lags = learned.kernel.lags
    R = np.abs(residuals(learned, moments, lags))
    lines.append("lag,residual_l1")
    lines += [f"{t:g},{r.sum():.17g}" for t, r in zip(lags, R)]
    ids = learned.model.generator_ids
    labels = [f"g{ids[int(m)]}" for m in moments.meters]
    lines.append(f"residual_lag{lags[0]:g}," + ",".join(labels))
    lines += [lab + "," + ",".join(f"{v:.17g}" for v in row) for lab, row in zip(labels, R[0])]
    return "\n".join(lines) + "\n"
