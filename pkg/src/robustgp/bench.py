"""Scenario files, the end-to-end pipeline, scoring and plot-data export."""
from __future__ import annotations

import contextlib
import json
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cases import load_case
from .clustering import (aggregate_weights, cluster_generators, infer_aggregate,
                         infer_dimension_reduced)
from .corruption import CorruptionPlan, corrupt
from .errors import ConfigError, RobustGPError
from .grid import eigen_decompose, load_model, select_modes
from .identification import MeterWeights, identify
from .inference import predict_nonmetered, predict_stitched
from .kernel import KernelTensor, sample_moments
from .learning import FitConfig, fit_l1, fit_l2, fit_report, residuals
from .simulate import SimulationConfig, simulate
from .timeseries import bandpass_record, restrict_to_meters, write_record

logger = logging.getLogger(__name__)


class StageError(RobustGPError):
    """A pipeline stage failed; ``stage`` names it and ``exit_code`` follows the cause."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = exit_code_for(cause)


def exit_code_for(exc) -> int:
    """2 for bad input, 3 for numerical failure, 4 for I/O."""
    if hasattr(exc, "exit_code"):
        return exc.exit_code
    if isinstance(exc, OSError):
        return 4
    if isinstance(exc, (np.linalg.LinAlgError, ArithmeticError)):
        return 3
    return 2


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except StageError:
        raise
    except (RobustGPError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def normalized_rmse(estimate, actual) -> float:
    """``sqrt(mean((est - act)^2)) / (max(act) - min(act))``."""
    est = np.asarray(estimate, dtype=float).reshape(-1)
    act = np.asarray(actual, dtype=float).reshape(-1)
    if est.shape != act.shape:
        raise ConfigError(f"length mismatch: {est.size} estimates for {act.size} samples")
    span = act.max() - act.min()
    if not span > 0:
        raise ConfigError("actual signal is constant; normalized RMSE is undefined")
    return float(np.sqrt(np.mean((est - act) ** 2)) / span)


def score_identification(flagged, truth) -> dict:
    """Set precision and recall; an empty flag set has precision 1 by convention."""
    flagged = {int(f) for f in flagged}
    truth = {int(t) for t in truth}
    hit = len(flagged & truth)
    precision = hit / len(flagged) if flagged else 1.0
    recall = hit / len(truth) if truth else 1.0
    return {"precision": precision, "recall": recall, "exact_match": flagged == truth,
            "flagged": sorted(flagged), "truth": sorted(truth)}


def parse_index_set(spec, universe, what="index set"):
    """A list of indices, or ``"random:k@seed"`` drawn from ``universe``."""
    universe = np.asarray(universe, dtype=int)
    if isinstance(spec, str):
        try:
            kind, rest = spec.split(":")
            k, seed = rest.split("@")
            k, seed = int(k), int(seed)
        except ValueError:
            raise ConfigError(f"{what} {spec!r} is not 'random:k@seed'") from None
        if kind != "random" or not 0 < k <= universe.size:
            raise ConfigError(f"{what} {spec!r}: need 0 < k <= {universe.size}")
        return np.sort(np.random.default_rng(seed).choice(universe, k, replace=False))
    out = np.asarray(list(spec), dtype=int)
    bad = np.setdiff1d(out, universe)
    if bad.size:
        raise ConfigError(f"{what} has entries {bad.tolist()} outside {universe.tolist()}")
    return out


def parse_lags(spec) -> tuple:
    if isinstance(spec, dict):
        start, stop, step = (float(spec.get(k, d)) for k, d in
                             (("start", 0.0), ("stop", 0.0), ("step", 1.0)))
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return tuple(np.round(start + step * np.arange(n), 12).tolist())
    return tuple(float(t) for t in spec)


@dataclass
class Scenario:
    """Everything a run needs; every random draw has an explicit seed."""

    name: str
    outputs: str
    simulation: dict
    case: str = None
    case_seed: int = 0
    model_path: str = None
    meters: object = None
    targets: object = None
    corruption: dict = None
    learning: dict = field(default_factory=dict)
    bandpass: list = None
    clustering: dict = None
    inference: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = ".") -> "Scenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        if "simulation" not in doc:
            raise ConfigError("scenario needs a 'simulation' section")
        doc = dict(doc)
        doc.setdefault("name", "scenario")
        doc.setdefault("outputs", os.path.join("out", doc["name"]))
        if doc.get("model_path") and not os.path.isabs(doc["model_path"]):
            doc["model_path"] = os.path.join(base_dir, doc["model_path"])
        if (doc.get("case") is None) == (doc.get("model_path") is None):
            raise ConfigError("scenario needs exactly one of 'case' or 'model_path'")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc, os.path.dirname(os.path.abspath(path)))

    def with_seed(self, seed: int) -> "Scenario":
        """Copy with the simulation and corruption seeds offset by ``seed``."""
        sim = dict(self.simulation, seed=int(self.simulation.get("seed", 0)) + seed)
        cor = None
        if self.corruption:
            cor = dict(self.corruption, seed=int(self.corruption.get("seed", 0)) + seed)
            pick = cor.get("target_meters")
            if isinstance(pick, str) and "@" in pick:
                head, base = pick.rsplit("@", 1)
                cor["target_meters"] = f"{head}@{int(base) + seed}"
        return replace(self, simulation=sim, corruption=cor)


@dataclass
class Result:
    scenario: Scenario
    model: object
    truth: object
    observed: object
    labels: np.ndarray
    fits: dict
    weights: MeterWeights
    moments: object
    targets: np.ndarray
    span: tuple
    predictions: dict
    scores: dict
    timings: dict
    assignment: object = None


def _grid(sc: Scenario):
    if sc.case:
        case = load_case(sc.case, sc.case_seed)
        return case.model, case.Q, case.meters, case.targets
    model = load_model(sc.model_path)
    return model, None, None, None


def simulation_config(sc, Q):
    sim = dict(sc.simulation)
    unknown = set(sim) - {"duration", "reporting_rate", "integration_step", "seed", "sigma",
                          "burn_in", "Q", "steps_per_tick"}
    if unknown:
        raise ConfigError(f"unknown simulation keys {sorted(unknown)}")
    per_tick = sim.pop("steps_per_tick", None)
    if per_tick is not None:
        sim["integration_step"] = 1.0 / (float(sim["reporting_rate"]) * int(per_tick))
    if "Q" not in sim and Q is not None:
        sim["Q"] = Q
    return SimulationConfig(**sim)


def _fit_config(learning, objective):
    lags = parse_lags(learning.get("lags", [0.0]))
    kw = {k: learning[k] for k in ("max_iterations", "tolerance", "rcond") if k in learning}
    return FitConfig(objective=objective, lags=lags, **kw)


def scenario_grid(sc: Scenario):
    """``(model, Q, meters, targets)`` with index-set specs resolved."""
    model, Q, case_meters, case_targets = _grid(sc)
    n = model.n
    meters = parse_index_set(sc.meters if sc.meters is not None else case_meters,
                             np.arange(n), "meters")
    non_metered = np.setdiff1d(np.arange(n), meters)
    tspec = sc.targets if sc.targets is not None else (
        case_targets if case_targets is not None else non_metered)
    return model, Q, meters, parse_index_set(tspec, non_metered, "targets")


def corruption_plan(sc: Scenario, meters) -> CorruptionPlan:
    doc = dict(sc.corruption)
    unknown = set(doc) - {"kind", "target_meters", "parameters", "seed"}
    if unknown:
        raise ConfigError(f"unknown corruption keys {sorted(unknown)}")
    if "kind" not in doc:
        raise ConfigError("corruption needs a 'kind'")
    targets = parse_index_set(doc.get("target_meters", "random:1@0"), meters,
                              "corrupted meters")
    return CorruptionPlan(kind=doc["kind"], target_meters=tuple(targets),
                          parameters=doc.get("parameters", {}), seed=int(doc.get("seed", 0)))


def prepare_moments(sc: Scenario, observed, model):
    """Bandpass (if configured), lagged moments and the matching kernel tensor."""
    basis = eigen_decompose(model)
    if sc.bandpass:
        observed = bandpass_record(observed, sc.bandpass)
        basis = select_modes(basis, sc.bandpass)
    lags = parse_lags(sc.learning.get("lags", [0.0]))
    moments = sample_moments(observed, lags, scale=sc.learning.get("scale", "mad"))
    return observed, moments, KernelTensor.build(basis, moments.lags), basis


def fit_both(sc: Scenario, moments, kernel, basis, model, dt):
    """L1 and L2 fits on the same moments; returns ``(l1, l2)``."""
    learning = dict(sc.learning, lags=tuple(moments.lags.tolist()))
    l2 = fit_l2(moments, kernel, basis, model, _fit_config(learning, "l2"))
    l1 = fit_l1(moments, kernel, basis, model, _fit_config(learning, "l1"))
    for f in (l1, l2):
        f.report["dt"] = dt
    return l1, l2


def identify_meters(sc: Scenario, moments, learned) -> MeterWeights:
    learning = sc.learning
    return identify(moments, learned, float(learning.get("beta", 1.0)),
                    restarts=int(learning.get("restarts", 8)),
                    seed=int(learning.get("identify_seed", 0)),
                    refine=bool(learning.get("refine", False)))


def inference_settings(sc: Scenario, record):
    """``(start, length, window, noise)`` with times converted to ticks."""
    inf = dict(sc.inference)
    unknown = set(inf) - {"start", "length", "window", "noise"}
    if unknown:
        raise ConfigError(f"unknown inference keys {sorted(unknown)}")
    rate = record.reporting_rate
    start = int(round(float(inf.get("start", 0.0)) * rate))
    length = inf.get("length")
    length = record.T - start if length is None else int(round(float(length) * rate))
    if not (0 <= start and length > 0 and start + length <= record.T):
        raise ConfigError(f"inference span [{start}, {start + length}) ticks lies outside "
                          f"the {record.T}-tick record")
    window = int(round(float(inf.get("window", 10.0)) * rate))
    return start, length, window, float(inf.get("noise", 0.0))


def run_scenario(sc: Scenario, write: bool = True) -> Result:
    """simulate, corrupt, fit (L2 and L1), identify, infer, score and write artifacts."""
    timings = {}
    with stage("setup"):
        model, Q, meters, targets = scenario_grid(sc)
        sim_cfg = simulation_config(sc, Q)
    with stage("simulate"):
        truth = simulate(model, sim_cfg)
        observed = restrict_to_meters(truth, meters)
    labels = np.zeros(0, dtype=int)
    with stage("corrupt"):
        if sc.corruption:
            observed, labels = corrupt(observed, corruption_plan(sc, meters), model, sim_cfg)
    if write:
        with stage("write"):
            _write_observed(sc.outputs, observed, labels)
    with stage("moments"):
        if sc.bandpass:
            truth = bandpass_record(truth, sc.bandpass)
        observed, moments, kernel, basis = prepare_moments(sc, observed, model)
    with stage("fit"):
        t0 = time.perf_counter()
        l1, l2 = fit_both(sc, moments, kernel, basis, model, observed.dt)
        timings["fit"] = time.perf_counter() - t0
    if write:
        with stage("write"):
            _write_fits(sc.outputs, {"l1": l1, "l2": l2}, moments)
    with stage("identify"):
        weights = identify_meters(sc, moments, l1)
    if write:
        with stage("write"):
            _write_weights(sc.outputs, weights)
    with stage("infer"):
        start, length, window, noise = inference_settings(sc, observed)
        obs_span = observed.window(start, length)
        true_span = truth.window(start, length)
        t0 = time.perf_counter()
        p_l1 = predict_stitched(l1, obs_span, weights, targets, window, noise)
        timings["full"] = time.perf_counter() - t0
        p_l2 = predict_stitched(l2, obs_span, None, targets, window, noise)
        predictions = {"actual": true_span.values[:, targets], "predicted_l2": p_l2,
                       "predicted_l1_masked": p_l1}
    scores = {
        "identification": score_identification(weights.flagged, labels),
        "nrmse_l2": [normalized_rmse(p_l2[:, k], predictions["actual"][:, k])
                     for k in range(targets.size)],
        "nrmse_l1_masked": [normalized_rmse(p_l1[:, k], predictions["actual"][:, k])
                            for k in range(targets.size)],
        "A_rel_diff_l1_l2": float(np.linalg.norm(l1.A - l2.A) / np.linalg.norm(l2.A)),
    }
    scores["residual_share_l1"] = corrupted_share(l1, moments, labels)
    scores["residual_share_l2"] = corrupted_share(l2, moments, labels)
    assignment = None
    if sc.clustering is not None:
        with stage("cluster"):
            assignment, cl = _cluster_stage(sc, l1, obs_span, weights, targets, window, noise)
            predictions.update(cl["predictions"])
            timings.update(cl["timings"])
            scores.update(cl["scores"])
            scores["aggregate_nrmse"] = [
                normalized_rmse(p, a) for p, a in zip(
                    cl["predictions"]["aggregate"].T,
                    _true_aggregates(model, assignment, true_span, targets, cl["clusters"]).T)]
    result = Result(scenario=sc, model=model, truth=truth, observed=observed, labels=labels,
                    fits={"l1": l1, "l2": l2}, weights=weights, moments=moments,
                    targets=targets, span=(start, length), predictions=predictions,
                    scores=scores, timings=timings, assignment=assignment)
    if write:
        with stage("write"):
            write_artifacts(result)
    return result


def _cluster_stage(sc, learned, record, weights, targets, window, noise):
    k = sc.clustering.get("k")
    assignment = cluster_generators(learned, k, seed=int(sc.clustering.get("seed", 0)))
    # one inference window is what the timing table compares
    win = record.window(0, min(window, record.T))
    repeats = int(sc.clustering.get("timing_repeats", 3))

    def timed(fn):
        # best of a few runs, the same for every path
        best, out = np.inf, None
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = fn()
            best = min(best, time.perf_counter() - t0)
        return out, best

    full, t_full = timed(lambda: predict_nonmetered(learned, win, weights, targets, noise=noise))
    (dr, dims), t_dr = timed(lambda: infer_dimension_reduced(
        learned, win, weights, targets, assignment, return_dims=True, noise=noise))
    (agg, clusters), t_ar = timed(lambda: infer_aggregate(
        learned, win, weights, assignment, targets, noise=noise))
    kept = len(record.meter_set) - int(weights.binarized.sum())
    return assignment, {
        "predictions": {"dimension_reduced": dr, "aggregate": agg, "full_window": full},
        "timings": {"full_window": t_full, "dimension_reduced": t_dr,
                    "dimension_reduced+aggregate": t_ar},
        "scores": {"sigma11_full": kept * win.T, "sigma11_max_reduced": max(dims.values()),
                   "clusters": int(assignment.k)},
        "clusters": clusters,
    }


def _true_aggregates(model, assignment, record_truth, targets, clusters):
    cols = []
    for c in clusters:
        tc = targets[assignment.membership[targets] == c]
        cols.append(record_truth.values[:, tc] @ aggregate_weights(model, tc))
    return np.column_stack(cols)


def corrupted_share(learned, moments, labels) -> float:
    """Fraction of ``|Sigma_0(A) - C_0|`` (correlation scale) inside corrupted rows/columns."""
    R = np.abs(residuals(learned, moments, [0.0])[0])
    total = R.sum()
    if not labels.size or total == 0:
        return float("nan")
    bad = np.isin(moments.meters, labels)
    inside = R[bad].sum() + R[:, bad].sum() - R[np.ix_(bad, bad)].sum()
    return float(inside / total)


def _fmt(x):
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(r if isinstance(r, str) else _fmt(r) for r in row) + "\n")


def emit_plot_data(result: Result, out_dir: str) -> list:
    """Trajectory, residual-grid and timing files; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    obs = result.observed
    start, length = result.span
    times = obs.times[start:start + length]
    ids = result.model.generator_ids
    p = result.predictions
    for k, g in enumerate(result.targets):
        path = os.path.join(out_dir, f"trajectory_g{ids[g]}.csv")
        rows = zip(times, p["actual"][:, k], p["predicted_l2"][:, k],
                   p["predicted_l1_masked"][:, k])
        _write_csv(path, ["time", "actual", "predicted_l2", "predicted_l1_masked"], rows)
        paths.append(path)
    labels = [f"g{ids[m]}" for m in result.moments.meters]
    for name, fit in result.fits.items():
        R = np.abs(residuals(fit, result.moments, [0.0])[0])
        path = os.path.join(out_dir, f"residual_{name}.csv")
        _write_csv(path, ["meter"] + labels, ([lab] + list(row) for lab, row in zip(labels, R)))
        paths.append(path)
    path = os.path.join(out_dir, "timing.csv")
    rows = [(name, result.timings[key]) for name, key in
            (("full", "full_window"), ("dimension_reduced", "dimension_reduced"),
             ("dimension_reduced+aggregate", "dimension_reduced+aggregate"))
            if key in result.timings]
    _write_csv(path, ["method", "seconds"], rows)
    paths.append(path)
    return paths


def write_artifacts(result: Result) -> None:
    out = result.scenario.outputs
    _write_observed(out, result.observed, result.labels)
    _write_fits(out, result.fits, result.moments)
    _write_weights(out, result.weights)
    with open(os.path.join(out, "scores.json"), "w") as fh:
        json.dump(result.scores, fh, indent=1, sort_keys=True, default=_jsonable)
    if result.assignment is not None:
        with open(os.path.join(out, "clusters.csv"), "w") as fh:
            fh.write(result.assignment.export(list(result.model.generator_ids)))
    emit_plot_data(result, os.path.join(out, "plots"))


def _write_observed(out, observed, labels):
    os.makedirs(out, exist_ok=True)
    write_record(observed, os.path.join(out, "observed.csv"))
    with open(os.path.join(out, "labels.json"), "w") as fh:
        json.dump({"corrupted": [int(g) for g in labels]}, fh)


def _write_fits(out, fits, moments):
    for name, fit in fits.items():
        np.savetxt(os.path.join(out, f"A_{name}.csv"), fit.A, delimiter=",", fmt="%.17g")
        with open(os.path.join(out, f"fit_{name}.txt"), "w") as fh:
            fh.write(fit_report(fit, moments))


def _write_weights(out, weights):
    with open(os.path.join(out, "identification.txt"), "w") as fh:
        fh.write(weights.report())


def _jsonable(obj):
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj)} is not JSON serializable")


SUITE_DIR = os.path.join(os.path.dirname(__file__), "scenarios")


def bundled_scenarios() -> dict:
    """Name to path of every scenario shipped with the package."""
    return {os.path.splitext(f)[0]: os.path.join(SUITE_DIR, f)
            for f in sorted(os.listdir(SUITE_DIR)) if f.endswith(".json")}


def resolve_scenario(name_or_path) -> Scenario:
    if os.path.exists(name_or_path):
        return Scenario.load(name_or_path)
    bundled = bundled_scenarios()
    if name_or_path not in bundled:
        raise ConfigError(f"no scenario file {name_or_path!r}; bundled: {sorted(bundled)}")
    return Scenario.load(bundled[name_or_path])
