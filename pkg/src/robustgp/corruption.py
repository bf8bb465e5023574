"""Injectors for false data, gross errors and clock drift.

Every injector returns ``(corrupted_record, labels)`` where ``labels`` is the
sorted array of generator indices whose columns were modified.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .grid import GridModel
from .simulate import SimulationConfig, simulate
from .timeseries import TimeSeriesRecord

KINDS = ("false_data_injection", "gross_errors", "clock_drift")

FDI_DEFAULTS = {"scale": 1.0, "q_gain": 0.5, "load_spread": 0.1}
GROSS_DEFAULTS = {"count": 21, "magnitude": 0.1}
DRIFT_DEFAULTS = {"rate": 0.1, "period": 1.0}


@dataclass(frozen=True)
class CorruptionPlan:
    """What to corrupt and how.

    ``parameters`` by kind:

    * false_data_injection: ``scale`` (0 disables the perturbation),
      ``q_gain`` (input intensity becomes ``Q * (1 + q_gain * scale)``),
      ``load_spread`` (diagonal load factors drawn from
      ``1 +- load_spread * scale``)
    * gross_errors: ``count``, ``magnitude``
    * clock_drift: ``rate`` (seconds of drift per second), ``period``
      (resynchronization interval in seconds)
    """

    kind: str
    target_meters: tuple
    parameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}; expected one of {KINDS}")
        targets = tuple(int(t) for t in self.target_meters)
        if not targets:
            raise ConfigError("corruption needs at least one target meter")
        defaults = {"false_data_injection": FDI_DEFAULTS, "gross_errors": GROSS_DEFAULTS,
                    "clock_drift": DRIFT_DEFAULTS}[self.kind]
        params = {**defaults, **dict(self.parameters)}
        unknown = set(params) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown {self.kind} parameters {sorted(unknown)}")
        if self.kind == "gross_errors" and int(params["count"]) < 0:
            raise ConfigError("gross error count must be nonnegative")
        if self.kind == "clock_drift":
            if params["rate"] < 0:
                raise ConfigError("drift rate must be nonnegative")
            if not params["period"] > 0:
                raise ConfigError("resync period must be positive")
        object.__setattr__(self, "target_meters", targets)
        object.__setattr__(self, "parameters", params)


def _target_columns(record: TimeSeriesRecord, plan: CorruptionPlan):
    pos = {int(g): k for k, g in enumerate(record.meter_set)}
    outside = [t for t in plan.target_meters if t not in pos]
    if outside:
        raise ConfigError(f"target meters {outside} are not in the record's meter set")
    return [pos[t] for t in plan.target_meters]


def _expect(plan, kind):
    if plan.kind != kind:
        raise ConfigError(f"plan kind is {plan.kind!r}, expected {kind!r}")


def _labelled(record, values, cols, kind):
    meta = dict(record.metadata)
    meta["corruption"] = kind
    changed = [c for c in cols if not np.array_equal(values[:, c], record.values[:, c])]
    labels = np.array(sorted(int(record.meter_set[c]) for c in changed), dtype=int)
    return replace(record, values=values, metadata=meta), labels


def perturbed_model(model: GridModel, plan: CorruptionPlan) -> GridModel:
    """Model with diagonally rescaled loading ``S L S``, ``S = diag(sqrt(1 + u))``."""
    p = plan.parameters
    rng = np.random.default_rng(plan.seed)
    u = p["load_spread"] * p["scale"] * rng.uniform(-1.0, 1.0, model.n)
    s = np.sqrt(1.0 + u)
    return replace(model, laplacian=s[:, None] * model.laplacian * s[None, :])


def inject_fdi(record: TimeSeriesRecord, model: GridModel, plan: CorruptionPlan,
               sim_config: SimulationConfig):
    """Replace target columns with the same generators from a perturbed parallel simulation."""
    _expect(plan, "false_data_injection")
    if model is None or sim_config is None:
        raise ConfigError("false data injection needs the grid model and simulation config")
    cols = _target_columns(record, plan)
    p = plan.parameters
    Q = sim_config.noise_intensity(model.n) * (1.0 + p["q_gain"] * p["scale"])
    parallel = simulate(perturbed_model(model, plan),
                        replace(sim_config, Q=Q, seed=plan.seed))
    if parallel.T != record.T or parallel.reporting_rate != record.reporting_rate:
        raise ConfigError("parallel simulation does not line up with the record")
    values = np.array(record.values)
    for c, g in zip(cols, plan.target_meters):
        values[:, c] = parallel.values[:, g]
    return _labelled(record, values, cols, plan.kind)


def inject_gross_errors(record: TimeSeriesRecord, plan: CorruptionPlan):
    """Add ``+-magnitude`` at ``count`` distinct random (target meter, tick) positions."""
    _expect(plan, "gross_errors")
    cols = _target_columns(record, plan)
    count = int(plan.parameters["count"])
    mag = float(plan.parameters["magnitude"])
    available = len(cols) * record.T
    if count > available:
        raise ConfigError(f"{count} gross errors requested but only {available} positions exist")
    rng = np.random.default_rng(plan.seed)
    flat = rng.choice(available, size=count, replace=False)
    signs = rng.choice([-1.0, 1.0], size=count)
    values = np.array(record.values)
    which, ticks = np.divmod(flat, record.T)
    for k, t, s in zip(which, ticks, signs):
        values[t, cols[k]] += s * mag
    return _labelled(record, values, cols, plan.kind)


def drift_offsets(times, rate: float, period: float, t0: float) -> np.ndarray:
    """Clock error ``rate * ((t - t0) mod period)``; it resets at each resync instant."""
    return rate * np.mod(np.asarray(times) - t0, period)


def inject_clock_drift(record: TimeSeriesRecord, plan: CorruptionPlan, t0: float = None):
    """Report each target's signal at its drifted clock time (linear interpolation).

    Resync cycles start at ``t0`` (default: the first tick).  Reads past the
    last tick hold the final sample instead of extrapolating.
    """
    _expect(plan, "clock_drift")
    cols = _target_columns(record, plan)
    rate = float(plan.parameters["rate"])
    period = float(plan.parameters["period"])
    times = record.times
    span = times[-1] - times[0]
    if rate * period >= span:
        raise ConfigError(
            f"drift offset up to {rate * period:.3g} s exceeds the record duration {span:.3g} s"
        )
    t0 = times[0] if t0 is None else t0
    shifted = times + drift_offsets(times, rate, period, t0)
    values = np.array(record.values)
    for c in cols:
        values[:, c] = np.interp(shifted, times, record.values[:, c])
    return _labelled(record, values, cols, plan.kind)


def corrupt(record, plan: CorruptionPlan, model=None, sim_config=None):
    """Dispatch ``plan`` to the matching injector."""
    if plan.kind == "false_data_injection":
        return inject_fdi(record, model, plan, sim_config)
    if plan.kind == "gross_errors":
        return inject_gross_errors(record, plan)
    return inject_clock_drift(record, plan)
