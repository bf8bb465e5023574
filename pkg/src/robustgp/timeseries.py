"""Generator-speed time series and their delimited-text file format."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .errors import ConfigError


@dataclass(frozen=True)
class TimeSeriesRecord:
    """Speeds sampled at ``reporting_rate`` for the generators in ``meter_set``.

    Column ``k`` of ``values`` holds generator ``meter_set[k]`` (0-based
    index into the grid model).
    """

    values: np.ndarray
    reporting_rate: float
    start_time: float = 0.0
    meter_set: np.ndarray = None
    generator_ids: tuple = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 2:
            raise ConfigError("a record needs at least 2 ticks")
        if not np.all(np.isfinite(values)):
            raise ConfigError("record contains NaN or Inf")
        if not self.reporting_rate > 0:
            raise ConfigError("reporting_rate must be positive")
        meters = self.meter_set
        meters = np.arange(values.shape[1]) if meters is None else np.asarray(meters, dtype=int)
        if meters.shape != (values.shape[1],) or np.any(meters < 0):
            raise ConfigError("meter_set must list one nonnegative generator index per column")
        if len(np.unique(meters)) != len(meters):
            raise ConfigError("meter_set has duplicates")
        ids = self.generator_ids
        ids = tuple(str(m + 1) for m in meters) if ids is None else tuple(str(i) for i in ids)
        if len(ids) != len(meters):
            raise ConfigError("generator_ids must label every column")
        values.setflags(write=False)
        meters.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "meter_set", meters)
        object.__setattr__(self, "generator_ids", ids)
        object.__setattr__(self, "reporting_rate", float(self.reporting_rate))
        object.__setattr__(self, "start_time", float(self.start_time))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return 1.0 / self.reporting_rate

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.T) / self.reporting_rate

    def column(self, generator: int) -> np.ndarray:
        hit = np.flatnonzero(self.meter_set == generator)
        if not hit.size:
            raise ConfigError(f"generator {generator} is not in this record")
        return self.values[:, hit[0]]

    def window(self, start: int, length: int) -> "TimeSeriesRecord":
        """Ticks ``start .. start + length - 1`` as a new record."""
        if start < 0 or length < 2 or start + length > self.T:
            raise ConfigError(f"window [{start}, {start + length}) outside record of {self.T} ticks")
        return replace(self, values=self.values[start:start + length],
                       start_time=self.start_time + start / self.reporting_rate)

    def with_values(self, values) -> "TimeSeriesRecord":
        return replace(self, values=values)


def restrict_to_meters(record: TimeSeriesRecord, meters) -> TimeSeriesRecord:
    """Keep only the columns of generators in ``meters`` (selection ``z = S w``)."""
    meters = np.asarray(list(meters), dtype=int)
    if meters.size == 0:
        raise ConfigError("meter set must be nonempty")
    pos = {int(g): k for k, g in enumerate(record.meter_set)}
    missing = [int(g) for g in meters if int(g) not in pos]
    if missing:
        raise ConfigError(f"generators {missing} are not columns of the record")
    cols = [pos[int(g)] for g in meters]
    return replace(record, values=record.values[:, cols], meter_set=meters,
                   generator_ids=tuple(record.generator_ids[c] for c in cols))


def bandpass_record(record: TimeSeriesRecord, band_hz, order: int = 4) -> TimeSeriesRecord:
    """Zero-phase Butterworth bandpass of every column (lowpass when ``f_lo`` is 0)."""
    f_lo, f_hi = (float(b) for b in band_hz)
    nyq = record.reporting_rate / 2.0
    if f_hi >= nyq:
        if f_lo <= 0:
            return record
        sos = signal.butter(order, f_lo, btype="highpass", fs=record.reporting_rate, output="sos")
    elif f_lo <= 0:
        sos = signal.butter(order, f_hi, btype="lowpass", fs=record.reporting_rate, output="sos")
    else:
        sos = signal.butter(order, [f_lo, f_hi], btype="bandpass", fs=record.reporting_rate,
                            output="sos")
    filtered = signal.sosfiltfilt(sos, record.values, axis=0)
    meta = dict(record.metadata, bandpass_hz=[f_lo, f_hi])
    return replace(record, values=filtered, metadata=meta)


def _sidecar(path):
    root, _ = os.path.splitext(path)
    return root + ".meta.json"


def write_record(record: TimeSeriesRecord, path, prefix: str = "g", extra_columns=None) -> None:
    """Write ``time,g<ID>,...`` rows plus a ``.meta.json`` sidecar.

    ``extra_columns`` is an optional ``{name: vector}`` mapping appended
    after the generator columns (e.g. posterior standard deviations).
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    header = ["time"] + [f"{prefix}{g}" for g in record.generator_ids]
    cols = [record.times[:, None], record.values]
    for name, vec in (extra_columns or {}).items():
        header.append(name)
        cols.append(np.asarray(vec, dtype=float).reshape(record.T, -1))
    np.savetxt(path, np.hstack(cols), delimiter=",", header=",".join(header),
               comments="", fmt="%.17g")
    meta = {
        "reporting_rate": record.reporting_rate,
        "start_time": record.start_time,
        "meter_set": [int(m) for m in record.meter_set],
        "generator_ids": list(record.generator_ids),
        "units": record.metadata.get("units", "per-unit speed deviation"),
        "seed": record.metadata.get("seed"),
        "metadata": record.metadata,
    }
    with open(_sidecar(path), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj)} is not JSON serializable")


def read_record(path) -> TimeSeriesRecord:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "time":
        raise ConfigError(f"{path}: first column must be 'time'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = {}
    if os.path.exists(_sidecar(path)):
        with open(_sidecar(path)) as fh:
            meta = json.load(fh)
    times = data[:, 0]
    rate = meta.get("reporting_rate")
    if rate is None:
        rate = 1.0 / np.median(np.diff(times))
    ids = meta.get("generator_ids") or [h[1:] for h in header[1:]]
    values = data[:, 1:1 + len(ids)]
    meters = meta.get("meter_set")
    return TimeSeriesRecord(values=values, reporting_rate=rate, start_time=float(times[0]),
                            meter_set=meters, generator_ids=ids,
                            metadata=meta.get("metadata", {}))
