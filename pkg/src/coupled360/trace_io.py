"""Bandwidth trace ingestion and per-GOP resampling."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

_TIME_UNITS = {"s": 1.0, "ms": 1e-3}
_RATE_UNITS = {"bps": 1e-6, "kbps": 1e-3, "mbps": 1.0}


class TraceParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


class TraceValidationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BandwidthTrace:
    times: np.ndarray      # seconds
    mbps: np.ndarray
    name: str = ""

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        v = np.array(self.mbps, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise TraceValidationError("trace needs at least one sample")
        if t.shape != v.shape:
            raise TraceValidationError("times and throughputs differ in length")
        if np.any(np.diff(t) <= 0):
            raise TraceValidationError("timestamps must be strictly increasing")
        if np.any(v < 0):
            raise TraceValidationError("throughput must be non-negative")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "mbps", v)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def scaled(self, factor: float) -> "BandwidthTrace":
        return BandwidthTrace(self.times, self.mbps * factor, self.name)


@dataclass(frozen=True)
class TraceFormat:
    """Column layout and units of a delimited trace file.

    ``value_unit="bytes"`` means bytes received per interval; the interval
    length comes from ``interval_col`` (in ``interval_unit``) or, failing
    that, ``interval_s``.  ``delimiter=None`` splits on whitespace.
    """

    delimiter: str | None = ","
    time_col: int = 0
    value_col: int = 1
    time_unit: str = "s"
    value_unit: str = "mbps"
    interval_col: int | None = None
    interval_unit: str = "ms"
    interval_s: float | None = None
    header: bool | None = None       # None: skip a first line that does not parse
    comment: str = "#"
    relative_time: bool = True       # shift so the first sample is at t = 0

    def __post_init__(self):
        if self.time_unit not in _TIME_UNITS or self.interval_unit not in _TIME_UNITS:
            raise ValueError("time units are 's' or 'ms'")
        if self.value_unit not in (*_RATE_UNITS, "bytes"):
            raise ValueError(f"unknown throughput unit {self.value_unit!r}")
        if self.value_unit == "bytes" and self.interval_col is None and not self.interval_s:
            raise ValueError("bytes per interval needs an interval column or length")

    @classmethod
    def from_dict(cls, data: dict | None) -> "TraceFormat":
        data = dict(data or {})
        preset = data.pop("preset", None)
        base = PRESETS[preset] if preset else cls()
        fields = {**base.__dict__, **data}
        return cls(**fields)


# Logs of the 4G/LTE measurement campaign layout: epoch ms, lon, lat,
# bytes since the previous sample, ms since the previous sample.
PRESETS = {
    "normalized": TraceFormat(),
    "lte_log": TraceFormat(delimiter=None, time_col=0, value_col=3, time_unit="ms",
                           value_unit="bytes", interval_col=4, interval_unit="ms"),
}


def parse_trace(path, fmt: TraceFormat | None = None, name: str | None = None) -> BandwidthTrace:
    fmt = fmt or TraceFormat()
    path = Path(path)
    times, values = [], []
    with path.open() as fh:
        lines = fh.read().splitlines()
    first_data = True
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or (fmt.comment and line.startswith(fmt.comment)):
            continue
        parts = line.split(fmt.delimiter) if fmt.delimiter else line.split()
        if first_data and fmt.header is not False:
            first_data = False
            if fmt.header or not _numeric(parts, fmt):
                continue
        first_data = False
        try:
            t = float(parts[fmt.time_col]) * _TIME_UNITS[fmt.time_unit]
            raw_value = float(parts[fmt.value_col])
            if fmt.value_unit == "bytes":
                if fmt.interval_col is not None:
                    interval = float(parts[fmt.interval_col]) * _TIME_UNITS[fmt.interval_unit]
                else:
                    interval = fmt.interval_s
                if interval <= 0:
                    raise ValueError("interval must be positive")
                value = raw_value * 8.0 / 1e6 / interval
            else:
                value = raw_value * _RATE_UNITS[fmt.value_unit]
        except (IndexError, ValueError) as exc:
            raise TraceParseError(path, lineno, f"malformed row {raw!r} ({exc})") from None
        times.append(t)
        values.append(value)
    if not times:
        raise TraceValidationError(f"{path}: no samples")
    times = np.asarray(times)
    if fmt.relative_time:
        times = times - times[0]
    return BandwidthTrace(times, values, name if name is not None else path.stem)


def _numeric(parts, fmt: TraceFormat) -> bool:
    try:
        float(parts[fmt.time_col])
        float(parts[fmt.value_col])
    except (IndexError, ValueError):
        return False
    return True


def write_trace(trace: BandwidthTrace, path) -> None:
    """Write the normalized ``t_seconds,mbps`` form (lossless floats)."""
    with Path(path).open("w") as fh:
        fh.write("t_seconds,mbps\n")
        for t, v in zip(trace.times, trace.mbps):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


class GopAverages(NamedTuple):
    values: np.ndarray
    extended: bool


def _cumulative_hold(trace: BandwidthTrace, at: np.ndarray) -> np.ndarray:
    """Integral of the sample-and-hold throughput from the first sample to ``at``.

    Before the first sample the first value is held backwards.
    """
    t, v = trace.times, trace.mbps
    seg = np.concatenate([[0.0], np.cumsum(np.diff(t) * v[:-1])])
    idx = np.clip(np.searchsorted(t, at, side="right") - 1, 0, t.size - 1)
    return seg[idx] + (at - t[idx]) * v[idx]


def _cumulative_linear(trace: BandwidthTrace, at: np.ndarray) -> np.ndarray:
    t, v = trace.times, trace.mbps
    seg = np.concatenate([[0.0], np.cumsum(np.diff(t) * (v[:-1] + v[1:]) / 2.0)])
    idx = np.clip(np.searchsorted(t, at, side="right") - 1, 0, t.size - 1)
    nxt = np.minimum(idx + 1, t.size - 1)
    span = np.where(nxt > idx, t[nxt] - t[idx], 1.0)
    slope = np.where(nxt > idx, (v[nxt] - v[idx]) / span, 0.0)
    dt = at - t[idx]
    inside = (at >= t[0]) & (at <= t[-1])
    part = np.where(inside, v[idx] * dt + 0.5 * slope * dt ** 2, dt * v[idx])
    return seg[idx] + part


def gop_average(trace: BandwidthTrace, gop_duration: float = 1.0, gops: int = 1,
                start: float = 0.0, interpolation: str = "hold") -> GopAverages:
    """Time-weighted mean throughput over each GOP interval."""
    if gops < 1:
        raise ValueError("need at least one GOP")
    if gop_duration <= 0:
        raise ValueError("GOP duration must be positive")
    edges = start + gop_duration * np.arange(gops + 1)
    if interpolation == "hold":
        cum = _cumulative_hold(trace, edges)
        extended = bool(edges[0] < trace.times[0] or edges[-1] > trace.times[-1] + _hold_span(trace))
    elif interpolation == "linear":
        cum = _cumulative_linear(trace, edges)
        extended = bool(edges[0] < trace.times[0] or edges[-1] > trace.times[-1])
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return GopAverages(np.diff(cum) / gop_duration, extended)


def _hold_span(trace: BandwidthTrace) -> float:
    """How long the last sample is considered measured (one typical interval)."""
    if trace.times.size < 2:
        return 0.0
    return float(np.median(np.diff(trace.times)))


def trace_table(values, gop_duration: float) -> str:
    lines = ["gop,start_s,mbps"]
    for k, v in enumerate(values):
        lines.append(f"{k},{k * gop_duration!r},{float(v)!r}")
    return "\n".join(lines) + "\n"
