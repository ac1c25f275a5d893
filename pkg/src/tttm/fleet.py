"""Fleet data model and file formats.

A fleet is a set of process tools, each carrying a trace-summary (T-SUM)
matrix: one row per sensor, one column per run, plus the run timestamps.
This module owns the in-memory types, the CSV interchange formats and the
trace-to-summary encoder. Nothing here scores anything; downstream modules
consume :class:`FleetDataset` instances.

CSV formats
-----------
T-SUM rows:   ``tool_id,sensor_id,run_id,timestamp,value``
trace rows:   ``tool_id,sensor_id,run_id,sample_index,value``
PM log rows:  ``tool_id,timestamp``

Timestamps are integer epoch seconds. Values are finite floats.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DuplicateKeyError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    SensorNotFoundError,
    ShapeError,
)

__all__ = [
    "TsumMatrix",
    "FleetDataset",
    "TraceBlock",
    "StatSpec",
    "SensorSeries",
    "load_tsum",
    "save_tsum",
    "load_pm_log",
    "save_pm_log",
    "load_traces",
    "tst_encode",
    "union_sensors",
    "sensor_slice",
    "STATISTICS",
]

TSUM_HEADER = ["tool_id", "sensor_id", "run_id", "timestamp", "value"]
TRACE_HEADER = ["tool_id", "sensor_id", "run_id", "sample_index", "value"]
PM_HEADER = ["tool_id", "timestamp"]

#: supported per-run summary statistics, applied along the sample axis
_STAT_FUNCS = {
    "mean": np.mean,
    "median": np.median,
    "stdev": np.std,  # population convention
    "max": np.max,
    "min": np.min,
    "range": np.ptp,
}

STATISTICS = tuple(sorted(_STAT_FUNCS))


@dataclass(frozen=True)
class StatSpec:
    """Which summary statistic the trace encoder computes per run."""

    statistic: str = "mean"

    def __post_init__(self):
        if self.statistic not in _STAT_FUNCS:
            raise SchemaError(
                f"unknown statistic {self.statistic!r}; "
                f"expected one of {sorted(_STAT_FUNCS)}"
            )

    def apply(self, samples: np.ndarray) -> np.ndarray:
        return np.asarray(_STAT_FUNCS[self.statistic](samples, axis=-1), dtype=float)


@dataclass
class TraceBlock:
    """Raw trace samples for one run of one tool.

    ``samples`` is (n_sensors, n_samples) in the order given by ``sensors``.
    ``end_time`` is the epoch second of the run's last sample when known;
    encoders fall back to the block's position when it is absent.
    """

    tool: str
    run: str
    sensors: list[str]
    samples: np.ndarray
    end_time: int | None = None


@dataclass
class TsumMatrix:
    """Per-run summary values for one tool: sensors x runs."""

    tool: str
    sensors: list[str]
    values: np.ndarray
    timestamps: np.ndarray
    run_ids: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.values.ndim != 2:
            raise ShapeError(f"values must be 2-D, got shape {self.values.shape}")
        n, p = self.values.shape
        if n != len(self.sensors):
            raise ShapeError(f"{len(self.sensors)} sensors but {n} value rows")
        if p != len(self.timestamps) or p != len(self.run_ids):
            raise ShapeError(
                f"{p} columns but {len(self.timestamps)} timestamps / "
                f"{len(self.run_ids)} run ids"
            )
        if len(set(self.sensors)) != len(self.sensors):
            raise SchemaError(f"tool {self.tool}: duplicate sensor ids")
        if p and np.any(np.diff(self.timestamps) < 0):
            raise SchemaError(f"tool {self.tool}: timestamps not sorted")
        if not np.all(np.isfinite(self.values)):
            raise SchemaError(f"tool {self.tool}: non-finite summary values")

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def n_points(self) -> int:
        return self.values.shape[1]

    def row(self, sensor: str) -> np.ndarray:
        try:
            return self.values[self.sensors.index(sensor)]
        except ValueError:
            raise SensorNotFoundError(f"tool {self.tool} has no sensor {sensor!r}") from None

    def with_values(self, values: np.ndarray) -> "TsumMatrix":
        return replace(self, values=np.array(values, dtype=float))

    def select_columns(self, mask: np.ndarray) -> "TsumMatrix":
        mask = np.asarray(mask, dtype=bool)
        return TsumMatrix(
            tool=self.tool,
            sensors=list(self.sensors),
            values=self.values[:, mask],
            timestamps=self.timestamps[mask],
            run_ids=[r for r, keep in zip(self.run_ids, mask) if keep],
        )


@dataclass
class FleetDataset:
    """All tools of a fleet plus their maintenance logs.

    ``meta`` collects processing flags (degenerate sensors, fallbacks) that
    later stages append to; it never affects numeric results.
    """

    tools: list[TsumMatrix]
    pm_logs: dict[str, list[int]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [t.tool for t in self.tools]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate tool ids in fleet")

    @property
    def tool_ids(self) -> list[str]:
        return [t.tool for t in self.tools]

    @property
    def n_tools(self) -> int:
        return len(self.tools)

    def tool(self, tool_id: str) -> TsumMatrix:
        for t in self.tools:
            if t.tool == tool_id:
                return t
        raise SchemaError(f"fleet has no tool {tool_id!r}")

    def add_flag(self, key: str, value) -> None:
        self.meta.setdefault(key, []).append(value)


@dataclass(frozen=True)
class SensorSeries:
    """One sensor's values on one tool, kept with their timestamps."""

    tool: str
    values: np.ndarray
    timestamps: np.ndarray


def _float_repr(x: float) -> str:
    # repr round-trips exactly, which keeps load -> save -> load idempotent
    return repr(float(x))


def _read_rows(path: str, header: list[str]):
    """Yield (line_number, row) after validating the header line."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected a header row", path=path, line=1)
        if [c.strip() for c in first] != header:
            raise ParseError(
                f"bad header {first!r}, expected {header!r}", path=path, line=1
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} columns, got {len(row)}",
                    path=path,
                    line=line_no,
                )
            yield line_no, row


def _parse_int(text: str, what: str, path: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"bad {what} {text!r}", path=path, line=line) from None


def _parse_float(text: str, what: str, path: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"bad {what} {text!r}", path=path, line=line) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite {what} {text!r}", path=path, line=line)
    return value


def load_tsum(path: str, pm_path: str | None = None) -> FleetDataset:
    """Load a T-SUM CSV (and optional PM log) into a :class:`FleetDataset`.

    Within one tool, every sensor must carry a value for every
    (timestamp, run) column that appears; gaps raise :class:`SchemaError`,
    repeated (tool, sensor, timestamp) cells raise
    :class:`DuplicateKeyError`.
    """
    per_tool: dict[str, dict] = {}
    for line_no, row in _read_rows(path, TSUM_HEADER):
        tool, sensor, run, ts_text, val_text = (c.strip() for c in row)
        if not tool or not sensor:
            raise ParseError("empty tool or sensor id", path=path, line=line_no)
        ts = _parse_int(ts_text, "timestamp", path, line_no)
        value = _parse_float(val_text, "value", path, line_no)
        bucket = per_tool.setdefault(tool, {"cells": {}, "sensors": set(), "cols": {}})
        key = (sensor, ts)
        if key in bucket["cells"]:
            raise DuplicateKeyError(
                f"duplicate cell tool={tool} sensor={sensor} timestamp={ts}",
                path=path,
                line=line_no,
            )
        bucket["cells"][key] = value
        bucket["sensors"].add(sensor)
        col = (ts, run)
        prev_run = bucket["cols"].get(ts)
        if prev_run is not None and prev_run != run:
            raise SchemaError(
                f"tool {tool}: timestamp {ts} claimed by runs {prev_run!r} and {run!r}"
            )
        bucket["cols"][ts] = run

    tools = []
    for tool in sorted(per_tool):
        bucket = per_tool[tool]
        sensors = sorted(bucket["sensors"])
        stamps = sorted(bucket["cols"])
        values = np.empty((len(sensors), len(stamps)))
        for i, sensor in enumerate(sensors):
            for j, ts in enumerate(stamps):
                try:
                    values[i, j] = bucket["cells"][(sensor, ts)]
                except KeyError:
                    raise SchemaError(
                        f"tool {tool}: sensor {sensor} missing value at timestamp {ts}"
                    ) from None
        tools.append(
            TsumMatrix(
                tool=tool,
                sensors=sensors,
                values=values,
                timestamps=np.array(stamps, dtype=np.int64),
                run_ids=[bucket["cols"][ts] for ts in stamps],
            )
        )
    pm_logs = load_pm_log(pm_path) if pm_path else {}
    return FleetDataset(tools=tools, pm_logs=pm_logs)


def save_tsum(fleet: FleetDataset, path: str) -> None:
    """Write the fleet back to T-SUM CSV; exact inverse of :func:`load_tsum`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TSUM_HEADER)
        for tool in fleet.tools:
            for i, sensor in enumerate(tool.sensors):
                for j in range(tool.n_points):
                    writer.writerow(
                        [
                            tool.tool,
                            sensor,
                            tool.run_ids[j],
                            int(tool.timestamps[j]),
                            _float_repr(tool.values[i, j]),
                        ]
                    )


def load_pm_log(path: str) -> dict[str, list[int]]:
    """Load preventive-maintenance events as tool -> sorted timestamps."""
    logs: dict[str, list[int]] = {}
    for line_no, row in _read_rows(path, PM_HEADER):
        tool, ts_text = (c.strip() for c in row)
        if not tool:
            raise ParseError("empty tool id", path=path, line=line_no)
        logs.setdefault(tool, []).append(_parse_int(ts_text, "timestamp", path, line_no))
    return {tool: sorted(stamps) for tool, stamps in logs.items()}


def save_pm_log(pm_logs: dict[str, list[int]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PM_HEADER)
        for tool in sorted(pm_logs):
            for ts in pm_logs[tool]:
                writer.writerow([tool, int(ts)])


def load_traces(path: str) -> dict[str, list[TraceBlock]]:
    """Load a trace CSV into per-tool lists of :class:`TraceBlock`.

    The format carries no wall-clock time, so blocks come back with
    ``end_time=None`` and the encoder will use run order instead.
    """
    staged: dict[tuple[str, str], dict[str, dict[int, float]]] = {}
    run_order: dict[str, list[str]] = {}
    for line_no, row in _read_rows(path, TRACE_HEADER):
        tool, sensor, run, idx_text, val_text = (c.strip() for c in row)
        if not tool or not sensor:
            raise ParseError("empty tool or sensor id", path=path, line=line_no)
        idx = _parse_int(idx_text, "sample_index", path, line_no)
        value = _parse_float(val_text, "value", path, line_no)
        block = staged.setdefault((tool, run), {})
        samples = block.setdefault(sensor, {})
        if idx in samples:
            raise DuplicateKeyError(
                f"duplicate sample tool={tool} sensor={sensor} run={run} index={idx}",
                path=path,
                line=line_no,
            )
        samples[idx] = value
        order = run_order.setdefault(tool, [])
        if run not in order:
            order.append(run)

    out: dict[str, list[TraceBlock]] = {}
    for tool in sorted(run_order):
        blocks = []
        for run in run_order[tool]:
            per_sensor = staged[(tool, run)]
            sensors = sorted(per_sensor)
            lengths = {len(per_sensor[s]) for s in sensors}
            if len(lengths) != 1:
                raise SchemaError(
                    f"tool {tool} run {run}: sensors disagree on sample count {sorted(lengths)}"
                )
            (n_samples,) = lengths
            samples = np.empty((len(sensors), n_samples))
            for i, sensor in enumerate(sensors):
                got = per_sensor[sensor]
                if sorted(got) != list(range(n_samples)):
                    raise SchemaError(
                        f"tool {tool} run {run} sensor {sensor}: "
                        f"sample indices not contiguous from 0"
                    )
                samples[i] = [got[k] for k in range(n_samples)]
            blocks.append(TraceBlock(tool=tool, run=run, sensors=sensors, samples=samples))
        out[tool] = blocks
    return out


def tst_encode(traces: list[TraceBlock], spec: StatSpec) -> TsumMatrix:
    """Collapse per-run traces into one summary matrix (one column per run).

    All blocks must belong to one tool and share the sensor ordering. The
    column timestamp is the run's end time when the block carries one and
    the block's position in the list otherwise.
    """
    if not traces:
        raise InsufficientDataError("no trace blocks to encode")
    tool = traces[0].tool
    sensors = list(traces[0].sensors)
    columns = []
    for pos, block in enumerate(traces):
        if block.tool != tool:
            raise SchemaError(f"mixed tools in trace batch: {tool!r} vs {block.tool!r}")
        if list(block.sensors) != sensors:
            raise ShapeError(
                f"tool {tool} run {block.run}: sensor ordering differs from first block"
            )
        samples = np.asarray(block.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] != len(sensors):
            raise ShapeError(
                f"tool {tool} run {block.run}: samples shape {samples.shape} "
                f"does not match {len(sensors)} sensors"
            )
        if samples.shape[1] == 0:
            raise InsufficientDataError(f"tool {tool} run {block.run}: empty trace")
        ts = block.end_time if block.end_time is not None else pos
        columns.append((int(ts), block.run, spec.apply(samples)))
    columns.sort(key=lambda c: c[0])
    return TsumMatrix(
        tool=tool,
        sensors=sensors,
        values=np.column_stack([c[2] for c in columns]),
        timestamps=np.array([c[0] for c in columns], dtype=np.int64),
        run_ids=[c[1] for c in columns],
    )


def union_sensors(fleet: FleetDataset) -> list[str]:
    """Lexicographically sorted union of sensor ids across the fleet."""
    seen: set[str] = set()
    for tool in fleet.tools:
        seen.update(tool.sensors)
    return sorted(seen)


def sensor_slice(fleet: FleetDataset, sensor: str) -> list[SensorSeries]:
    """Per-tool value vectors of one sensor, tools lacking it skipped."""
    slices = [
        SensorSeries(tool=t.tool, values=t.row(sensor), timestamps=t.timestamps)
        for t in fleet.tools
        if sensor in t.sensors
    ]
    if not slices:
        raise SensorNotFoundError(f"sensor {sensor!r} absent from every tool")
    return slices
