"""Synthetic fleet generator with labeled deviations.

Produces T-SUM fleets whose ground truth is known exactly, for method
validation and calibration studies. Baseline values are Gaussian around
per-sensor levels; sensors can be grouped into correlation blocks that
share a latent factor; deviations (mean shifts, variance inflation,
extra modes, trends), maintenance level shifts and missing spans are
injected per tool and recorded as labels.

Everything is driven by one integer seed through per-tool child
generators, so a spec generates the identical fleet every time and tool
generation order cannot leak randomness across tools.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import SpecValidationError
from .fleet import FleetDataset, TsumMatrix

__all__ = [
    "DeviationSpec",
    "CorrelationBlock",
    "PmEvent",
    "SynthSpec",
    "DeviationRecord",
    "GroundTruth",
    "generate_fleet",
    "paper_scale_spec",
    "desk_scale_spec",
]

DEVIATION_KINDS = ("mean_shift", "variance_inflation", "extra_mode", "linear_trend", "poly_trend")

DEFAULT_EPOCH = 1_700_000_000
DEFAULT_SPACING = 9_600  # seconds between runs


@dataclass(frozen=True)
class DeviationSpec:
    """One injected deviation.

    ``magnitude`` is in units of the sensor's baseline sigma for shifts,
    modes and trends, and is the variance multiplier for
    ``variance_inflation``.
    """

    tool: str
    sensors: tuple[str, ...]
    kind: str
    magnitude: float

    def __post_init__(self):
        if self.kind not in DEVIATION_KINDS:
            raise SpecValidationError(
                f"unknown deviation kind {self.kind!r}, expected one of {DEVIATION_KINDS}"
            )
        if self.kind == "variance_inflation" and self.magnitude <= 0:
            raise SpecValidationError("variance multiplier must be positive")


@dataclass(frozen=True)
class CorrelationBlock:
    """Sensors sharing one latent factor with intra-block correlation rho."""

    sensors: tuple[str, ...]
    rho: float

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise SpecValidationError(f"rho must be in [0, 1], got {self.rho}")


@dataclass(frozen=True)
class PmEvent:
    """Maintenance at ``timestamp``; all of the tool's sensors step by
    ``shift`` sigmas afterwards."""

    timestamp: int
    shift: float


@dataclass
class SynthSpec:
    """Everything needed to generate one synthetic fleet."""

    q_tools: int
    n_sensors: int
    points_per_tool: list[int]
    seed: int = 0
    baseline: list[tuple[float, float]] | None = None  # per-sensor (mean, sigma)
    blocks: list[CorrelationBlock] = field(default_factory=list)
    deviations: list[DeviationSpec] = field(default_factory=list)
    pm_events: dict[str, list[PmEvent]] = field(default_factory=dict)
    missing_spans: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    drop_sensors: dict[str, list[str]] = field(default_factory=dict)
    start_epoch: int = DEFAULT_EPOCH
    spacing: int = DEFAULT_SPACING

    def tool_ids(self) -> list[str]:
        return [f"T{k + 1}" for k in range(self.q_tools)]

    def sensor_ids(self) -> list[str]:
        return [f"S{k + 1:02d}" for k in range(self.n_sensors)]

    def validate(self) -> None:
        if self.q_tools < 1 or self.n_sensors < 1:
            raise SpecValidationError("need at least one tool and one sensor")
        if len(self.points_per_tool) != self.q_tools:
            raise SpecValidationError(
                f"points_per_tool has {len(self.points_per_tool)} entries for "
                f"{self.q_tools} tools"
            )
        if any(p < 1 for p in self.points_per_tool):
            raise SpecValidationError("every tool needs at least one point")
        if self.baseline is not None and len(self.baseline) != self.n_sensors:
            raise SpecValidationError("baseline must list one (mean, sigma) per sensor")
        if self.baseline is not None and any(sd <= 0 for _, sd in self.baseline):
            raise SpecValidationError("baseline sigmas must be positive")
        if self.spacing < 1:
            raise SpecValidationError("spacing must be >= 1 second")
        tools = set(self.tool_ids())
        sensors = set(self.sensor_ids())
        claimed: set[str] = set()
        for block in self.blocks:
            if not set(block.sensors) <= sensors:
                raise SpecValidationError(f"block references unknown sensors {block.sensors}")
            overlap = claimed & set(block.sensors)
            if overlap:
                raise SpecValidationError(f"sensors in multiple blocks: {sorted(overlap)}")
            claimed |= set(block.sensors)
        for dev in self.deviations:
            if dev.tool not in tools:
                raise SpecValidationError(f"deviation targets unknown tool {dev.tool!r}")
            if not set(dev.sensors) <= sensors:
                raise SpecValidationError(f"deviation targets unknown sensors {dev.sensors}")
        for tool, dropped in self.drop_sensors.items():
            if tool not in tools:
                raise SpecValidationError(f"drop_sensors targets unknown tool {tool!r}")
            if not set(dropped) <= sensors:
                raise SpecValidationError(f"drop_sensors lists unknown sensors {dropped}")
            if set(dropped) == sensors:
                raise SpecValidationError(f"tool {tool} would keep no sensors")
        for tool in list(self.pm_events) + list(self.missing_spans):
            if tool not in tools:
                raise SpecValidationError(f"unknown tool {tool!r} in pm/missing config")


@dataclass(frozen=True)
class DeviationRecord:
    tool: str
    sensor: str
    kind: str
    magnitude: float


@dataclass
class GroundTruth:
    """Labels of everything that was injected, per (tool, sensor)."""

    records: list[DeviationRecord]

    def labels(self) -> set[tuple[str, str]]:
        return {(r.tool, r.sensor) for r in self.records}

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.records], sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        return cls(records=[DeviationRecord(**row) for row in json.loads(text)])


def _auto_baseline(spec: SynthSpec, rng: np.random.Generator) -> list[tuple[float, float]]:
    means = rng.uniform(-5.0, 5.0, size=spec.n_sensors)
    sigmas = rng.uniform(0.5, 2.0, size=spec.n_sensors)
    return [(float(m), float(s)) for m, s in zip(means, sigmas)]


def generate_fleet(spec: SynthSpec) -> tuple[FleetDataset, GroundTruth]:
    """Generate the fleet and its deviation labels.

    Per tool and point, a sensor's value is
    ``mean + sigma * (sqrt(rho) * common + sqrt(1 - rho) * own)`` with
    standard normal draws, the common factor shared within the sensor's
    correlation block. Deviations modify this recipe on the targeted
    (tool, sensor) pairs only and every such pair is labeled.
    """
    spec.validate()
    tool_ids = spec.tool_ids()
    sensor_ids = spec.sensor_ids()
    root = np.random.SeedSequence(spec.seed)
    baseline_rng = np.random.default_rng(root.spawn(1)[0])
    baseline = spec.baseline if spec.baseline is not None else _auto_baseline(spec, baseline_rng)

    block_of = {s: None for s in sensor_ids}
    rho_of = {s: 0.0 for s in sensor_ids}
    for b_idx, block in enumerate(spec.blocks):
        for s in block.sensors:
            block_of[s] = b_idx
            rho_of[s] = block.rho

    dev_by_tool: dict[str, list[DeviationSpec]] = {}
    for dev in spec.deviations:
        dev_by_tool.setdefault(dev.tool, []).append(dev)

    tool_seeds = root.spawn(spec.q_tools + 1)[1:]
    tools: list[TsumMatrix] = []
    records: list[DeviationRecord] = []
    for q, tool_id in enumerate(tool_ids):
        rng = np.random.default_rng(tool_seeds[q])
        p = spec.points_per_tool[q]
        timestamps = spec.start_epoch + spec.spacing * np.arange(p, dtype=np.int64)

        common = rng.standard_normal((len(spec.blocks), p)) if spec.blocks else np.zeros((0, p))
        own = rng.standard_normal((spec.n_sensors, p))
        values = np.empty((spec.n_sensors, p))
        sigma_scale = np.ones((spec.n_sensors, p))

        devs = dev_by_tool.get(tool_id, [])
        # variance inflation scales the noise before anything is added
        for dev in devs:
            if dev.kind != "variance_inflation":
                continue
            for s in dev.sensors:
                sigma_scale[sensor_ids.index(s)] *= np.sqrt(dev.magnitude)

        for i, s in enumerate(sensor_ids):
            mean, sigma = baseline[i]
            rho = rho_of[s]
            noise = own[i]
            if block_of[s] is not None:
                noise = np.sqrt(rho) * common[block_of[s]] + np.sqrt(1.0 - rho) * noise
            values[i] = mean + sigma * sigma_scale[i] * noise

        ramp = np.linspace(0.0, 1.0, p) if p > 1 else np.zeros(1)
        for dev in devs:
            for s in dev.sensors:
                i = sensor_ids.index(s)
                sigma = baseline[i][1]
                if dev.kind == "mean_shift":
                    values[i] += dev.magnitude * sigma
                elif dev.kind == "extra_mode":
                    flips = rng.random(p) < 0.5
                    values[i][flips] += dev.magnitude * sigma
                elif dev.kind == "linear_trend":
                    values[i] += dev.magnitude * sigma * ramp
                elif dev.kind == "poly_trend":
                    values[i] += dev.magnitude * sigma * ramp**2
                records.append(
                    DeviationRecord(tool=tool_id, sensor=s, kind=dev.kind, magnitude=dev.magnitude)
                )

        for event in spec.pm_events.get(tool_id, []):
            after = timestamps >= event.timestamp
            for i in range(spec.n_sensors):
                values[i, after] += event.shift * baseline[i][1]

        keep = np.ones(p, dtype=bool)
        for start, end in spec.missing_spans.get(tool_id, []):
            keep &= ~((timestamps >= start) & (timestamps < end))
        if not keep.any():
            raise SpecValidationError(f"tool {tool_id}: missing spans cover every point")

        sensors = [s for s in sensor_ids if s not in set(spec.drop_sensors.get(tool_id, []))]
        rows = [sensor_ids.index(s) for s in sensors]
        tools.append(
            TsumMatrix(
                tool=tool_id,
                sensors=sensors,
                values=values[np.ix_(rows, np.where(keep)[0])],
                timestamps=timestamps[keep],
                run_ids=[f"r{k}" for k in np.where(keep)[0]],
            )
        )

    pm_logs = {
        tool: sorted(int(e.timestamp) for e in events)
        for tool, events in spec.pm_events.items()
        if events
    }
    fleet = FleetDataset(tools=tools, pm_logs=pm_logs)
    return fleet, GroundTruth(records=records)


def paper_scale_spec(seed: int = 0, **overrides) -> SynthSpec:
    """Production-sized fleet: 9 tools, 24 sensors, one month of runs.

    Tool point counts total 2419 and differ slightly tool to tool, since
    real fleets never collect the same number of runs everywhere.
    """
    points = [269] * 7 + [268] * 2
    base = dict(
        q_tools=9,
        n_sensors=24,
        points_per_tool=points,
        seed=seed,
        blocks=[
            CorrelationBlock(sensors=("S01", "S02", "S03", "S04"), rho=0.8),
            CorrelationBlock(sensors=("S05", "S06", "S07"), rho=0.6),
        ],
    )
    base.update(overrides)
    return SynthSpec(**base)


def desk_scale_spec(seed: int = 0, **overrides) -> SynthSpec:
    """One-tenth of the production scale, for tests and quick studies."""
    points = [27] * 7 + [26] * 2
    base = dict(
        q_tools=9,
        n_sensors=24,
        points_per_tool=points,
        seed=seed,
        blocks=[
            CorrelationBlock(sensors=("S01", "S02", "S03", "S04"), rho=0.8),
            CorrelationBlock(sensors=("S05", "S06", "S07"), rho=0.6),
        ],
    )
    base.update(overrides)
    return SynthSpec(**base)


def spec_from_json(text: str) -> SynthSpec:
    """Parse a spec from its JSON form (the CLI input format).

    A ``preset`` key ("paper_scale" or "desk_scale") supplies defaults
    that the remaining keys override.
    """
    raw = json.loads(text)
    if not isinstance(raw, dict):
        raise SpecValidationError("spec json must be an object")
    kwargs = dict(raw)
    preset = kwargs.pop("preset", None)
    if "blocks" in kwargs:
        kwargs["blocks"] = [
            CorrelationBlock(sensors=tuple(b["sensors"]), rho=float(b["rho"]))
            for b in kwargs["blocks"]
        ]
    if "deviations" in kwargs:
        kwargs["deviations"] = [
            DeviationSpec(
                tool=d["tool"],
                sensors=tuple(d["sensors"]),
                kind=d["kind"],
                magnitude=float(d["magnitude"]),
            )
            for d in kwargs["deviations"]
        ]
    if "pm_events" in kwargs:
        kwargs["pm_events"] = {
            tool: [PmEvent(timestamp=int(e["timestamp"]), shift=float(e["shift"])) for e in events]
            for tool, events in kwargs["pm_events"].items()
        }
    if "missing_spans" in kwargs:
        kwargs["missing_spans"] = {
            tool: [(int(a), int(b)) for a, b in spans]
            for tool, spans in kwargs["missing_spans"].items()
        }
    if kwargs.get("baseline") is not None and "baseline" in kwargs:
        kwargs["baseline"] = [(float(m), float(s)) for m, s in kwargs["baseline"]]
    try:
        if preset is not None:
            factory = {"paper_scale": paper_scale_spec, "desk_scale": desk_scale_spec}.get(preset)
            if factory is None:
                raise SpecValidationError(f"unknown preset {preset!r}")
            seed = int(kwargs.pop("seed", 0))
            return factory(seed=seed, **kwargs)
        return SynthSpec(**kwargs)
    except TypeError as exc:
        raise SpecValidationError(f"bad spec json: {exc}") from None
