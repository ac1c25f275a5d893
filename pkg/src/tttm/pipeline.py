"""End-to-end scoring runs driven by a config file.

One run ingests a summary CSV, filters sparse tools, splits the fleet at
maintenance events, preprocesses each sub-period, scores it with the
configured method, recombines the per-segment scores by data weight, and
writes a report bundle (CSV tables plus ``report.json``). Bundles from
several reporting periods feed :func:`trend_report`, which assembles
score-over-period series and emits static SVG plots.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import EmptyResultError, InsufficientDataError, SpecValidationError
from .fleet import FleetDataset, load_tsum, union_sensors
from .graphnet import GnnHyperParams, extract_graph, train
from .multiscore import E_MAX_CONVENTIONS, MultiScoreReport, multivariate_scores
from .preprocess import (
    DEFAULT_ALPHA,
    DEFAULT_RIDGE_LAMBDA,
    DEFAULT_SPARSITY_TAU,
    detrend_fleet,
    filter_sparse,
    minmax_normalize,
    pm_boundaries,
)
from .uniscore import DEFAULT_MIN_PTS, PAIRWISE_MODES, LS_MODES, ScoreReport, score_fleet

__all__ = [
    "METHODS",
    "UNIVARIATE_METHODS",
    "GRAPH_METHODS",
    "RunConfig",
    "PipelineResult",
    "TrendSeries",
    "TrendReport",
    "format_number",
    "safe_filename",
    "run_pipeline",
    "write_report_bundle",
    "load_report_bundle",
    "trend_report",
]

UNIVARIATE_METHODS = ("dbscan", "wd", "pd")
GRAPH_METHODS = ("mtadgat", "gdn")
METHODS = UNIVARIATE_METHODS + GRAPH_METHODS

REPORT_JSON = "report.json"
SENSOR_SCORES_CSV = "sensor_scores.csv"
PAIRWISE_CSV = "pairwise.csv"
TOOL_SCORES_CSV = "tool_scores.csv"
TREND_CSV = "trend.csv"

DEFAULT_TAU_G = 0.9
DRILLDOWN_TOP_K = 4

#: fixed salt so SVG element ids do not vary between runs
_SVG_HASHSALT = "tttm"


def format_number(x: float) -> str:
    """Render a value with 6 significant digits, the report-wide precision."""
    v = float(x)
    if np.isnan(v):
        return "nan"
    return format(v, ".6g")


@dataclass
class RunConfig:
    """Everything one pipeline run needs, loadable from a JSON file.

    ``ridge_lambda`` appears in config files under the key ``lambda``.
    The ``gnn`` dict holds hyperparameter overrides for the graph methods
    (window length, epochs, learning rate and friends); its ``seed``
    defaults to the run seed.
    """

    input: str
    method: str
    out_dir: str
    pm_log_path: str | None = None
    period: str | None = None
    tau: int = DEFAULT_SPARSITY_TAU
    alpha: float = DEFAULT_ALPHA
    ridge_lambda: float = DEFAULT_RIDGE_LAMBDA
    detrend_enabled: bool = True
    mk_one_sided: bool = False
    min_pts: int = DEFAULT_MIN_PTS
    pairwise_mode: str = "pair_specific"
    lomb_scargle_mode: str = "auto"
    gnn: dict = field(default_factory=dict)
    tau_g: float = DEFAULT_TAU_G
    e_max: str = "observed"
    seed: int = 0

    def __post_init__(self):
        self.method = str(self.method).lower().replace("_", "").replace("-", "")
        if self.method not in METHODS:
            raise SpecValidationError(
                f"unknown method {self.method!r}, expected one of {METHODS}"
            )
        if self.e_max not in E_MAX_CONVENTIONS:
            raise SpecValidationError(
                f"bad e_max convention {self.e_max!r}, expected one of {E_MAX_CONVENTIONS}"
            )
        if self.pairwise_mode not in PAIRWISE_MODES:
            raise SpecValidationError(f"bad pairwise_mode {self.pairwise_mode!r}")
        if self.lomb_scargle_mode not in LS_MODES:
            raise SpecValidationError(f"bad lomb_scargle_mode {self.lomb_scargle_mode!r}")
        if self.tau < 1:
            raise SpecValidationError(f"sparsity threshold must be >= 1, got {self.tau}")
        if not (-1.0 <= self.tau_g <= 1.0):
            raise SpecValidationError(f"tau_g must be within [-1, 1], got {self.tau_g}")
        if not isinstance(self.gnn, dict):
            raise SpecValidationError("gnn overrides must be a JSON object")

    @classmethod
    def from_json(cls, source: str | dict, **overrides) -> "RunConfig":
        """Build a config from a JSON file or dict; keyword overrides win.

        Overrides passed as None mean "not given" and are ignored, which
        lets CLI flags fall through to the file values.
        """
        if isinstance(source, (str, os.PathLike)):
            with open(source) as fh:
                try:
                    raw = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise SpecValidationError(f"config is not valid JSON: {exc}") from None
        else:
            raw = dict(source)
        if not isinstance(raw, dict):
            raise SpecValidationError("config must be a JSON object")
        if "lambda" in raw:
            raw["ridge_lambda"] = raw.pop("lambda")
        if "out" in raw:
            raw["out_dir"] = raw.pop("out")
        for key, value in overrides.items():
            if value is not None:
                raw[key] = value
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise SpecValidationError(f"unknown config keys: {unknown}")
        missing = sorted({"input", "method", "out_dir"} - set(raw))
        if missing:
            raise SpecValidationError(f"config missing required keys: {missing}")
        return cls(**raw)

    def echo(self) -> dict:
        """The config as report content; the output location is not part
        of the result, so it is excluded (and excluded from the hash)."""
        data = dataclasses.asdict(self)
        data.pop("out_dir")
        data["lambda"] = data.pop("ridge_lambda")
        return data

    def config_hash(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def hyperparams(self) -> GnnHyperParams:
        if self.method not in GRAPH_METHODS:
            raise SpecValidationError(f"method {self.method!r} has no gnn hyperparams")
        arch = "mtad_gat" if self.method == "mtadgat" else "gdn"
        kwargs = dict(self.gnn)
        kwargs.setdefault("seed", self.seed)
        return GnnHyperParams.defaults(arch, **kwargs)


@dataclass
class SegmentRun:
    """One maintenance-free sub-period and what scoring made of it."""

    index: int
    start: int | None
    end: int | None
    weight: int
    n_tools: int
    flags: list[str] = field(default_factory=list)
    result: ScoreReport | MultiScoreReport | None = None

    def describe(self) -> dict:
        return {
            "index": self.index,
            "start": self.start,
            "end": self.end,
            "weight": self.weight,
            "n_tools": self.n_tools,
            "flags": list(self.flags),
            "scored": self.result is not None,
        }


@dataclass
class PipelineResult:
    """In-memory mirror of the report bundle one run wrote to disk."""

    method: str
    tool_ids: list[str]
    tool_scores: dict[str, float]
    sensor_scores: dict[str, float] | None
    sensor_flags: dict[str, list[str]]
    pairwise: np.ndarray | None
    segments: list[SegmentRun]
    report: dict
    files: list[str]


@dataclass
class TrendSeries:
    """Score of one entity over ordered reporting periods; None marks a
    period the entity was absent from."""

    entity: str
    kind: str  # "tool" or "sensor"
    periods: list[str]
    scores: list[float | None]


@dataclass
class TrendReport:
    periods: list[str]
    tool_series: list[TrendSeries]
    sensor_series: list[TrendSeries]
    peak_period: str
    drilldown_sensors: list[str]
    files: list[str]


# ---------------------------------------------------------------------------
# pipeline run


def _segment_bounds(fleet: FleetDataset) -> list[tuple[int | None, int | None]]:
    cuts = pm_boundaries(fleet)
    edges: list[int | None] = [None, *cuts, None]
    return [(edges[k], edges[k + 1]) for k in range(len(edges) - 1)]


def _sub_fleet(fleet: FleetDataset, start: int | None, end: int | None) -> FleetDataset:
    tools = []
    for tool in fleet.tools:
        mask = np.ones(tool.n_points, dtype=bool)
        if start is not None:
            mask &= tool.timestamps >= start
        if end is not None:
            mask &= tool.timestamps < end
        sub = tool.select_columns(mask)
        if sub.n_points:
            tools.append(sub)
    return FleetDataset(tools=tools, meta={"segment": [start, end]})


def _weighted_merge(per_segment: list[tuple[float, dict[str, float]]]) -> dict[str, float]:
    """Data-weighted average per key, skipping undefined entries."""
    keys: list[str] = []
    for _, scores in per_segment:
        for key in scores:
            if key not in keys:
                keys.append(key)
    out: dict[str, float] = {}
    for key in keys:
        num = den = 0.0
        for weight, scores in per_segment:
            value = scores.get(key)
            if value is None or np.isnan(value):
                continue
            num += weight * value
            den += weight
        out[key] = num / den if den > 0 else float("nan")
    return out


def _weighted_pairwise(
    tool_ids: list[str], per_segment: list[tuple[float, list[str], np.ndarray]]
) -> np.ndarray:
    q = len(tool_ids)
    num = np.zeros((q, q))
    den = np.zeros((q, q))
    for weight, ids, matrix in per_segment:
        idx = [tool_ids.index(t) for t in ids]
        for a, ia in enumerate(idx):
            for b, ib in enumerate(idx):
                value = matrix[a, b]
                if np.isnan(value):
                    continue
                num[ia, ib] += weight * value
                den[ia, ib] += weight
    out = np.full((q, q), np.nan)
    defined = den > 0
    out[defined] = num[defined] / den[defined]
    return out


def _score_segment(sub: FleetDataset, config: RunConfig) -> ScoreReport | MultiScoreReport:
    if config.method in UNIVARIATE_METHODS:
        return score_fleet(
            sub,
            config.method,
            p_min=config.min_pts,
            pairwise_mode=config.pairwise_mode,
            lomb_scargle_mode=config.lomb_scargle_mode,
        )
    hyper = config.hyperparams()
    params = train(sub, hyper).params
    graphs = [extract_graph(tool, params, config.tau_g) for tool in sub.tools]
    return multivariate_scores(graphs, convention=config.e_max, tau_g=config.tau_g)


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Ingest, preprocess, score, recombine and write one report bundle.

    Sub-periods between maintenance events are preprocessed and scored
    independently, then averaged with weights proportional to how many
    summary points each one holds. Periodogram scoring skips the detrend
    stage entirely, since that method reads trends as signal.
    """
    fleet = load_tsum(config.input, config.pm_log_path)
    ingested_tools = fleet.n_tools
    fleet = filter_sparse(fleet, tau=config.tau)

    detrend_active = config.detrend_enabled and config.method != "pd"
    segments: list[SegmentRun] = []
    for k, (start, end) in enumerate(_segment_bounds(fleet)):
        sub = _sub_fleet(fleet, start, end)
        run = SegmentRun(
            index=k,
            start=start,
            end=end,
            weight=sum(t.n_points for t in sub.tools),
            n_tools=sub.n_tools,
        )
        if sub.n_tools < 2:
            run.flags.append("skipped_lt2_tools")
            segments.append(run)
            continue
        if detrend_active:
            sub = detrend_fleet(
                sub, alpha=config.alpha, lam=config.ridge_lambda,
                one_sided=config.mk_one_sided,
            )
            run.flags.append(f"detrended_rows:{len(sub.meta.get('detrended_rows', []))}")
        sub = minmax_normalize(sub)
        degenerate = sub.meta.get("degenerate_sensors", [])
        if degenerate:
            run.flags.append(f"degenerate_sensors:{len(degenerate)}")
        try:
            run.result = _score_segment(sub, config)
        except InsufficientDataError as exc:
            run.flags.append(f"skipped_insufficient_data:{exc}")
        segments.append(run)

    scored = [s for s in segments if s.result is not None]
    if not scored:
        raise EmptyResultError("no scorable sub-period: every segment was skipped")

    tool_ids = fleet.tool_ids
    tool_scores = _weighted_merge([(s.weight, s.result.tool_scores) for s in scored])
    for t in tool_ids:
        tool_scores.setdefault(t, float("nan"))
    tool_scores = {t: tool_scores[t] for t in tool_ids}

    sensor_scores: dict[str, float] | None = None
    sensor_flags: dict[str, list[str]] = {}
    if config.method in UNIVARIATE_METHODS:
        sensor_scores = _weighted_merge(
            [(s.weight, s.result.sensor_scores.scores) for s in scored]
        )
        for seg in scored:
            for sensor, notes in seg.result.sensor_scores.flags.items():
                seen = sensor_flags.setdefault(sensor, [])
                for note in notes:
                    if note not in seen:
                        seen.append(note)

    pairwise: np.ndarray | None = None
    if config.method in GRAPH_METHODS:
        pairwise = _weighted_pairwise(
            tool_ids, [(s.weight, s.result.tool_ids, s.result.pairwise) for s in scored]
        )
    elif config.method in ("wd", "pd"):
        pairwise = _weighted_pairwise(
            tool_ids,
            [
                (s.weight, s.result.tool_ids, s.result.pairwise)
                for s in scored
                if s.result.pairwise is not None
            ],
        )

    report = {
        "config": config.echo(),
        "config_hash": config.config_hash(),
        "method": config.method,
        "period": config.period,
        "seed": config.seed,
        "stages": {
            "ingest": "applied",
            "filter": "applied",
            "pm_split": "applied",
            "detrend": "applied" if detrend_active else "bypassed",
            "normalize": "applied",
            "score": "applied",
        },
        "segments": [s.describe() for s in segments],
        "tool_count": len(tool_ids),
        "ingested_tool_count": ingested_tools,
        "sensor_count": len(union_sensors(fleet)),
        "dropped_sparse_tools": fleet.meta.get("dropped_sparse_tools", []),
        "generated_at": datetime.now(timezone.utc).isoformat(),
    }
    if config.method in GRAPH_METHODS:
        applied = sorted({s.result.convention for s in scored})
        report["tau_g"] = config.tau_g
        report["e_max"] = {
            "requested": config.e_max,
            "applied": applied[0] if len(applied) == 1 else applied,
            "per_segment": [s.result.e_max for s in scored],
        }

    files = write_report_bundle(
        config.out_dir,
        tool_scores=tool_scores,
        sensor_scores=sensor_scores,
        sensor_flags=sensor_flags,
        pairwise=pairwise,
        tool_ids=tool_ids,
        report=report,
    )
    return PipelineResult(
        method=config.method,
        tool_ids=tool_ids,
        tool_scores=tool_scores,
        sensor_scores=sensor_scores,
        sensor_flags=sensor_flags,
        pairwise=pairwise,
        segments=segments,
        report=report,
        files=files,
    )


# ---------------------------------------------------------------------------
# report bundle io


def write_report_bundle(
    out_dir: str,
    *,
    tool_scores: dict[str, float],
    tool_ids: list[str] | None = None,
    sensor_scores: dict[str, float] | None = None,
    sensor_flags: dict[str, list[str]] | None = None,
    pairwise: np.ndarray | None = None,
    report: dict,
) -> list[str]:
    """Write the CSV tables and ``report.json`` that make up one bundle."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    ids = tool_ids if tool_ids is not None else sorted(tool_scores)

    if sensor_scores is not None:
        path = os.path.join(out_dir, SENSOR_SCORES_CSV)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sensor_id", "score", "flags"])
            for sensor in sorted(sensor_scores):
                notes = ";".join((sensor_flags or {}).get(sensor, []))
                writer.writerow([sensor, format_number(sensor_scores[sensor]), notes])
        files.append(path)

    if pairwise is not None:
        if pairwise.shape != (len(ids), len(ids)):
            raise SpecValidationError(
                f"pairwise shape {pairwise.shape} does not match {len(ids)} tools"
            )
        path = os.path.join(out_dir, PAIRWISE_CSV)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tool_id", *ids])
            for i, tool in enumerate(ids):
                writer.writerow([tool, *(format_number(v) for v in pairwise[i])])
        files.append(path)

    path = os.path.join(out_dir, TOOL_SCORES_CSV)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tool_id", "score"])
        for tool in ids:
            writer.writerow([tool, format_number(tool_scores[tool])])
    files.append(path)

    path = os.path.join(out_dir, REPORT_JSON)
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(path)
    return files


def load_report_bundle(out_dir: str) -> dict:
    """Read a bundle back: report dict plus parsed score tables."""
    bundle: dict = {"dir": out_dir}
    report_path = os.path.join(out_dir, REPORT_JSON)
    if os.path.exists(report_path):
        with open(report_path) as fh:
            bundle["report"] = json.load(fh)
    else:
        bundle["report"] = {}

    tool_path = os.path.join(out_dir, TOOL_SCORES_CSV)
    if not os.path.exists(tool_path):
        raise EmptyResultError(f"bundle {out_dir!r} has no {TOOL_SCORES_CSV}")
    tool_scores: dict[str, float] = {}
    with open(tool_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["tool_id", "score"]:
            raise SpecValidationError(f"bad header in {tool_path}: {header!r}")
        for row in reader:
            if row:
                tool_scores[row[0]] = float(row[1])
    bundle["tool_scores"] = tool_scores

    sensor_scores: dict[str, float] = {}
    sensor_path = os.path.join(out_dir, SENSOR_SCORES_CSV)
    if os.path.exists(sensor_path):
        with open(sensor_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["sensor_id", "score", "flags"]:
                raise SpecValidationError(f"bad header in {sensor_path}: {header!r}")
            for row in reader:
                if row:
                    sensor_scores[row[0]] = float(row[1])
    bundle["sensor_scores"] = sensor_scores
    return bundle


# ---------------------------------------------------------------------------
# trend reporting


def safe_filename(entity: str) -> str:
    """Entity id reduced to filename-safe characters."""
    return re.sub(r"[^A-Za-z0-9._-]", "_", entity)


def _series_set(
    per_period: list[dict[str, float]], periods: list[str], kind: str
) -> list[TrendSeries]:
    entities: list[str] = []
    for scores in per_period:
        for entity in scores:
            if entity not in entities:
                entities.append(entity)
    out = []
    for entity in sorted(entities):
        scores: list[float | None] = []
        for period_scores in per_period:
            value = period_scores.get(entity)
            if value is None or np.isnan(value):
                scores.append(None)
            else:
                scores.append(float(value))
        out.append(TrendSeries(entity=entity, kind=kind, periods=list(periods), scores=scores))
    return out


def _plot_series(path: str, title: str, ylabel: str, series: list[TrendSeries]) -> None:
    plt.rcParams["svg.hashsalt"] = _SVG_HASHSALT
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    periods = series[0].periods
    x = np.arange(len(periods))
    for s in series:
        y = np.array([np.nan if v is None else v for v in s.scores], dtype=float)
        ax.plot(x, y, marker="o", label=s.entity)
    ax.set_xticks(x)
    ax.set_xticklabels(periods, rotation=30, ha="right")
    ax.set_xlabel("period")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def trend_report(
    report_dirs: list[str],
    out_dir: str,
    top_k: int = DRILLDOWN_TOP_K,
) -> TrendReport:
    """Assemble score-over-period series from report bundles and plot them.

    Periods keep the order the bundles were given in; labels come from each
    bundle's report (falling back to the directory name) and must be
    unique. Tools missing from some period show up as gaps. One SVG is
    written per tool, plus a drill-down of the ``top_k`` highest-scoring
    sensors in the period whose tool score peaks, with the plotted sensor
    scores jointly min-max normalized.
    """
    if len(report_dirs) < 2:
        raise SpecValidationError("trend reporting needs at least 2 report bundles")
    if top_k < 1:
        raise SpecValidationError(f"top_k must be >= 1, got {top_k}")

    bundles = [load_report_bundle(d) for d in report_dirs]
    periods = []
    for bundle in bundles:
        label = bundle["report"].get("period") or os.path.basename(
            os.path.normpath(bundle["dir"])
        )
        periods.append(str(label))
    if len(set(periods)) != len(periods):
        raise SpecValidationError(f"duplicate period labels: {periods}")

    tool_series = _series_set([b["tool_scores"] for b in bundles], periods, "tool")
    sensor_series = _series_set([b["sensor_scores"] for b in bundles], periods, "sensor")

    peak_idx, peak_score = 0, -np.inf
    for series in tool_series:
        for k, value in enumerate(series.scores):
            if value is not None and value > peak_score:
                peak_idx, peak_score = k, value
    peak_period = periods[peak_idx]
    peak_scores = bundles[peak_idx]["sensor_scores"]
    ranked = sorted(
        (s for s in peak_scores if not np.isnan(peak_scores[s])),
        key=lambda s: (-peak_scores[s], s),
    )
    drill = ranked[:top_k]

    os.makedirs(out_dir, exist_ok=True)
    files = []

    path = os.path.join(out_dir, TREND_CSV)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "entity", "period", "score"])
        for series in tool_series + sensor_series:
            for period, value in zip(series.periods, series.scores):
                writer.writerow(
                    [series.kind, series.entity, period,
                     "" if value is None else format_number(value)]
                )
    files.append(path)

    for series in tool_series:
        path = os.path.join(out_dir, f"trend_{safe_filename(series.entity)}.svg")
        _plot_series(path, f"tool {series.entity}", "tool-level score", [series])
        files.append(path)

    if drill:
        selected = [s for s in sensor_series if s.entity in drill]
        pool = [v for s in selected for v in s.scores if v is not None]
        lo, hi = (min(pool), max(pool)) if pool else (0.0, 0.0)
        span = hi - lo
        normalized = []
        for s in selected:
            scores = [
                None if v is None else ((v - lo) / span if span > 0 else 0.0)
                for v in s.scores
            ]
            normalized.append(
                TrendSeries(entity=s.entity, kind=s.kind, periods=s.periods, scores=scores)
            )
        path = os.path.join(out_dir, f"drilldown_{safe_filename(peak_period)}.svg")
        _plot_series(
            path,
            f"top sensors at period {peak_period}",
            "normalized sensor-level score",
            normalized,
        )
        files.append(path)

    return TrendReport(
        periods=periods,
        tool_series=tool_series,
        sensor_series=sensor_series,
        peak_period=peak_period,
        drilldown_sensors=drill,
        files=files,
    )
