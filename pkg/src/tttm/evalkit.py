"""Validation statistics for difference scores.

The scores themselves are unsupervised, so this module quantifies how
well they track observable fleet behavior: rank correlation of sensor
scores against cross-tool variance and against distribution mode counts,
threshold sweeps of the graph-based scores, and rank agreement between
the multivariate and univariate methods.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError
from .fleet import FleetDataset, sensor_slice, union_sensors
from .graphnet import (
    GnnHyperParams,
    ModelParams,
    _cosine_matrix,
    _forward,
    _leaves,
    lift_to_sensors,
    train,
    window_node_features,
    window_slice,
)
from .multiscore import MultiScoreReport
from .uniscore import ScoreReport

__all__ = [
    "CorrelationTable",
    "SweepRow",
    "spearman",
    "cross_tool_variance",
    "mode_count",
    "correlation_report",
    "tau_sweep",
    "cross_method_correlation",
]

DEFAULT_KDE_BANDWIDTH = 0.6
KDE_GRID_POINTS = 512
#: a local maximum below this fraction of the global maximum is not a mode
MODE_HEIGHT_FRACTION = 0.05
MODE_MIN_POINTS = 10


@dataclass
class CorrelationTable:
    """Rank correlations of per-sensor scores against data statistics.

    ``values[row][col]`` pairs ``statistics[row]`` with ``methods[col]``;
    None marks correlations that were undefined (constant inputs).
    """

    statistics: list[str]
    methods: list[str]
    values: list[list[float | None]]

    def cell(self, statistic: str, method: str) -> float | None:
        return self.values[self.statistics.index(statistic)][self.methods.index(method)]


@dataclass
class SweepRow:
    """Unnormalized pairwise-score statistics at one graph threshold,
    averaged over Monte-Carlo repetitions."""

    tau_g: float
    max_score: float
    min_score: float
    std_score: float
    n_runs: int


def _ranks(x: np.ndarray) -> np.ndarray:
    """Fractional ranks (1-based), ties averaged."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a: np.ndarray, b: np.ndarray) -> float | None:
    """Spearman rank correlation; None when either vector is constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise InsufficientDataError("rank correlation needs at least 2 points")
    ra, rb = _ranks(a), _ranks(b)
    da = ra - ra.mean()
    db = rb - rb.mean()
    denom = np.sqrt(np.sum(da**2) * np.sum(db**2))
    if denom == 0:
        return None
    return float(np.sum(da * db) / denom)


def cross_tool_variance(fleet: FleetDataset, sensor: str) -> float:
    """Population variance of the sensor's values pooled over all tools."""
    slices = [s.values for s in sensor_slice(fleet, sensor) if s.values.size]
    pooled = np.concatenate(slices) if slices else np.array([])
    if pooled.size < 2:
        raise InsufficientDataError(
            f"sensor {sensor!r} has {pooled.size} pooled values, need >= 2"
        )
    return float(np.var(pooled))


def mode_count(
    fleet: FleetDataset, sensor: str, bandwidth: float = DEFAULT_KDE_BANDWIDTH
) -> int:
    """Number of modes of the sensor's pooled distribution.

    A Gaussian kernel density estimate is evaluated on a fixed grid and
    local maxima taller than 5 percent of the global maximum are counted.
    Wider bandwidths merge modes, so counts are monotone in ``bandwidth``
    down to the grid's resolution.
    """
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    slices = [s.values for s in sensor_slice(fleet, sensor) if s.values.size]
    pooled = np.concatenate(slices) if slices else np.array([])
    if pooled.size < MODE_MIN_POINTS:
        raise InsufficientDataError(
            f"mode counting needs >= {MODE_MIN_POINTS} points, got {pooled.size}"
        )
    if np.ptp(pooled) == 0:
        return 1
    grid = np.linspace(pooled.min() - 3 * bandwidth, pooled.max() + 3 * bandwidth, KDE_GRID_POINTS)
    density = np.exp(-0.5 * ((grid[:, None] - pooled[None, :]) / bandwidth) ** 2).sum(axis=1)
    density /= pooled.size * bandwidth * np.sqrt(2 * np.pi)
    interior = density[1:-1]
    peaks = (interior > density[:-2]) & (interior >= density[2:])
    tall = interior > MODE_HEIGHT_FRACTION * density.max()
    return int(np.count_nonzero(peaks & tall))


def correlation_report(
    scores_by_method: dict[str, dict[str, float]],
    fleet: FleetDataset,
    bandwidth: float = DEFAULT_KDE_BANDWIDTH,
) -> CorrelationTable:
    """Spearman correlation of each method's sensor scores against the
    pooled cross-tool variance and the pooled mode count, per sensor.

    Sensors missing from a method's score dict are skipped pairwise;
    undefined correlations (constant vectors) come back None.
    """
    methods = list(scores_by_method)
    sensors = union_sensors(fleet)
    variance = {}
    modes = {}
    for s in sensors:
        try:
            variance[s] = cross_tool_variance(fleet, s)
        except InsufficientDataError:
            pass
        try:
            modes[s] = float(mode_count(fleet, s, bandwidth))
        except InsufficientDataError:
            pass

    table = CorrelationTable(statistics=["variance", "mode_count"], methods=methods, values=[])
    for stat_values in (variance, modes):
        row: list[float | None] = []
        for method in methods:
            scores = scores_by_method[method]
            shared = [s for s in sensors if s in scores and s in stat_values]
            if len(shared) < 3:
                row.append(None)
                continue
            row.append(
                spearman(
                    np.array([scores[s] for s in shared]),
                    np.array([stat_values[s] for s in shared]),
                )
            )
        table.values.append(row)
    return table


def _pair_stats(graphs_feats: list[list[np.ndarray]], tau_g: float) -> tuple[float, float, float]:
    """Unnormalized pairwise distances from cached per-window node features."""
    adjacencies = []
    for feats in graphs_feats:
        if not feats:
            adjacencies.append(None)
            continue
        n = feats[0].shape[0]
        acc = np.zeros((n, n))
        for h in feats:
            sim, _ = _cosine_matrix(h)
            adj = (sim >= tau_g).astype(float)
            np.fill_diagonal(adj, 0.0)
            acc += adj
        adjacencies.append(acc / len(feats))
    dists = []
    q = len(adjacencies)
    for i in range(q):
        for j in range(i + 1, q):
            if adjacencies[i] is None or adjacencies[j] is None:
                continue
            dists.append(float(np.sum(np.abs(adjacencies[i] - adjacencies[j]))))
    if not dists:
        raise InsufficientDataError("no tool pairs with windows to compare")
    arr = np.array(dists)
    return float(arr.max()), float(arr.min()), float(arr.std())


def tau_sweep(
    fleet: FleetDataset,
    hyper: GnnHyperParams,
    taus: list[float],
    n_mc: int = 100,
    mode: str = "retrain",
    base_params: ModelParams | None = None,
) -> list[SweepRow]:
    """Sensitivity of unnormalized pairwise graph scores to the threshold.

    ``retrain`` trains ``n_mc`` models with derived seeds and extracts at
    every threshold; ``extract`` reuses one trained model and resamples
    attention dropout during extraction instead. Rows report the max,
    min and standard deviation of the pairwise scores, averaged over
    repetitions.
    """
    if mode not in ("retrain", "extract"):
        raise ValueError(f"bad sweep mode {mode!r}")
    if not taus:
        raise ValueError("need at least one threshold")
    if n_mc < 1:
        raise ValueError("need at least one repetition")
    if mode == "extract" and base_params is None:
        raise ValueError("extract mode needs trained base_params")

    run_seeds = np.random.SeedSequence(hyper.seed).generate_state(n_mc)
    stats = np.zeros((len(taus), 3))
    for r in range(n_mc):
        if mode == "retrain":
            run_hyper = dataclasses.replace(hyper, seed=int(run_seeds[r]))
            params = train(fleet, run_hyper).params
            feats = [window_node_features(tool, params) for tool in fleet.tools]
        else:
            assert base_params is not None
            rng = np.random.default_rng(int(run_seeds[r]))
            feats = [
                _dropout_node_features(tool, base_params, rng) for tool in fleet.tools
            ]
        for k, tau in enumerate(taus):
            stats[k] += _pair_stats(feats, tau)
    stats /= n_mc
    return [
        SweepRow(
            tau_g=float(tau),
            max_score=float(stats[k, 0]),
            min_score=float(stats[k, 1]),
            std_score=float(stats[k, 2]),
            n_runs=n_mc,
        )
        for k, tau in enumerate(taus)
    ]


def _dropout_node_features(tool, params: ModelParams, rng: np.random.Generator):
    """Per-window node features with attention dropout resampled."""
    hyper = params.hyper
    lifted = lift_to_sensors(tool, params.sensors)
    sliced = window_slice(lifted, hyper.omega, hyper.gap_factor)
    leaves = _leaves(params, trainable=False)
    keep = 1.0 - hyper.dropout
    feats = []
    n = len(params.sensors)
    for win in sliced.windows:
        drop_mask = None
        if hyper.dropout > 0 and n >= 2:
            drop_mask = (rng.random((n, n)) < keep).astype(float) / keep
        named = _forward(leaves, win.values, hyper, drop_mask=drop_mask)
        feats.append(named["hidden"].value)
    return feats


def cross_method_correlation(
    multi: MultiScoreReport, uni: ScoreReport
) -> float | None:
    """Rank agreement between the graph-based scores and a univariate method.

    Tool-level score vectors are compared against the density-path
    method; pairwise-matrix methods (distribution path) compare the upper
    triangles of the two pairwise matrices instead. Returns None when
    there are fewer than 3 values to rank.
    """
    if uni.method == "dbscan" or uni.pairwise is None:
        shared = [t for t in multi.tool_ids if t in uni.tool_scores]
        if len(shared) < 3:
            return None
        a = np.array([multi.tool_scores[t] for t in shared])
        b = np.array([uni.tool_scores[t] for t in shared])
        return spearman(a, b)
    shared = [t for t in multi.tool_ids if t in uni.tool_ids]
    if len(shared) < 3:
        return None
    mi = [multi.tool_ids.index(t) for t in shared]
    ui = [uni.tool_ids.index(t) for t in shared]
    a, b = [], []
    for x in range(len(shared)):
        for y in range(x + 1, len(shared)):
            mv = multi.pairwise[mi[x], mi[y]]
            uv = uni.pairwise[ui[x], ui[y]]
            if np.isnan(mv) or np.isnan(uv):
                continue
            a.append(float(mv))
            b.append(float(uv))
    if len(a) < 3:
        return None
    return spearman(np.array(a), np.array(b))
