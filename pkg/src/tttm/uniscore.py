"""Univariate tool-matching scores.

Three scorers, all operating per sensor on preprocessed fleets:

* density path: pool the sensor's values over all tools, cluster with a
  1-D DBSCAN whose radius comes from the knee of the sorted kNN-distance
  curve, take the largest cluster as the fleet-typical reference, and
  score each tool by its RMS deviation from the reference centroid;
* distribution path: exact first Wasserstein distance between every tool
  pair's empirical value distributions;
* spectrum path: squared-magnitude DFT periodograms compared pairwise in
  the L2 norm, with a least-squares (Lomb-Scargle) power estimate taking
  over when run timestamps are too irregular for an FFT to be honest.

Sensor-level scores aggregate to tool-level scores either by averaging a
tool's sensor scores (density path) or by row means of the pairwise tool
matrix (distribution and spectrum paths).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lombscargle

from .errors import InsufficientDataError, NoReferenceClusterError, ShapeError
from .fleet import FleetDataset, SensorSeries, sensor_slice, union_sensors

__all__ = [
    "ClusterLabels",
    "SensorScores",
    "ScoreReport",
    "knee_epsilon",
    "dbscan_cluster",
    "reference_cluster",
    "dbscan_sensor_scores",
    "wasserstein1",
    "wd_sensor_scores",
    "periodogram",
    "lomb_scargle_power",
    "pd_sensor_scores",
    "pairwise_tool_matrix",
    "aggregate_tool_scores",
    "score_fleet",
]

DEFAULT_MIN_PTS = 2
NOISE = -1

#: factor of the median spacing beyond which a timestamp gap marks a
#: series as irregularly sampled
IRREGULAR_GAP_FACTOR = 3.0

PAIRWISE_MODES = ("pair_specific", "sensor_max")
LS_MODES = ("auto", "never", "always")


@dataclass(frozen=True)
class ClusterLabels:
    """DBSCAN output: label per point, -1 marks noise."""

    labels: np.ndarray
    eps: float
    min_pts: int

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max() + 1) if self.labels.size else 0


@dataclass
class SensorScores:
    """Per-sensor difference scores for one method, with per-sensor flags."""

    method: str
    scores: dict[str, float]
    flags: dict[str, list[str]] = field(default_factory=dict)

    def flag(self, sensor: str, note: str) -> None:
        self.flags.setdefault(sensor, []).append(note)


@dataclass
class ScoreReport:
    """Everything one scoring method produced on one fleet."""

    method: str
    tool_ids: list[str]
    sensor_scores: SensorScores
    tool_scores: dict[str, float]
    pairwise: np.ndarray | None = None  # Q x Q, NaN where undefined
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# density path


def knee_epsilon(points: np.ndarray, p_min: int = DEFAULT_MIN_PTS) -> float:
    """Neighborhood radius from the knee of the sorted kNN-distance curve.

    For every point take the distance to its ``p_min``-th nearest other
    point, sort those distances ascending, and return the value at the
    index farthest (perpendicularly) from the chord joining the curve's
    endpoints. Degenerate inputs (all points coincident) yield a positive
    machine-epsilon floor so a radius of zero can never escape.
    """
    x = np.sort(np.asarray(points, dtype=float))
    n = x.size
    if n <= p_min:
        raise InsufficientDataError(f"knee method needs more than {p_min} points, got {n}")

    # in 1-D the k-th nearest neighbor of x[i] lies within the k sorted
    # positions on either side; gather those candidates and rank them
    k = p_min
    cands = np.full((n, 2 * k), np.inf)
    for m in range(1, k + 1):
        step = x[m:] - x[:-m]
        cands[m:, m - 1] = step  # m-th neighbor to the left
        cands[: n - m, k + m - 1] = step  # m-th neighbor to the right
    knn = np.sort(cands, axis=1)[:, k - 1]
    curve = np.sort(knn)

    if curve[-1] == curve[0]:
        # flat curve: every candidate radius equal; fall back to it or eps
        return float(curve[0]) if curve[0] > 0 else float(np.finfo(float).eps)

    # perpendicular distance of each curve point to the endpoint chord
    idx = np.arange(n, dtype=float)
    x0, y0 = 0.0, curve[0]
    x1, y1 = float(n - 1), curve[-1]
    dx, dy = x1 - x0, y1 - y0
    norm = np.hypot(dx, dy)
    dist = np.abs(dy * (idx - x0) - dx * (curve - y0)) / norm
    eps = float(curve[int(np.argmax(dist))])
    if eps <= 0:
        eps = float(np.finfo(float).eps)
    return eps


def dbscan_cluster(points: np.ndarray, eps: float, min_pts: int) -> ClusterLabels:
    """Classic density clustering on a 1-D point set.

    A point is core when at least ``min_pts`` points (itself included)
    lie within ``eps``; clusters grow breadth-first from each not-yet
    labeled core point in input order, so a border point in reach of two
    clusters joins the one created first. Labels are dense, 0-based, in
    order of cluster creation; noise is -1.
    """
    x = np.asarray(points, dtype=float)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    n = x.size
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return ClusterLabels(labels=labels, eps=eps, min_pts=min_pts)

    order = np.argsort(x, kind="stable")
    sx = x[order]
    # neighbor index ranges on the sorted axis, inclusive of the point itself
    left = np.searchsorted(sx, sx - eps, side="left")
    right = np.searchsorted(sx, sx + eps, side="right")
    n_neighbors = right - left
    pos_of = np.empty(n, dtype=int)  # original index -> sorted position
    pos_of[order] = np.arange(n)
    core = np.zeros(n, dtype=bool)
    core[order] = n_neighbors >= min_pts

    next_label = 0
    for seed in range(n):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = next_label
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            sp = pos_of[p]
            for q in order[left[sp] : right[sp]]:
                if labels[q] == NOISE:
                    labels[q] = next_label
                    if core[q]:
                        queue.append(q)
        next_label += 1
    return ClusterLabels(labels=labels, eps=eps, min_pts=min_pts)


def reference_cluster(points: np.ndarray, clusters: ClusterLabels) -> tuple[int, float]:
    """Pick the fleet-typical cluster: largest, ties to smaller centroid.

    Returns (cluster id, centroid). Raises
    :class:`NoReferenceClusterError` when everything is noise.
    """
    x = np.asarray(points, dtype=float)
    labels = clusters.labels
    if labels.shape != x.shape:
        raise ShapeError(f"labels shape {labels.shape} != points shape {x.shape}")
    best: tuple[int, float, int] | None = None  # (-size, centroid, id)
    for cid in range(clusters.n_clusters):
        members = x[labels == cid]
        if members.size == 0:
            continue
        key = (-members.size, float(members.mean()), cid)
        if best is None or key < best:
            best = key
    if best is None:
        raise NoReferenceClusterError("clustering produced only noise")
    return best[2], best[1]


def _rms(values: np.ndarray, center: float) -> float:
    return float(np.sqrt(np.mean((values - center) ** 2)))


def dbscan_sensor_scores(
    fleet: FleetDataset, p_min: int = DEFAULT_MIN_PTS
) -> SensorScores:
    """Density-path score per sensor: worst tool RMS from the reference centroid.

    Sensors carried by a single tool have nothing to deviate from and
    score 0 with a ``single_tool`` flag. When clustering finds no
    reference (all noise), the pooled mean takes over as the centroid and
    the sensor is flagged ``no_reference_cluster``.
    """
    out = SensorScores(method="dbscan", scores={})
    for sensor in union_sensors(fleet):
        slices = sensor_slice(fleet, sensor)
        slices = [s for s in slices if s.values.size]
        if len(slices) < 2:
            out.scores[sensor] = 0.0
            out.flag(sensor, "single_tool")
            continue
        pooled = np.concatenate([s.values for s in slices])
        if np.ptp(pooled) == 0:
            # identical everywhere: reference is the common value, RMS 0
            out.scores[sensor] = 0.0
            out.flag(sensor, "degenerate_constant")
            continue
        if pooled.size <= p_min:
            out.scores[sensor] = 0.0
            out.flag(sensor, "too_few_points")
            continue
        eps = knee_epsilon(pooled, p_min)
        clusters = dbscan_cluster(pooled, eps, p_min)
        try:
            _, centroid = reference_cluster(pooled, clusters)
        except NoReferenceClusterError:
            centroid = float(pooled.mean())
            out.flag(sensor, "no_reference_cluster")
        out.scores[sensor] = max(_rms(s.values, centroid) for s in slices)
    return out


# ---------------------------------------------------------------------------
# distribution path


def wasserstein1(a: np.ndarray, b: np.ndarray) -> float:
    """Exact first Wasserstein distance between two empirical distributions.

    Computed as the L1 distance between the empirical CDFs, which for
    equal sample sizes reduces to the mean absolute difference of the
    sorted samples (the optimal transport plan matches order statistics).
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise InsufficientDataError("wasserstein distance needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    grid = np.concatenate([a, b])
    grid.sort(kind="mergesort")
    deltas = np.diff(grid)
    cdf_a = np.searchsorted(a, grid[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


PairKey = tuple[str, str, str]  # (sensor, tool_lo, tool_hi), tool_lo < tool_hi


def wd_sensor_scores(
    fleet: FleetDataset,
) -> tuple[SensorScores, dict[PairKey, float]]:
    """Distribution-path scores: max pairwise Wasserstein distance per sensor.

    Also returns the raw per-pair distances keyed by (sensor, tool, tool)
    for the pairwise tool matrix.
    """
    out = SensorScores(method="wd", scores={})
    pair_dists: dict[PairKey, float] = {}
    for sensor in union_sensors(fleet):
        slices = [s for s in sensor_slice(fleet, sensor) if s.values.size]
        if len(slices) < 2:
            out.scores[sensor] = 0.0
            out.flag(sensor, "single_tool")
            continue
        worst = 0.0
        for i in range(len(slices)):
            for j in range(i + 1, len(slices)):
                d = wasserstein1(slices[i].values, slices[j].values)
                lo, hi = sorted((slices[i].tool, slices[j].tool))
                pair_dists[(sensor, lo, hi)] = d
                worst = max(worst, d)
        out.scores[sensor] = worst
    return out, pair_dists


# ---------------------------------------------------------------------------
# spectrum path


def periodogram(series: np.ndarray, pad_to: int | None = None) -> np.ndarray:
    """Squared-magnitude DFT periodogram of a zero-padded series.

    Returns ``|DFT(x)|^2 / pad_to`` for bins ``0..floor(pad_to / 2)``.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise InsufficientDataError(f"periodogram needs >= 2 points, got {x.size}")
    n = x.size if pad_to is None else int(pad_to)
    if n < x.size:
        raise ValueError(f"pad_to={n} shorter than the series ({x.size})")
    spectrum = np.fft.rfft(x, n=n)
    return np.abs(spectrum) ** 2 / n


def lomb_scargle_power(
    values: np.ndarray, timestamps: np.ndarray, n_len: int, spacing: float
) -> np.ndarray:
    """Least-squares power estimate on the DFT bin grid of a length-``n_len`` series.

    Serves as the irregular-sampling stand-in for :func:`periodogram`:
    bin k corresponds to frequency ``k / (n_len * spacing)``. Power is
    rescaled to the zero-padded-DFT convention so the two estimators are
    comparable, and the DC bin is filled with ``(sum x)^2 / n_len``
    exactly as the DFT would.
    """
    x = np.asarray(values, dtype=float)
    t = np.asarray(timestamps, dtype=float)
    if x.size < 2:
        raise InsufficientDataError(f"power estimate needs >= 2 points, got {x.size}")
    if x.shape != t.shape:
        raise ShapeError(f"values shape {x.shape} != timestamps shape {t.shape}")
    n_bins = n_len // 2 + 1
    power = np.empty(n_bins)
    power[0] = float(x.sum()) ** 2 / n_len
    if n_bins > 1:
        k = np.arange(1, n_bins, dtype=float)
        omega = 2.0 * np.pi * k / (n_len * spacing)
        raw = lombscargle(t - t[0], x, omega, precenter=False, normalize=False)
        power[1:] = raw * x.size / n_len
    return power


def _is_irregular(timestamps: np.ndarray) -> bool:
    gaps = np.diff(np.asarray(timestamps, dtype=float))
    if gaps.size == 0:
        return False
    med = float(np.median(gaps))
    if med <= 0:
        return True
    return bool(gaps.max() > IRREGULAR_GAP_FACTOR * med)


def _pd_distance(a: SensorSeries, b: SensorSeries, mode: str) -> tuple[float, bool]:
    """Spectral L2 distance between two runs' series, padded to a common length."""
    n = max(a.values.size, b.values.size)
    irregular = _is_irregular(a.timestamps) or _is_irregular(b.timestamps)
    use_ls = mode == "always" or (mode == "auto" and irregular)
    if use_ls:
        gaps = np.concatenate([np.diff(a.timestamps), np.diff(b.timestamps)])
        spacing = float(np.median(gaps)) if gaps.size else 1.0
        if spacing <= 0:
            spacing = 1.0
        pa = lomb_scargle_power(a.values, a.timestamps, n, spacing)
        pb = lomb_scargle_power(b.values, b.timestamps, n, spacing)
    else:
        pa = periodogram(a.values, pad_to=n)
        pb = periodogram(b.values, pad_to=n)
    return float(np.linalg.norm(pa - pb)), use_ls


def pd_sensor_scores(
    fleet: FleetDataset, lomb_scargle_mode: str = "auto"
) -> tuple[SensorScores, dict[PairKey, float]]:
    """Spectrum-path scores: max pairwise periodogram distance per sensor.

    ``lomb_scargle_mode`` is ``auto`` (switch per pair when either series
    has a gap above three times its median spacing), ``never`` or
    ``always``.
    """
    if lomb_scargle_mode not in LS_MODES:
        raise ValueError(f"bad lomb_scargle_mode {lomb_scargle_mode!r}")
    out = SensorScores(method="pd", scores={})
    pair_dists: dict[PairKey, float] = {}
    for sensor in union_sensors(fleet):
        slices = [s for s in sensor_slice(fleet, sensor) if s.values.size >= 2]
        if len(slices) < 2:
            out.scores[sensor] = 0.0
            out.flag(sensor, "single_tool")
            continue
        worst = 0.0
        any_ls = False
        for i in range(len(slices)):
            for j in range(i + 1, len(slices)):
                d, used_ls = _pd_distance(slices[i], slices[j], lomb_scargle_mode)
                any_ls = any_ls or used_ls
                lo, hi = sorted((slices[i].tool, slices[j].tool))
                pair_dists[(sensor, lo, hi)] = d
                worst = max(worst, d)
        out.scores[sensor] = worst
        if any_ls:
            out.flag(sensor, "lomb_scargle")
    return out, pair_dists


# ---------------------------------------------------------------------------
# aggregation


def pairwise_tool_matrix(
    fleet: FleetDataset,
    pair_dists: dict[PairKey, float],
    mode: str = "pair_specific",
    sensor_maxima: dict[str, float] | None = None,
) -> np.ndarray:
    """Tool-by-tool matrix of mean per-sensor distances over shared sensors.

    ``pair_specific`` (default) averages each pair's own distances, giving
    a symmetric matrix with a zero diagonal. ``sensor_max`` averages the
    fleet-wide per-sensor maxima over the shared sensor set instead, in
    which case the diagonal is that tool's own mean maximum and generally
    nonzero. Pairs without shared sensors come back NaN.
    """
    if mode not in PAIRWISE_MODES:
        raise ValueError(f"bad pairwise mode {mode!r}, expected one of {PAIRWISE_MODES}")
    if mode == "sensor_max" and sensor_maxima is None:
        raise ValueError("sensor_max mode needs the per-sensor maxima")
    tools = fleet.tool_ids
    q = len(tools)
    sensors_of = {t.tool: set(t.sensors) for t in fleet.tools}
    matrix = np.zeros((q, q))
    for i in range(q):
        for j in range(q):
            shared = sorted(sensors_of[tools[i]] & sensors_of[tools[j]])
            if mode == "pair_specific":
                if i == j:
                    continue
                lo, hi = sorted((tools[i], tools[j]))
                vals = [
                    pair_dists[(s, lo, hi)] for s in shared if (s, lo, hi) in pair_dists
                ]
            else:
                vals = [sensor_maxima[s] for s in shared if s in sensor_maxima]
            matrix[i, j] = float(np.mean(vals)) if vals else np.nan
    return matrix


def aggregate_tool_scores(
    fleet: FleetDataset,
    sensor_scores: SensorScores | None = None,
    pairwise: np.ndarray | None = None,
) -> dict[str, float]:
    """Collapse to one score per tool.

    With sensor scores: the mean over that tool's own sensors (a sensor
    it does not carry cannot count against it). With a pairwise matrix:
    the row mean over defined entries, the zero self-distance included. A
    tool with no defined entries at all reports NaN.
    """
    if (sensor_scores is None) == (pairwise is None):
        raise ValueError("pass exactly one of sensor_scores or pairwise")
    out: dict[str, float] = {}
    if sensor_scores is not None:
        for tool in fleet.tools:
            vals = [sensor_scores.scores[s] for s in tool.sensors if s in sensor_scores.scores]
            out[tool.tool] = float(np.mean(vals)) if vals else float("nan")
        return out
    assert pairwise is not None
    tools = fleet.tool_ids
    if pairwise.shape != (len(tools), len(tools)):
        raise ShapeError(f"pairwise shape {pairwise.shape} != ({len(tools)}, {len(tools)})")
    for i, tool in enumerate(tools):
        row = pairwise[i]
        defined = row[~np.isnan(row)]
        out[tool] = float(defined.mean()) if defined.size else float("nan")
    return out


def score_fleet(
    fleet: FleetDataset,
    method: str,
    p_min: int = DEFAULT_MIN_PTS,
    pairwise_mode: str = "pair_specific",
    lomb_scargle_mode: str = "auto",
) -> ScoreReport:
    """Run one univariate method end to end on an already preprocessed fleet."""
    if method == "dbscan":
        sensor_scores = dbscan_sensor_scores(fleet, p_min=p_min)
        tool_scores = aggregate_tool_scores(fleet, sensor_scores=sensor_scores)
        report = ScoreReport(
            method=method,
            tool_ids=fleet.tool_ids,
            sensor_scores=sensor_scores,
            tool_scores=tool_scores,
            metadata={"p_min": p_min},
        )
    elif method in ("wd", "pd"):
        if method == "wd":
            sensor_scores, pair_dists = wd_sensor_scores(fleet)
        else:
            sensor_scores, pair_dists = pd_sensor_scores(
                fleet, lomb_scargle_mode=lomb_scargle_mode
            )
        matrix = pairwise_tool_matrix(
            fleet,
            pair_dists,
            mode=pairwise_mode,
            sensor_maxima=sensor_scores.scores if pairwise_mode == "sensor_max" else None,
        )
        tool_scores = aggregate_tool_scores(fleet, pairwise=matrix)
        report = ScoreReport(
            method=method,
            tool_ids=fleet.tool_ids,
            sensor_scores=sensor_scores,
            tool_scores=tool_scores,
            pairwise=matrix,
            metadata={"pairwise_mode": pairwise_mode},
        )
        if method == "pd":
            report.metadata["lomb_scargle_mode"] = lomb_scargle_mode
    else:
        raise ValueError(f"unknown method {method!r}, expected dbscan, wd or pd")
    return report
