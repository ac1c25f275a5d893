"""Preprocessing stages applied before any difference scoring.

The stages run in pipeline order: sparsity filtering, segmentation at
preventive-maintenance (PM) events, trend testing and removal per sensor
row, then fleet-wide min-max normalization. Each function is pure; fleets
are never mutated in place.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import (
    EmptyResultError,
    InsufficientDataError,
    RegularizationRequiredError,
)
from .fleet import FleetDataset, union_sensors

__all__ = [
    "MkResult",
    "TrendModel",
    "PmSegment",
    "filter_sparse",
    "split_by_pm",
    "pm_boundaries",
    "mann_kendall",
    "detrend",
    "detrend_fleet",
    "minmax_normalize",
]

DEFAULT_SPARSITY_TAU = 10
DEFAULT_ALPHA = 0.05
DEFAULT_RIDGE_LAMBDA = 1.0
DETREND_DEGREES = (1, 2, 3)

#: minimum series length for the trend test / for a cubic ridge fit
MK_MIN_POINTS = 3
DETREND_MIN_POINTS = 4


@dataclass(frozen=True)
class MkResult:
    """Outcome of the Mann-Kendall trend test on one series."""

    z_prime: int
    z_stat: float
    alpha: float
    trend: str  # "up" | "down" | "none"
    reject_h0: bool


@dataclass(frozen=True)
class TrendModel:
    """Ridge-selected polynomial trend in the column index.

    ``coefficients`` are raw-index-space polynomial coefficients in
    ascending order, so ``bias == coefficients[0]`` is the fitted value at
    index 0 that detrending adds back to preserve the series level.
    """

    degree: int
    coefficients: np.ndarray
    bias: float
    r2: float
    lam: float

    def predict(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index, dtype=float)
        return sum(c * index**k for k, c in enumerate(self.coefficients))


@dataclass(frozen=True)
class PmSegment:
    """One tool's run of columns between two PM events.

    ``start``/``end`` bound the half-open timestamp interval; ``None``
    means unbounded on that side. ``phase`` is ``before_pm`` for the
    segment preceding the tool's first PM event, ``after_pm`` otherwise.
    """

    tool: str
    start: int | None
    end: int | None
    phase: str


def _copy_meta(meta: dict) -> dict:
    return {k: list(v) if isinstance(v, list) else v for k, v in meta.items()}


def filter_sparse(fleet: FleetDataset, tau: int = DEFAULT_SPARSITY_TAU) -> FleetDataset:
    """Drop tools with fewer than ``tau`` summary points.

    Raises :class:`EmptyResultError` when nothing survives, since every
    downstream scorer needs at least one tool.
    """
    kept = [t for t in fleet.tools if t.n_points >= tau]
    dropped = [t.tool for t in fleet.tools if t.n_points < tau]
    if not kept:
        raise EmptyResultError(f"no tools with at least {tau} points after sparsity filter")
    meta = _copy_meta(fleet.meta)
    if dropped:
        meta.setdefault("dropped_sparse_tools", []).extend(dropped)
    kept_ids = {t.tool for t in kept}
    return FleetDataset(
        tools=kept,
        pm_logs={k: list(v) for k, v in fleet.pm_logs.items() if k in kept_ids},
        meta=meta,
    )


def split_by_pm(fleet: FleetDataset) -> list[tuple[PmSegment, FleetDataset]]:
    """Partition each tool's columns at its PM timestamps.

    Returns one (segment, fragment) pair per tool and PM interval, in tool
    order then time order. A fragment is a single-tool fleet so segments
    can flow through the same preprocessing entry points; fragments may be
    empty when a PM event falls outside the data range. A tool without PM
    events yields exactly one segment equal to its input data. A PM event
    at timestamp ``b`` starts the after-PM segment, i.e. column ``b``
    belongs to the segment that follows the event.
    """
    out: list[tuple[PmSegment, FleetDataset]] = []
    for tool in fleet.tools:
        events = sorted(fleet.pm_logs.get(tool.tool, []))
        bounds: list[tuple[int | None, int | None]] = []
        prev: int | None = None
        for b in events:
            bounds.append((prev, b))
            prev = b
        bounds.append((prev, None))
        for k, (start, end) in enumerate(bounds):
            mask = np.ones(tool.n_points, dtype=bool)
            if start is not None:
                mask &= tool.timestamps >= start
            if end is not None:
                mask &= tool.timestamps < end
            fragment = FleetDataset(
                tools=[tool.select_columns(mask)],
                pm_logs={tool.tool: []},
            )
            phase = "before_pm" if k == 0 else "after_pm"
            out.append((PmSegment(tool=tool.tool, start=start, end=end, phase=phase), fragment))
    return out


def pm_boundaries(fleet: FleetDataset) -> list[int]:
    """Sorted union of all tools' PM timestamps that fall inside the data range.

    Splitting the fleet at these boundaries guarantees no tool's segment
    spans one of its own PM events, which lets fleet-level scoring run on
    PM-pure sub-periods.
    """
    stamps = [t.timestamps for t in fleet.tools if t.n_points]
    if not stamps:
        return []
    lo = min(int(s[0]) for s in stamps)
    hi = max(int(s[-1]) for s in stamps)
    cuts = {
        int(b)
        for events in fleet.pm_logs.values()
        for b in events
        if lo < int(b) <= hi
    }
    return sorted(cuts)


def mann_kendall(
    series: np.ndarray, alpha: float = DEFAULT_ALPHA, one_sided: bool = False
) -> MkResult:
    """Mann-Kendall monotonic-trend test with the tie-corrected variance.

    The statistic sums ``sign(x[j] - x[i])`` over all pairs ``i < j``; its
    variance subtracts the standard correction term per group of tied
    values, and the z score carries the usual continuity correction. The
    default decision is two-sided at level ``alpha``; the one-sided
    variant tests for an upward trend only.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < MK_MIN_POINTS:
        raise InsufficientDataError(f"trend test needs >= {MK_MIN_POINTS} points, got {n}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")

    diffs = np.sign(x[None, :] - x[:, None])
    z_prime = int(np.triu(diffs, k=1).sum())

    _, counts = np.unique(x, return_counts=True)
    ties = counts[counts > 1]
    var = n * (n - 1) * (2 * n + 5) - np.sum(ties * (ties - 1) * (2 * ties + 5))
    var = var / 18.0
    if var <= 0:  # every value tied
        z_stat = 0.0
    elif z_prime > 0:
        z_stat = (z_prime - 1) / np.sqrt(var)
    elif z_prime < 0:
        z_stat = (z_prime + 1) / np.sqrt(var)
    else:
        z_stat = 0.0

    if one_sided:
        crit = stats.norm.ppf(1.0 - alpha)
        reject = z_stat >= crit
    else:
        crit = stats.norm.ppf(1.0 - alpha / 2.0)
        reject = abs(z_stat) >= crit
    if not reject:
        trend = "none"
    else:
        trend = "up" if z_stat > 0 else "down"
    return MkResult(
        z_prime=z_prime, z_stat=float(z_stat), alpha=alpha, trend=trend, reject_h0=bool(reject)
    )


def _ridge_fit(x: np.ndarray, degree: int, lam: float) -> tuple[np.ndarray, float]:
    """Fit a degree-``degree`` polynomial in the column index by ridge.

    Polynomial features are standardized before the penalty is applied and
    the intercept is never penalized; the returned coefficients are mapped
    back to raw index space (ascending powers).
    """
    n = x.size
    j = np.arange(n, dtype=float)
    feats = np.column_stack([j**k for k in range(1, degree + 1)])
    mu = feats.mean(axis=0)
    sigma = feats.std(axis=0)
    if np.any(sigma == 0):
        raise RegularizationRequiredError(
            f"degenerate polynomial features for degree {degree} on {n} points"
        )
    z = (feats - mu) / sigma

    design = np.column_stack([np.ones(n), z])
    gram = design.T @ design
    if lam == 0 and np.linalg.cond(gram) > 1e12:
        raise RegularizationRequiredError(
            "ill-conditioned normal equations; use a positive ridge penalty"
        )
    penalty = lam * np.eye(degree + 1)
    penalty[0, 0] = 0.0  # unpenalized intercept
    try:
        beta = np.linalg.solve(gram + penalty, design.T @ x)
    except np.linalg.LinAlgError:
        raise RegularizationRequiredError(
            "singular normal equations; use a positive ridge penalty"
        ) from None

    # back to raw-space ascending coefficients: f(j) = b0 + sum bk (j^k - mu)/sigma
    coeffs = np.zeros(degree + 1)
    coeffs[0] = beta[0] - float(np.sum(beta[1:] * mu / sigma))
    coeffs[1 : degree + 1] = beta[1:] / sigma

    fitted = design @ beta
    ss_res = float(np.sum((x - fitted) ** 2))
    ss_tot = float(np.sum((x - x.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return coeffs, r2


def detrend(series: np.ndarray, lam: float = DEFAULT_RIDGE_LAMBDA) -> tuple[np.ndarray, TrendModel]:
    """Remove the best ridge polynomial trend, preserving the series level.

    Candidate degrees 1..3 compete on r-squared (ties go to the lower
    degree). The fitted curve is subtracted and its constant term added
    back, so the detrended series keeps the level the sensor started at.
    """
    x = np.asarray(series, dtype=float)
    if x.size < DETREND_MIN_POINTS:
        raise InsufficientDataError(
            f"detrending needs >= {DETREND_MIN_POINTS} points, got {x.size}"
        )
    if lam < 0:
        raise ValueError(f"ridge penalty must be >= 0, got {lam}")

    best: TrendModel | None = None
    for degree in DETREND_DEGREES:
        coeffs, r2 = _ridge_fit(x, degree, lam)
        if best is None or r2 > best.r2 + 1e-15:
            best = TrendModel(
                degree=degree,
                coefficients=coeffs,
                bias=float(coeffs[0]),
                r2=r2,
                lam=lam,
            )
    assert best is not None
    fitted = best.predict(np.arange(x.size))
    return x - fitted + best.bias, best


def detrend_fleet(
    fleet: FleetDataset,
    alpha: float = DEFAULT_ALPHA,
    lam: float = DEFAULT_RIDGE_LAMBDA,
    one_sided: bool = False,
) -> FleetDataset:
    """Test every (tool, sensor) row and detrend the rows that reject H0.

    Rows too short for the test or the fit are passed through untouched
    and recorded under ``meta["detrend_skipped"]``.
    """
    tools = []
    skipped: list[tuple[str, str]] = []
    detrended: list[tuple[str, str]] = []
    for tool in fleet.tools:
        values = tool.values.copy()
        for i, sensor in enumerate(tool.sensors):
            row = values[i]
            if row.size < max(MK_MIN_POINTS, DETREND_MIN_POINTS):
                skipped.append((tool.tool, sensor))
                continue
            outcome = mann_kendall(row, alpha=alpha, one_sided=one_sided)
            if outcome.reject_h0:
                values[i], _ = detrend(row, lam=lam)
                detrended.append((tool.tool, sensor))
        tools.append(tool.with_values(values))
    out = FleetDataset(
        tools=tools,
        pm_logs={k: list(v) for k, v in fleet.pm_logs.items()},
        meta=_copy_meta(fleet.meta),
    )
    if skipped:
        out.meta.setdefault("detrend_skipped", []).extend(skipped)
    if detrended:
        out.meta.setdefault("detrended_rows", []).extend(detrended)
    return out


def minmax_normalize(fleet: FleetDataset) -> FleetDataset:
    """Map each sensor to [0, 1] using fleet-wide min and max.

    The extrema pool the sensor's values over every tool carrying it, so
    one tool's deviation shows up on the shared scale. A sensor that is
    constant across the whole fleet has no scale; its rows become zeros
    and the sensor id is recorded under ``meta["degenerate_sensors"]``.
    """
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    for sensor in union_sensors(fleet):
        chunks = [t.row(sensor) for t in fleet.tools if sensor in t.sensors and t.n_points]
        if not chunks:
            continue
        pooled = np.concatenate(chunks)
        lo[sensor] = float(pooled.min())
        hi[sensor] = float(pooled.max())

    degenerate = sorted(s for s in lo if hi[s] == lo[s])
    tools = []
    for tool in fleet.tools:
        values = tool.values.copy()
        for i, sensor in enumerate(tool.sensors):
            if sensor not in lo:
                continue
            span = hi[sensor] - lo[sensor]
            if span == 0:
                values[i] = 0.0
            else:
                values[i] = (values[i] - lo[sensor]) / span
        tools.append(tool.with_values(values))
    out = FleetDataset(
        tools=tools,
        pm_logs={k: list(v) for k, v in fleet.pm_logs.items()},
        meta=_copy_meta(fleet.meta),
    )
    if degenerate:
        out.meta.setdefault("degenerate_sensors", []).extend(degenerate)
    return out
