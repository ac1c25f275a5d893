"""Multivariate tool scores from extracted sensor graphs.

Tools are compared by a normalized edit distance between their mean
adjacency matrices: align both graphs on the union of their sensor ids
(absent sensors contribute zero rows and columns), sum the absolute
entry differences over the full matrix, and divide by a normalizing edge
capacity ``e_max``. Tool scores are row means of the pairwise matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError
from .graphnet import ToolGraph

__all__ = [
    "MultiScoreReport",
    "align_graphs",
    "graph_edit_distance",
    "compute_e_max",
    "multivariate_scores",
]

E_MAX_CONVENTIONS = ("observed", "complete")


@dataclass
class MultiScoreReport:
    """Pairwise and per-tool multivariate scores plus the normalization used."""

    tool_ids: list[str]
    pairwise: np.ndarray  # normalized, Q x Q
    unnormalized: np.ndarray  # raw absolute-difference sums
    tool_scores: dict[str, float]
    e_max: float
    convention: str
    tau_g: float | None = None
    flags: list[str] = field(default_factory=list)


def align_graphs(a: ToolGraph, b: ToolGraph) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Embed both adjacencies into the union sensor index, zero-padded."""
    union = sorted(set(a.sensors) | set(b.sensors))

    def lift(g: ToolGraph) -> np.ndarray:
        if g.adjacency.shape != (len(g.sensors), len(g.sensors)):
            raise ShapeError(
                f"tool {g.tool}: adjacency {g.adjacency.shape} vs {len(g.sensors)} sensors"
            )
        if list(g.sensors) == union:
            return g.adjacency
        out = np.zeros((len(union), len(union)))
        idx = np.array([union.index(s) for s in g.sensors])
        out[np.ix_(idx, idx)] = g.adjacency
        return out

    return lift(a), lift(b), union


def graph_edit_distance(a: ToolGraph, b: ToolGraph, e_max: float) -> float:
    """Normalized absolute difference of union-aligned adjacency matrices."""
    if e_max <= 0:
        raise ValueError(f"e_max must be positive, got {e_max}")
    adj_a, adj_b, _ = align_graphs(a, b)
    return float(np.sum(np.abs(adj_a - adj_b)) / e_max)


def unnormalized_distance(a: ToolGraph, b: ToolGraph) -> float:
    adj_a, adj_b, _ = align_graphs(a, b)
    return float(np.sum(np.abs(adj_a - adj_b)))


def compute_e_max(graphs: list[ToolGraph], convention: str = "observed") -> tuple[float, str]:
    """Normalizing capacity and the convention that actually applied.

    ``observed`` uses the largest total edge mass among the graphs, which
    adapts to how dense the extracted graphs really are; ``complete``
    uses ``N (N - 1)`` on the union sensor count. When every graph is
    empty the observed mass is zero and the complete convention takes
    over so distances stay defined.
    """
    if convention not in E_MAX_CONVENTIONS:
        raise ValueError(f"bad convention {convention!r}, expected one of {E_MAX_CONVENTIONS}")
    if not graphs:
        raise ValueError("need at least one graph")
    union: set[str] = set()
    for g in graphs:
        union.update(g.sensors)
    n = len(union)
    complete = float(n * (n - 1))
    if complete <= 0:
        raise NumericError("e_max undefined for graphs with fewer than 2 sensors")
    if convention == "complete":
        return complete, "complete"
    observed = max(float(np.sum(g.adjacency)) for g in graphs)
    if observed <= 0:
        return complete, "complete"  # all-empty fallback
    return observed, "observed"


def multivariate_scores(
    graphs: list[ToolGraph],
    convention: str = "observed",
    tau_g: float | None = None,
) -> MultiScoreReport:
    """Pairwise normalized distances and per-tool row means.

    The row mean includes the zero self-distance, matching the univariate
    tool-score convention of dividing by the fleet size.
    """
    if len(graphs) < 2:
        raise ValueError(f"need at least 2 graphs, got {len(graphs)}")
    ids = [g.tool for g in graphs]
    if len(set(ids)) != len(ids):
        raise ShapeError("duplicate tool ids among graphs")
    e_max, applied = compute_e_max(graphs, convention)
    q = len(graphs)
    raw = np.zeros((q, q))
    for i in range(q):
        for j in range(i + 1, q):
            raw[i, j] = raw[j, i] = unnormalized_distance(graphs[i], graphs[j])
    pairwise = raw / e_max
    tool_scores = {ids[i]: float(pairwise[i].mean()) for i in range(q)}
    flags = []
    if applied != convention:
        flags.append("e_max_fallback_complete")
    for g in graphs:
        if g.window_count == 0:
            flags.append(f"no_windows:{g.tool}")
    return MultiScoreReport(
        tool_ids=ids,
        pairwise=pairwise,
        unnormalized=raw,
        tool_scores=tool_scores,
        e_max=e_max,
        convention=applied,
        tau_g=tau_g,
        flags=flags,
    )
