"""Tool-to-tool matching difference scores for equipment fleets.

Quantifies how far each tool in a fleet drifts from its peers, from
per-run trace summaries: univariate scores per sensor (density,
distribution and spectrum paths), a learned multivariate score from
per-tool sensor graphs, synthetic fleets with ground-truth deviations,
and the validation statistics to judge the scores by.
"""

__version__ = "0.1.0"

from .errors import TttmError
from .evalkit import correlation_report, cross_method_correlation, mode_count, spearman, tau_sweep
from .fleet import FleetDataset, StatSpec, TsumMatrix, load_traces, load_tsum, save_tsum, tst_encode
from .graphnet import GnnHyperParams, extract_graph, load_model, save_model, train
from .multiscore import graph_edit_distance, multivariate_scores
from .pipeline import RunConfig, run_pipeline, trend_report
from .preprocess import detrend, detrend_fleet, filter_sparse, mann_kendall, minmax_normalize
from .synthgen import SynthSpec, desk_scale_spec, generate_fleet, paper_scale_spec
from .uniscore import score_fleet, wasserstein1

__all__ = [
    "__version__",
    "TttmError",
    "FleetDataset",
    "TsumMatrix",
    "StatSpec",
    "load_tsum",
    "save_tsum",
    "load_traces",
    "tst_encode",
    "filter_sparse",
    "mann_kendall",
    "detrend",
    "detrend_fleet",
    "minmax_normalize",
    "score_fleet",
    "wasserstein1",
    "GnnHyperParams",
    "train",
    "extract_graph",
    "save_model",
    "load_model",
    "multivariate_scores",
    "graph_edit_distance",
    "SynthSpec",
    "generate_fleet",
    "paper_scale_spec",
    "desk_scale_spec",
    "spearman",
    "mode_count",
    "correlation_report",
    "cross_method_correlation",
    "tau_sweep",
    "RunConfig",
    "run_pipeline",
    "trend_report",
]
