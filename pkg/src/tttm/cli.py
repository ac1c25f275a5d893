"""Command-line interface.

One executable, ``tttm``, with a subcommand per workflow stage: data
ingestion and encoding, synthetic fleet generation, univariate scoring,
model training and graph extraction, multivariate scoring, validation
tables, and period-over-period trend reports.

Exit codes are a stable contract: 0 success, 1 usage or input error,
2 empty result (nothing left to score), 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import json
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from .errors import (
    EmptyResultError,
    InsufficientDataError,
    NoReferenceClusterError,
    NumericError,
    TttmError,
)
from .evalkit import correlation_report, spearman, tau_sweep
from .fleet import (
    STATISTICS,
    FleetDataset,
    StatSpec,
    load_traces,
    load_tsum,
    save_pm_log,
    save_tsum,
    tst_encode,
    union_sensors,
)
from .graphnet import (
    GnnHyperParams,
    extract_graph,
    load_graph_csv,
    load_model,
    save_graph_csv,
    save_model,
    train,
)
from .multiscore import E_MAX_CONVENTIONS, multivariate_scores
from .pipeline import (
    UNIVARIATE_METHODS,
    RunConfig,
    format_number,
    load_report_bundle,
    run_pipeline,
    safe_filename,
    trend_report,
    write_report_bundle,
)
from .preprocess import (
    DEFAULT_ALPHA,
    DEFAULT_RIDGE_LAMBDA,
    DEFAULT_SPARSITY_TAU,
    detrend_fleet,
    filter_sparse,
    minmax_normalize,
)
from .synthgen import generate_fleet, spec_from_json

__all__ = ["main", "entrypoint", "build_parser"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_EMPTY = 2
EXIT_NUMERIC = 3

log = logging.getLogger("tttm")


class CliUsageError(Exception):
    """Bad arguments or an unusable combination of them."""


class _Parser(argparse.ArgumentParser):
    # argparse wants to sys.exit on errors; raise instead so main() owns
    # the exit code
    def error(self, message):
        raise CliUsageError(message)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--out", help="output file or directory")
    common.add_argument(
        "--log-level",
        default="warning",
        choices=("debug", "info", "warning", "error"),
        help="logging verbosity",
    )
    return common


def build_parser() -> _Parser:
    common = _common_flags()
    parser = _Parser(
        prog="tttm",
        description="tool-to-tool matching difference scores for equipment fleets",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="validate and summarize a summary CSV")
    p.add_argument("--input", required=True, help="summary CSV")
    p.add_argument("--pm", help="maintenance log CSV")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("encode", parents=[common], help="collapse traces into per-run summaries")
    p.add_argument("--traces", required=True, help="trace CSV")
    p.add_argument("--stat", default="mean", choices=STATISTICS, help="summary statistic")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic fleet")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--pm", help="write the maintenance log here")
    p.add_argument("--truth", help="write ground-truth deviation labels here")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("score-uni", parents=[common], help="univariate scoring pipeline")
    p.add_argument("--method", choices=UNIVARIATE_METHODS, help="scoring method")
    p.add_argument("--input", help="summary CSV")
    p.add_argument("--pm", help="maintenance log CSV")
    p.set_defaults(func=_cmd_score_uni)

    p = sub.add_parser("train-gnn", parents=[common], help="train the fleet graph model")
    p.add_argument("--arch", required=True, choices=("mtadgat", "gdn"), help="model variant")
    p.add_argument("--input", required=True, help="summary CSV")
    p.add_argument("--hyper", help="hyperparameter JSON")
    p.set_defaults(func=_cmd_train_gnn)

    p = sub.add_parser("extract-graphs", parents=[common], help="per-tool sensor graphs")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--input", required=True, help="summary CSV the model was trained on")
    p.add_argument("--tau-g", type=float, default=0.9, dest="tau_g", help="similarity threshold")
    p.set_defaults(func=_cmd_extract_graphs)

    p = sub.add_parser("score-multi", parents=[common], help="graph-distance scoring")
    p.add_argument("--graphs", required=True, help="directory of adjacency CSVs")
    p.add_argument("--tau-g", type=float, dest="tau_g", help="threshold the graphs used")
    p.add_argument(
        "--e-max", default="observed", choices=E_MAX_CONVENTIONS, dest="e_max",
        help="normalizing capacity convention",
    )
    p.set_defaults(func=_cmd_score_multi)

    p_eval = sub.add_parser("eval", help="validation statistics")
    sub_eval = p_eval.add_subparsers(dest="subcommand", metavar="subcommand", parser_class=_Parser)

    p = sub_eval.add_parser("corr", parents=[common], help="score-vs-statistics correlation tables")
    p.add_argument("--scores", required=True, nargs="+", help="report bundle directories")
    p.add_argument("--input", required=True, help="summary CSV the scores came from")
    p.add_argument("--pm", help="maintenance log CSV")
    p.add_argument("--bandwidth", type=float, default=0.6, help="mode-count KDE bandwidth")
    p.set_defaults(func=_cmd_eval_corr)

    p = sub_eval.add_parser("sweep", parents=[common], help="threshold sensitivity sweep")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--input", required=True, help="summary CSV the model was trained on")
    p.add_argument("--tau", default="0.5,0.8,0.9,0.95,0.98,1.0", help="comma-separated thresholds")
    p.add_argument("--mc", type=int, default=100, help="Monte-Carlo repetitions")
    p.add_argument(
        "--mc-mode", default="retrain", choices=("retrain", "extract"), dest="mc_mode",
        help="repetition source: fresh trainings or dropout re-extractions",
    )
    p.set_defaults(func=_cmd_eval_sweep)

    p_report = sub.add_parser("report", help="reporting across periods")
    sub_report = p_report.add_subparsers(
        dest="subcommand", metavar="subcommand", parser_class=_Parser
    )

    p = sub_report.add_parser("trend", parents=[common], help="score trends over periods")
    p.add_argument("--reports", required=True, nargs="+", help="per-period report bundles, in order")
    p.add_argument("--top-k", type=int, default=4, dest="top_k", help="drill-down sensor count")
    p.set_defaults(func=_cmd_report_trend)

    return parser


def _require_out(args) -> str:
    if not args.out:
        raise CliUsageError("--out is required for this command")
    return args.out


def _load_json(path: str) -> dict:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliUsageError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise CliUsageError(f"{path}: expected a JSON object")
    return data


def _prepare_fleet(fleet: FleetDataset, config_path: str | None) -> FleetDataset:
    """The preprocessing the model-facing commands share: sparsity filter,
    optional detrending, fleet-wide normalization. No maintenance split;
    the full pipeline handles segmentation itself."""
    cfg = _load_json(config_path) if config_path else {}
    fleet = filter_sparse(fleet, tau=int(cfg.get("tau", DEFAULT_SPARSITY_TAU)))
    if cfg.get("detrend_enabled", True):
        fleet = detrend_fleet(
            fleet,
            alpha=float(cfg.get("alpha", DEFAULT_ALPHA)),
            lam=float(cfg.get("lambda", DEFAULT_RIDGE_LAMBDA)),
            one_sided=bool(cfg.get("mk_one_sided", False)),
        )
    return minmax_normalize(fleet)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# command handlers


def _cmd_ingest(args) -> None:
    fleet = load_tsum(args.input, args.pm)
    summary = {
        "tool_count": fleet.n_tools,
        "sensor_union": union_sensors(fleet),
        "tools": {
            t.tool: {
                "sensors": t.n_sensors,
                "points": t.n_points,
                "first_timestamp": int(t.timestamps[0]) if t.n_points else None,
                "last_timestamp": int(t.timestamps[-1]) if t.n_points else None,
            }
            for t in fleet.tools
        },
        "pm_event_counts": {k: len(v) for k, v in sorted(fleet.pm_logs.items())},
    }
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)


def _cmd_encode(args) -> None:
    out = _require_out(args)
    spec = StatSpec(statistic=args.stat)
    traces = load_traces(args.traces)
    tools = [tst_encode(traces[tool], spec) for tool in sorted(traces)]
    save_tsum(FleetDataset(tools=tools), out)
    print(f"wrote {out} ({len(tools)} tools, statistic={args.stat})")


def _cmd_synth(args) -> None:
    out = _require_out(args)
    with open(args.spec) as fh:
        spec = spec_from_json(fh.read())
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    fleet, truth = generate_fleet(spec)
    save_tsum(fleet, out)
    written = [out]
    if args.pm:
        save_pm_log(fleet.pm_logs, args.pm)
        written.append(args.pm)
    if args.truth:
        with open(args.truth, "w") as fh:
            fh.write(truth.to_json() + "\n")
        written.append(args.truth)
    print(f"wrote {', '.join(written)}")


def _cmd_score_uni(args) -> None:
    config = RunConfig.from_json(
        _load_json(args.config) if args.config else {},
        input=args.input,
        pm_log_path=args.pm,
        method=args.method,
        out_dir=args.out,
        seed=args.seed,
    )
    if config.method not in UNIVARIATE_METHODS:
        raise CliUsageError(
            f"score-uni runs {UNIVARIATE_METHODS}, config says {config.method!r}"
        )
    result = run_pipeline(config)
    print(f"wrote report bundle to {config.out_dir} ({len(result.files)} files)")


def _gnn_hyper(args, arch: str) -> GnnHyperParams:
    kwargs = _load_json(args.hyper) if getattr(args, "hyper", None) else {}
    kwargs.pop("arch", None)  # the flag owns the variant choice
    if args.seed is not None:
        kwargs["seed"] = args.seed
    internal = "mtad_gat" if arch == "mtadgat" else "gdn"
    return GnnHyperParams.defaults(internal, **kwargs)


def _cmd_train_gnn(args) -> None:
    out = _require_out(args)
    hyper = _gnn_hyper(args, args.arch)
    fleet = _prepare_fleet(load_tsum(args.input), args.config)
    result = train(fleet, hyper)
    save_model(result.params, out)
    print(
        f"wrote {out} (epochs={hyper.epochs}, "
        f"final loss={format_number(result.loss_trace[-1])})"
    )


def _cmd_extract_graphs(args) -> None:
    out = _require_out(args)
    params = load_model(args.model)
    fleet = _prepare_fleet(load_tsum(args.input), args.config)
    os.makedirs(out, exist_ok=True)
    names: set[str] = set()
    for tool in fleet.tools:
        name = safe_filename(tool.tool)
        if name in names:
            raise CliUsageError(f"tool ids collide after filename sanitizing: {name!r}")
        names.add(name)
        graph = extract_graph(tool, params, args.tau_g)
        save_graph_csv(graph, os.path.join(out, f"{name}.csv"))
    print(f"wrote {len(names)} graphs to {out}")


def _cmd_score_multi(args) -> None:
    out = _require_out(args)
    paths = sorted(glob.glob(os.path.join(args.graphs, "*.csv")))
    if not paths:
        raise EmptyResultError(f"no adjacency CSVs under {args.graphs!r}")
    graphs = [load_graph_csv(p) for p in paths]
    report = multivariate_scores(graphs, convention=args.e_max, tau_g=args.tau_g)
    report_dict = {
        "method": "graph",
        "config": {"graphs": args.graphs, "tau_g": args.tau_g, "e_max": args.e_max},
        "tau_g": args.tau_g,
        "e_max": {
            "requested": args.e_max,
            "applied": report.convention,
            "value": report.e_max,
        },
        "graph_count": len(graphs),
        "flags": report.flags,
        "generated_at": _now(),
    }
    files = write_report_bundle(
        out,
        tool_scores=report.tool_scores,
        tool_ids=report.tool_ids,
        pairwise=report.pairwise,
        report=report_dict,
    )
    print(f"wrote report bundle to {out} ({len(files)} files)")


def _cmd_eval_corr(args) -> None:
    out = _require_out(args)
    scores_by_method: dict[str, dict[str, float]] = {}
    tool_scores_by_method: dict[str, dict[str, float]] = {}
    for k, bundle_dir in enumerate(args.scores):
        bundle = load_report_bundle(bundle_dir)
        method = bundle["report"].get("method") or os.path.basename(
            os.path.normpath(bundle_dir)
        )
        if method in tool_scores_by_method:
            method = f"{method}#{k}"
        tool_scores_by_method[method] = bundle["tool_scores"]
        sensor_scores = {
            s: v for s, v in bundle["sensor_scores"].items() if not np.isnan(v)
        }
        if sensor_scores:
            scores_by_method[method] = sensor_scores

    fleet = _prepare_fleet(load_tsum(args.input, args.pm), args.config)
    os.makedirs(out, exist_ok=True)
    written = []

    corr_path = os.path.join(out, "correlations.csv")
    with open(corr_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if scores_by_method:
            table = correlation_report(scores_by_method, fleet, bandwidth=args.bandwidth)
            writer.writerow(["statistic", *table.methods])
            for stat, row in zip(table.statistics, table.values):
                writer.writerow(
                    [stat, *("" if v is None else format_number(v) for v in row)]
                )
        else:
            writer.writerow(["statistic"])
    written.append(corr_path)

    methods = list(tool_scores_by_method)
    agree_path = os.path.join(out, "method_agreement.csv")
    with open(agree_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", *methods])
        for a in methods:
            row = [a]
            for b in methods:
                shared = sorted(
                    t
                    for t in tool_scores_by_method[a]
                    if t in tool_scores_by_method[b]
                    and not np.isnan(tool_scores_by_method[a][t])
                    and not np.isnan(tool_scores_by_method[b][t])
                )
                if len(shared) < 3:
                    row.append("")
                    continue
                rho = spearman(
                    np.array([tool_scores_by_method[a][t] for t in shared]),
                    np.array([tool_scores_by_method[b][t] for t in shared]),
                )
                row.append("" if rho is None else format_number(rho))
            writer.writerow(row)
    written.append(agree_path)
    print(f"wrote {', '.join(written)}")


def _cmd_eval_sweep(args) -> None:
    out = _require_out(args)
    try:
        taus = [float(t) for t in args.tau.split(",") if t.strip()]
    except ValueError:
        raise CliUsageError(f"bad --tau list {args.tau!r}") from None
    if not taus:
        raise CliUsageError("--tau needs at least one threshold")
    params = load_model(args.model)
    fleet = _prepare_fleet(load_tsum(args.input), args.config)
    hyper = params.hyper
    if args.seed is not None:
        hyper = dataclasses.replace(hyper, seed=args.seed)
    rows = tau_sweep(
        fleet,
        hyper,
        taus,
        n_mc=args.mc,
        mode=args.mc_mode,
        base_params=params if args.mc_mode == "extract" else None,
    )
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_g", "max_score", "min_score", "std_score", "n_runs"])
        for row in rows:
            writer.writerow(
                [
                    format_number(row.tau_g),
                    format_number(row.max_score),
                    format_number(row.min_score),
                    format_number(row.std_score),
                    row.n_runs,
                ]
            )
    print(f"wrote {out} ({len(rows)} thresholds, {args.mc} runs each)")


def _cmd_report_trend(args) -> None:
    out = _require_out(args)
    result = trend_report(args.reports, out, top_k=args.top_k)
    print(
        f"wrote {len(result.files)} files to {out} "
        f"(peak period {result.peak_period})"
    )


# ---------------------------------------------------------------------------
# entry


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliUsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except CliUsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EmptyResultError, NoReferenceClusterError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TttmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
