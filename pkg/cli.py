#!/usr/bin/env python3
"""
Command-line entry point for commscape.

Subcommands: stats, similarity, cluster, detect, evaluate, quality, synth.
Machine reports go to --output (standard output by default) as canonical
JSON; logs go to standard error; timings go to a <output>.run.json side
file so that reports stay byte-identical between runs.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from clustering import default_width, lloyd_kmeans, pruned_kmeans, seed_centroids
from community_pipeline import (
    PipelineConfig,
    community_count_error,
    cross_cluster_matrix,
    evaluate_batch,
    load_communities,
    parse_manifest,
    planted_partition_graph,
    reference_report,
    run_detection,
    select_landmarks,
    validate_partition,
)
from csv_processor import CSVProcessor
from graph_core import catalog_entry, graph_stats, load_edge_list, write_edge_list
from logging_config import setup_logging
from monitoring import get_monitor, monitor_performance
from path_similarity import (
    WeightScheme,
    default_weights,
    feature_spacing_matrix,
    feature_spacing_to_landmarks,
    list_walks,
    resolve_p_max,
)
from quality_scoring import (
    FEATURE_NAMES,
    SeparationSpec,
    cluster_customers,
    customers_frame,
    feature_impact,
    load_customers,
    reference_impact_report,
    standardize,
    synth_customers,
)
from utils import (
    ArgumentError,
    ConfigurationManager,
    ErrorHandler,
    UsageError,
    open_binary,
    write_report,
)


logger = logging.getLogger(__name__)

# flags that never change a result and so stay out of the echoed config
NON_RESULT_KEYS = frozenset({
    "command", "handler", "threads", "log_level", "config", "output", "metadata",
    "labels_output", "partition_output", "csv", "plot_data", "assignments_output",
    "communities_output",
})


def _weights_arg(text: str) -> Tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("at least one weight is required")
    return values


def _sizes_arg(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _separation_arg(text: str) -> Tuple[str, float]:
    name, sep, gap = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected FEATURE=GAP, got {text!r}")
    try:
        return name.strip(), float(gap)
    except ValueError:
        raise argparse.ArgumentTypeError(f"gap must be a number, got {gap!r}")


def _common_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    parent.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: COMMSCAPE_THREADS, else CPU count)")
    parent.add_argument("--config", default=None, help="JSON file of flag defaults; explicit flags win")
    parent.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="log level for standard error (default: per APP_ENV)")
    parent.add_argument("--output", "-o", default="-", help="report destination, '-' for standard output")
    return parent


def _add_graph_flags(parser: argparse.ArgumentParser, walks: bool = True) -> None:
    parser.add_argument("--edges", required=True, help="SNAP edge list (.gz accepted)")
    parser.add_argument("--directed", action="store_true", help="read arcs as directed instead of both ways")
    if walks:
        parser.add_argument("--p", type=int, default=None, help="maximum walk length (default: 4, capped at n-2)")
        parser.add_argument("--weights", type=_weights_arg, default=None,
                            help="comma-separated strictly decreasing weights (default: 2^-l)")
        parser.add_argument("--symmetrize", action="store_true", help="average both walk directions")


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    """Top-level parser plus each subcommand parser by name."""
    parent = _common_parent()
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="commscape",
        description="Walk-based node similarity, pruned k-means and community detection.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    commands: Dict[str, argparse.ArgumentParser] = {}

    stats = sub.add_parser("stats", parents=[parent], formatter_class=formatter, help="graph size and degree summary")
    _add_graph_flags(stats, walks=False)
    stats.set_defaults(handler=cmd_stats)
    commands["stats"] = stats

    similarity = sub.add_parser("similarity", parents=[parent], formatter_class=formatter,
                                help="Feature Spacing matrix as CSV")
    _add_graph_flags(similarity)
    similarity.add_argument("--landmarks", type=int, default=None,
                            help="sample this many landmark columns instead of the full matrix")
    similarity.add_argument("--metadata", default=None,
                            help="metadata JSON path (default: <output>.meta.json)")
    similarity.add_argument("--list-walks", type=int, default=None, metavar="NODE",
                            help="list the walks from NODE instead of computing the matrix")
    similarity.add_argument("--walk-limit", type=int, default=1000, help="maximum walks listed")
    similarity.set_defaults(handler=cmd_similarity)
    commands["similarity"] = similarity

    cluster = sub.add_parser("cluster", parents=[parent], formatter_class=formatter, help="k-means over a CSV point set")
    cluster.add_argument("--points", required=True, help="CSV, one row per point")
    cluster.add_argument("--id-column", default=None, help="column holding point ids")
    cluster.add_argument("--k", type=int, required=True, help="number of clusters")
    cluster.add_argument("--width", type=float, default=None, help="interval width (default: diagonal/(16k))")
    cluster.add_argument("--max-iter", type=int, default=100, help="maximum iterations")
    cluster.add_argument("--variant", choices=["pruned", "lloyd"], default="pruned", help="k-means variant")
    cluster.add_argument("--shadow", action="store_true", help="cross-check pruning with full reassignment")
    cluster.add_argument("--labels-output", default=None, help="CSV of id,label")
    cluster.set_defaults(handler=cmd_cluster)
    commands["cluster"] = cluster

    detect = sub.add_parser("detect", parents=[parent], formatter_class=formatter, help="detect communities in a graph")
    _add_graph_flags(detect)
    detect.add_argument("--communities", default=None, help="ground-truth communities for the error row")
    detect.add_argument("--communities-format", choices=["cmty", "labels"], default="cmty",
                        help="one community per line, or 'node label' lines")
    mode = detect.add_mutually_exclusive_group()
    mode.add_argument("--k", type=int, default=None, help="fixed community count")
    mode.add_argument("--auto-k", action="store_true", help="choose k by penalized bisection (the default)")
    detect.add_argument("--landmarks", type=int, default=128, help="landmark columns per node")
    detect.add_argument("--lambda", dest="lam", type=float, default=1.0, help="penalty per added cluster")
    detect.add_argument("--max-depth", type=int, default=None, help="bisection depth limit")
    detect.add_argument("--n-init", type=int, default=3, help="2-means restarts per bisection")
    detect.add_argument("--width", type=float, default=None, help="interval width for pruned k-means")
    detect.add_argument("--max-iter", type=int, default=100, help="maximum k-means iterations")
    detect.add_argument("--cross-similarity", action="store_true", help="include the community similarity table")
    detect.add_argument("--partition-output", default=None, help="CSV of node,community")
    detect.set_defaults(handler=cmd_detect)
    commands["detect"] = detect

    evaluate = sub.add_parser("evaluate", parents=[parent], formatter_class=formatter,
                              help="community-count error over a dataset manifest")
    source = evaluate.add_mutually_exclusive_group(required=True)
    source.add_argument("--manifest", default=None, help="JSON array of datasets")
    source.add_argument("--reference-table", action="store_true", help="evaluate the published counts")
    evaluate.add_argument("--csv", default=None, help="CSV of name,true,found,error_pct")
    evaluate.add_argument("--plot-data", default=None, help="CSV of name,true,found")
    evaluate.set_defaults(handler=cmd_evaluate)
    commands["evaluate"] = evaluate

    quality = sub.add_parser("quality", parents=[parent], formatter_class=formatter,
                             help="cluster customers and score feature impact")
    qsource = quality.add_mutually_exclusive_group(required=True)
    qsource.add_argument("--customers", default=None, help="customer CSV")
    qsource.add_argument("--reference", action="store_true", help="emit the published impacts as a report")
    quality.add_argument("--k", type=int, default=2, help="number of customer clusters")
    quality.add_argument("--width", type=float, default=None, help="interval width for pruned k-means")
    quality.add_argument("--max-iter", type=int, default=100, help="maximum k-means iterations")
    quality.add_argument("--n-init", type=int, default=10, help="seeded k-means restarts; the best objective wins")
    quality.add_argument("--plot-data", default=None, help="CSV of feature,name,impact_pct")
    quality.add_argument("--assignments-output", default=None, help="CSV of customer_id,label")
    quality.set_defaults(handler=cmd_quality)
    commands["quality"] = quality

    synth = sub.add_parser("synth", parents=[parent], formatter_class=formatter, help="generate synthetic inputs")
    synth.add_argument("--kind", choices=["customers", "graph"], required=True, help="what to generate")
    synth.add_argument("--n", type=int, default=200, help="customers, or total nodes when --sizes is absent")
    synth.add_argument("--clusters", type=int, default=2, help="planted clusters")
    synth.add_argument("--separate", type=_separation_arg, action="append", default=[], metavar="FEATURE=GAP",
                       help="shift FEATURE by GAP per cluster (repeatable)")
    synth.add_argument("--noise", type=float, default=1.0, help="noise scale for customers")
    synth.add_argument("--features", default=None, help="comma-separated feature subset (default: all twelve)")
    synth.add_argument("--sizes", type=_sizes_arg, default=None, help="comma-separated block sizes")
    synth.add_argument("--p-in", type=float, default=0.9, help="edge probability inside a block")
    synth.add_argument("--p-out", type=float, default=0.02, help="edge probability across blocks")
    synth.add_argument("--directed", action="store_true", help="generate arcs instead of edges")
    synth.add_argument("--communities-output", default=None, help="write planted blocks as a community file")
    synth.set_defaults(handler=cmd_synth)
    commands["synth"] = synth

    return parser, commands


def _resolved_config(args: argparse.Namespace) -> Dict[str, Any]:
    config = {}
    for key, value in sorted(vars(args).items()):
        if key in NON_RESULT_KEYS:
            continue
        if key == "separate":
            value = [list(item) for item in value]
        config[key] = list(value) if isinstance(value, tuple) else value
    return config


def _input_path(path: Optional[str], flag: str) -> Path:
    if path is None:
        raise UsageError("input file is required", flag=flag)
    resolved = Path(path)
    if not resolved.is_file():
        raise UsageError(f"no such file: {path}", flag=flag)
    return resolved


def _side_path(output: str, suffix: str) -> Optional[Path]:
    if output in (None, "-"):
        return None
    return Path(f"{output}{suffix}")


def _threads(args: argparse.Namespace, config_manager: ConfigurationManager) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError(f"must be >= 1, got {args.threads}", flag="--threads")
        return args.threads
    return config_manager.default_threads()


@monitor_performance("load_graph")
def _load_graph(args: argparse.Namespace):
    path = _input_path(args.edges, "--edges")
    with open_binary(path) as stream:
        return load_edge_list(stream, directed=args.directed)


def _weight_scheme(args: argparse.Namespace, n: int) -> WeightScheme:
    if args.weights is not None:
        if args.p is not None and args.p != len(args.weights):
            raise UsageError(f"{len(args.weights)} weights given but --p is {args.p}", flag="--weights")
        try:
            scheme = WeightScheme.from_values(args.weights)
        except ArgumentError as e:
            raise UsageError(str(e), flag="--weights") from None
        resolve_p_max(scheme.p_max, n)
        return scheme
    return default_weights(resolve_p_max(args.p, n))


def cmd_stats(args, context: "ApplicationManager") -> Dict[str, Any]:
    graph = _load_graph(args)
    report = {"command": "stats", "config": _resolved_config(args), "stats": graph_stats(graph).to_dict()}
    entry = catalog_entry(Path(args.edges).name.split(".")[0])
    if entry is not None:
        report["catalog"] = {"name": entry.name, "nodes": entry.nodes, "edges": entry.edges,
                             "communities": entry.communities}
    return report


def cmd_similarity(args, context: "ApplicationManager") -> Optional[Dict[str, Any]]:
    graph = _load_graph(args)
    ws = _weight_scheme(args, graph.n)

    if args.list_walks is not None:
        walks = list_walks(graph, args.list_walks, ws.p_max, limit=args.walk_limit)
        return {"command": "similarity", "config": _resolved_config(args), "source": args.list_walks,
                "p_max": ws.p_max, "walks": walks, "listed": len(walks)}

    block = context.config_manager.walk_block_size()
    if args.landmarks is not None:
        if args.landmarks < 1:
            raise UsageError(f"must be >= 1, got {args.landmarks}", flag="--landmarks")
        landmarks = select_landmarks(graph, args.landmarks, args.seed)
        matrix = feature_spacing_to_landmarks(graph, ws, landmarks, symmetrize=args.symmetrize,
                                              block_size=block, threads=context.threads)
    else:
        matrix = feature_spacing_matrix(graph, ws, symmetrize=args.symmetrize,
                                        block_size=block, threads=context.threads)

    metadata = dict(matrix.metadata(), config=_resolved_config(args))
    sink = args.metadata or _side_path(args.output, ".meta.json")
    context.csv_processor.write_feature_spacing(matrix, args.output)
    if sink is not None:
        write_report(metadata, sink)
    return None


def cmd_cluster(args, context: "ApplicationManager") -> Dict[str, Any]:
    points = context.csv_processor.read_point_set(_input_path(args.points, "--points"), args.id_column)
    if not 1 <= args.k <= points.n_pts:
        raise UsageError(f"must be in [1, {points.n_pts}], got {args.k}", flag="--k")
    if args.variant == "pruned" and args.k < 2:
        logger.info("k=1 runs Lloyd k-means")
    init = seed_centroids(points, args.k, args.seed)
    chunk = context.config_manager.assign_chunk_size()
    if args.variant == "lloyd" or args.k == 1:
        result = lloyd_kmeans(points, init, max_iter=args.max_iter, chunk_size=chunk, threads=context.threads)
        width = None
    else:
        width = args.width if args.width is not None else default_width(points, args.k)
        result = pruned_kmeans(points, init, width=width, max_iter=args.max_iter, shadow=args.shadow,
                               chunk_size=chunk, threads=context.threads)

    if args.labels_output:
        context.csv_processor.write_labels(points.ids, result.assignment.labels, args.labels_output)

    return {
        "command": "cluster",
        "config": _resolved_config(args),
        "n_pts": points.n_pts,
        "d": points.d,
        "k": args.k,
        "width": width,
        "iterations": result.iterations,
        "objective": result.assignment.objective,
        "sizes": np.bincount(result.assignment.labels, minlength=args.k).tolist(),
        "centroids": result.centroids.centers.tolist(),
        "history": [stats.to_dict() for stats in result.history],
        "total_visits": result.total_visits,
        "shadow_violations": result.shadow_violations if args.shadow else None,
    }


def cmd_detect(args, context: "ApplicationManager") -> Dict[str, Any]:
    graph = _load_graph(args)
    truth = None
    if args.communities is not None:
        truth = load_communities(_input_path(args.communities, "--communities"), args.communities_format)

    config = PipelineConfig(
        p_max=args.p,
        weights=args.weights,
        landmarks=args.landmarks,
        k=args.k,
        lam=args.lam,
        seed=args.seed,
        width=args.width,
        max_iter=args.max_iter,
        max_depth=args.max_depth,
        n_init=args.n_init,
        symmetrize=args.symmetrize,
        threads=context.threads,
        block_size=context.config_manager.walk_block_size(),
        chunk_size=context.config_manager.assign_chunk_size(),
    )
    validation = config.validate()
    if not validation.is_valid:
        raise UsageError("; ".join(validation.errors))
    if args.k is not None and args.k > graph.n:
        raise UsageError(f"must be <= the {graph.n} nodes, got {args.k}", flag="--k")

    result = run_detection(graph, config)
    partition = result.partition
    validation = validate_partition(partition, graph)

    report: Dict[str, Any] = {
        "command": "detect",
        "config": dict(_resolved_config(args), pipeline=config.report_dict()),
        "graph": graph_stats(graph).to_dict(),
        "p_max": result.weights.p_max,
        "weights": list(result.weights.weights),
        "k_found": partition.k_found,
        "community_sizes": [len(c) for c in partition.communities],
        "splits": result.splits,
        "landmark_count": len(result.landmark_ids),
        "partition_valid": validation.is_valid,
        "partition_violation": validation.first_error,
        "warnings": list(result.warnings),
    }
    if truth is not None:
        report["true_count"] = truth.count
        report["found_count"] = partition.k_found
        report["error_pct"] = community_count_error(truth.count, partition.k_found)

    if args.cross_similarity:
        matrix = result.matrix
        if matrix is None or not matrix.is_full:
            matrix = feature_spacing_matrix(graph, result.weights, symmetrize=args.symmetrize,
                                            block_size=config.block_size, threads=context.threads)
        report["cross_similarity"] = cross_cluster_matrix(partition, matrix)

    if args.partition_output:
        context.csv_processor.write_partition(partition.as_lists(), args.partition_output)
    return report


def cmd_evaluate(args, context: "ApplicationManager") -> Dict[str, Any]:
    if args.reference_table:
        evaluation = reference_report()
    else:
        manifest = _input_path(args.manifest, "--manifest")
        entries = parse_manifest(manifest.read_text(encoding="utf-8"), manifest.parent)
        base = PipelineConfig(block_size=context.config_manager.walk_block_size(),
                              chunk_size=context.config_manager.assign_chunk_size())
        evaluation = evaluate_batch(entries, threads=context.threads, base=base)

    if args.csv:
        context.csv_processor.write_table(evaluation.table_rows(), ["name", "true", "found", "error_pct"], args.csv)
    if args.plot_data:
        context.csv_processor.write_table(evaluation.plot_rows(), ["name", "true", "found"], args.plot_data)
    return dict(evaluation.to_dict(), command="evaluate", config=_resolved_config(args))


def cmd_quality(args, context: "ApplicationManager") -> Dict[str, Any]:
    if args.reference:
        impact = reference_impact_report()
        report = dict(impact.to_dict(), command="quality", config=_resolved_config(args), reference=True)
    else:
        with open_binary(_input_path(args.customers, "--customers")) as stream:
            records = load_customers(stream, context.csv_processor)
        if not records:
            raise UsageError("customer file has no rows", flag="--customers")
        if not 1 <= args.k <= len(records):
            raise UsageError(f"must be in [1, {len(records)}], got {args.k}", flag="--k")
        _, standardization = standardize(records)
        assignment = cluster_customers(records, args.k, args.seed, width=args.width, max_iter=args.max_iter,
                                       n_init=args.n_init)
        if args.assignments_output:
            context.csv_processor.write_labels([r.customer_id for r in records], assignment.labels,
                                               args.assignments_output)
        if np.unique(assignment.labels).size < 2:
            raise ArgumentError("feature impact needs at least 2 non-empty clusters; raise --k")
        impact = feature_impact(records, assignment, standardization)
        report = dict(impact.to_dict(), command="quality", config=_resolved_config(args), reference=False,
                      objective=assignment.objective, customers=len(records),
                      cluster_sizes=np.bincount(assignment.labels, minlength=args.k).tolist())

    if args.plot_data:
        context.csv_processor.write_table(impact.plot_rows(), ["feature", "name", "impact_pct"], args.plot_data)
    return report


def cmd_synth(args, context: "ApplicationManager") -> Optional[Dict[str, Any]]:
    if args.output in (None, "-"):
        raise UsageError("synth needs a file destination", flag="--output")

    if args.kind == "customers":
        features = tuple(f.strip() for f in args.features.split(",")) if args.features else FEATURE_NAMES
        spec = SeparationSpec(n_clusters=args.clusters, separation=dict(args.separate),
                              noise_scale=args.noise, features=features)
        try:
            records = synth_customers(args.seed, args.n, spec)
        except ArgumentError as e:
            raise UsageError(str(e), flag="--separate") from None
        context.csv_processor.write_frame(customers_frame(records), args.output)
        return None

    sizes = args.sizes
    if sizes is None:
        if args.clusters < 1 or args.n < args.clusters:
            raise UsageError("need --n >= --clusters >= 1", flag="--n")
        sizes = tuple(len(part) for part in np.array_split(np.arange(args.n), args.clusters))
    graph, truth = planted_partition_graph(sizes, args.p_in, args.p_out, args.seed, directed=args.directed)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as stream:
        write_edge_list(graph, stream)
    if args.communities_output:
        with open(args.communities_output, "w", encoding="utf-8", newline="\n") as stream:
            for community in truth.communities:
                stream.write("\t".join(str(v) for v in sorted(community)) + "\n")
    return None


class ApplicationManager:
    """
    Wires configuration, logging, error handling and IO helpers for one
    command invocation.
    """

    def __init__(self, config_manager: Optional[ConfigurationManager] = None):
        self.config_manager = config_manager or ConfigurationManager()
        self.error_handler = ErrorHandler(self.config_manager)
        self.csv_processor = CSVProcessor(self.config_manager.csv_chunk_size())
        self.monitor = get_monitor()
        self.threads = 1

    def _initialize_logging(self, log_level: Optional[str]) -> None:
        setup_logging(
            environment=self.config_manager.environment(),
            log_level=log_level or self.config_manager.get_config_value("LOG_LEVEL"),
            log_dir=self.config_manager.get_config_value("LOG_DIR"),
            force=True,
        )
        validation = self.config_manager.validate_configuration()
        for warning in validation.warnings:
            logger.warning(warning)
        if not validation.is_valid:
            raise UsageError(self.error_handler.handle_validation_error(validation, "environment"))
        logger.debug(f"Configuration: {self.config_manager.get_safe_config_summary()}")

    def parse(self, argv: Sequence[str]) -> argparse.Namespace:
        """Parse argv, applying --config defaults underneath explicit flags."""
        parser, commands = build_parser()
        args = parser.parse_args(list(argv))
        if args.config:
            path = _input_path(args.config, "--config")
            try:
                overrides = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise UsageError(f"not valid JSON: {e}", flag="--config") from None
            if not isinstance(overrides, dict):
                raise UsageError("must hold a JSON object", flag="--config")
            subparser = commands[args.command]
            known = {action.dest for action in subparser._actions}
            defaults = {}
            for key, value in overrides.items():
                dest = "lam" if key == "lambda" else key.replace("-", "_")
                if dest not in known or dest in ("config", "help"):
                    raise UsageError(f"unknown setting {key!r}", flag="--config")
                defaults[dest] = tuple(value) if isinstance(value, list) else value
            subparser.set_defaults(**defaults)
            args = parser.parse_args(list(argv))
        return args

    def run(self, argv: Sequence[str]) -> int:
        self.monitor.reset()
        command = argv[0] if argv else ""
        exit_code = ErrorHandler.EXIT_OK
        args = None
        try:
            args = self.parse(argv)
            command = args.command
            self._initialize_logging(args.log_level)
            self.threads = _threads(args, self.config_manager)
            logger.info(f"Running {command} with {self.threads} threads")
            report = monitor_performance(command)(args.handler)(args, self)
            if report is not None:
                write_report(report, args.output)
        except SystemExit as e:
            exit_code = e.code if isinstance(e.code, int) else ErrorHandler.EXIT_USAGE_ERROR
        except Exception as e:
            exit_code = self.error_handler.handle(e, command or "commscape")

        if args is not None:
            side = _side_path(args.output, ".run.json")
            if side is not None and side.parent.exists():
                self.monitor.write_run_report(side, command, self.threads, exit_code)
        return exit_code


def run(argv: Sequence[str]) -> int:
    """Run one command; returns the process exit code."""
    return ApplicationManager().run(argv)


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
