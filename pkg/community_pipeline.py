"""
Community Pipeline Module for commscape

End-to-end community detection: embed every node as its row of Feature
Spacing values against a landmark set, cluster the rows with pruned
k-means (fixed k, or recursive bisection with a penalized cost when k is
left open), and evaluate found community counts against ground truth.
"""

from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal, ROUND_HALF_EVEN, ROUND_HALF_UP
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union
import json
import logging
import math

import networkx as nx
import numpy as np

from clustering import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_MAX_ITER,
    PointSet,
    run_kmeans,
)
from graph_core import (
    Graph,
    GroundTruthCommunities,
    connected_components,
    induced_subgraph,
    load_edge_list,
    load_ground_truth,
    load_node_labels,
)
from logging_config import app_logger, log_performance
from path_similarity import (
    FeatureSpacingMatrix,
    WeightScheme,
    default_weights,
    feature_spacing_matrix,
    feature_spacing_to_landmarks,
    resolve_p_max,
)
from utils import (
    ArgumentError,
    CommscapeError,
    ValidationResult,
    derive_seed,
    open_binary,
    parallel_map,
)


logger = logging.getLogger(__name__)

PUBLISHED_SUMMARY_ERROR = "9.82"
TWO_PLACES = Decimal("0.01")


@dataclass(frozen=True)
class Partition:
    """Disjoint communities ordered by their smallest node id."""
    communities: Tuple[frozenset, ...]

    @property
    def k_found(self) -> int:
        return len(self.communities)

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[int]]) -> "Partition":
        communities = [frozenset(int(v) for v in group) for group in groups]
        communities = [c for c in communities if c]
        communities.sort(key=min)
        return cls(communities=tuple(communities))

    @classmethod
    def from_labels(cls, node_ids: Sequence[int], labels: Sequence[int]) -> "Partition":
        groups: Dict[int, List[int]] = {}
        for node, label in zip(node_ids, labels):
            groups.setdefault(int(label), []).append(int(node))
        return cls.from_groups(groups.values())

    def label_of(self) -> Dict[int, int]:
        return {node: index for index, community in enumerate(self.communities) for node in community}

    def as_lists(self) -> List[List[int]]:
        return [sorted(community) for community in self.communities]


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved settings for one detection run."""
    p_max: Optional[int] = None
    weights: Optional[Tuple[float, ...]] = None
    landmarks: int = 128
    k: Optional[int] = None
    lam: float = 1.0
    seed: int = 0
    width: Optional[float] = None
    max_iter: int = DEFAULT_MAX_ITER
    max_depth: Optional[int] = None
    n_init: int = 3
    symmetrize: bool = False
    threads: int = 1
    block_size: int = 256
    chunk_size: int = DEFAULT_CHUNK_SIZE

    def validate(self) -> ValidationResult:
        errors = []
        if self.p_max is not None and self.p_max < 1:
            errors.append(f"p_max must be >= 1, got {self.p_max}")
        if self.weights is not None and self.p_max is not None and len(self.weights) != self.p_max:
            errors.append(f"{len(self.weights)} weights given for p_max={self.p_max}")
        if self.landmarks < 1:
            errors.append(f"landmarks must be >= 1, got {self.landmarks}")
        if self.k is not None and self.k < 1:
            errors.append(f"k must be >= 1, got {self.k}")
        if self.lam < 0:
            errors.append(f"lambda must be >= 0, got {self.lam}")
        if self.width is not None and not self.width > 0:
            errors.append(f"width must be > 0, got {self.width}")
        if self.max_iter < 1:
            errors.append(f"max_iter must be >= 1, got {self.max_iter}")
        if self.max_depth is not None and self.max_depth < 0:
            errors.append(f"max_depth must be >= 0, got {self.max_depth}")
        if self.n_init < 1:
            errors.append(f"n_init must be >= 1, got {self.n_init}")
        return ValidationResult(is_valid=not errors, errors=errors)

    def weight_scheme(self, n: int) -> WeightScheme:
        if self.weights is not None:
            scheme = WeightScheme.from_values(self.weights)
            resolve_p_max(scheme.p_max, n)
            return scheme
        return default_weights(resolve_p_max(self.p_max, n))

    def report_dict(self) -> Dict[str, Any]:
        """Settings that determine the result (worker count excluded)."""
        data = asdict(self)
        data.pop("threads")
        data["weights"] = list(self.weights) if self.weights is not None else None
        return data


@dataclass
class DetectionResult:
    partition: Partition
    weights: WeightScheme
    landmark_ids: List[int] = field(default_factory=list)
    splits: int = 0
    matrix: Optional[FeatureSpacingMatrix] = None
    warnings: List[str] = field(default_factory=list)


def select_landmarks(g: Graph, count: int, seed: int) -> List[int]:
    """
    Degree-stratified landmark sample.

    Nodes are ordered by out-degree (ties by id), cut into count strata of
    near-equal size, and one node is drawn from each stratum.
    """
    if count < 1:
        raise ArgumentError(f"landmark count must be >= 1, got {count}")
    if count >= g.n:
        return [int(v) for v in g.node_ids]
    order = np.argsort(g.out_degrees(), kind="stable")
    rng = np.random.default_rng(seed)
    picks = [int(stratum[rng.integers(stratum.size)]) for stratum in np.array_split(order, count)]
    return sorted(int(g.node_ids[i]) for i in picks)


def _embed(g: Graph, ws: WeightScheme, landmark_count: int, seed: int, config: PipelineConfig):
    if g.n == 0:
        raise ArgumentError("cannot embed an empty graph")
    if landmark_count < 1:
        raise ArgumentError(f"landmark count must be >= 1, got {landmark_count}")
    if g.n == 1:
        return PointSet(np.zeros((1, 1)), [int(g.node_ids[0])]), None, [int(g.node_ids[0])]
    if landmark_count >= g.n:
        matrix = feature_spacing_matrix(g, ws, symmetrize=config.symmetrize,
                                        block_size=config.block_size, threads=config.threads)
    else:
        landmarks = select_landmarks(g, landmark_count, seed)
        matrix = feature_spacing_to_landmarks(g, ws, landmarks, symmetrize=config.symmetrize,
                                              block_size=config.block_size, threads=config.threads)
    return PointSet(matrix.values, [int(v) for v in g.node_ids]), matrix, [int(v) for v in matrix.target_ids]


def embed_nodes(
    g: Graph,
    ws: WeightScheme,
    landmark_count: int,
    seed: int,
    config: Optional[PipelineConfig] = None,
) -> PointSet:
    """
    One row per node: its Feature Spacing to each landmark.

    With landmark_count >= n the rows are full matrix rows (diagonal 0).

    Raises:
        ArgumentError: For an empty graph or landmark_count < 1
    """
    points, _, _ = _embed(g, ws, landmark_count, seed, config or PipelineConfig())
    return points


def _sse(points: np.ndarray) -> float:
    residual = points - points.mean(axis=0)
    return float(np.einsum("ij,ij->", residual, residual))


def bisection_gain(sse_one: float, sse_two: float, n_rows: int, d: int, n_pts: int, lam: float) -> float:
    """
    Penalized cost of two clusters minus that of one (negative favours the split).

    Cost of k clusters: (n d / 2) ln(SSE_k / (n d)) + lam d ln(n_pts) (k - 1).
    """
    if sse_one <= 0:
        return math.inf
    if sse_two <= 0:
        return -math.inf
    return (n_rows * d / 2.0) * math.log(sse_two / sse_one) + lam * d * math.log(n_pts)


def _bisect(points: PointSet, config: PipelineConfig, seed: int) -> Tuple[List[np.ndarray], int]:
    """Recursive 2-means splitting of the rows, breadth first."""
    n_pts = points.n_pts
    d = points.d
    queue: List[Tuple[np.ndarray, int]] = [(np.arange(n_pts), 0)]
    final: List[np.ndarray] = []
    splits = 0
    attempt_counter = 0

    while queue:
        rows, depth = queue.pop(0)
        if rows.size < 2 or (config.max_depth is not None and depth >= config.max_depth):
            final.append(rows)
            continue
        block = points.points[rows]
        sse_one = _sse(block)
        if sse_one <= 0:
            final.append(rows)
            continue

        subset = PointSet(block)
        best = None
        for start in range(config.n_init):
            attempt_counter += 1
            result = run_kmeans(
                subset, 2, derive_seed(seed, attempt_counter, start),
                width=config.width, max_iter=config.max_iter,
                chunk_size=config.chunk_size, threads=config.threads,
            )
            if best is None or result.assignment.objective < best.assignment.objective:
                best = result

        labels = best.assignment.labels
        sizes = np.bincount(labels, minlength=2)
        if sizes.min() == 0:
            final.append(rows)
            continue

        gain = bisection_gain(sse_one, best.assignment.objective, rows.size, d, n_pts, config.lam)
        if gain < 0:
            splits += 1
            logger.debug(f"Split {rows.size} rows into {sizes[0]}+{sizes[1]} (gain {gain:.4g})")
            queue.append((rows[labels == 0], depth + 1))
            queue.append((rows[labels == 1], depth + 1))
        else:
            final.append(rows)

    return final, splits


@log_performance("detect_communities")
def run_detection(g: Graph, config: PipelineConfig) -> DetectionResult:
    """
    Detect communities and keep the intermediate artifacts.

    A fixed config.k clusters the whole graph in one run. Otherwise each
    weakly connected component is embedded and bisected on its own.
    """
    validation = config.validate()
    if not validation.is_valid:
        raise ArgumentError("; ".join(validation.errors))
    if g.n == 0:
        raise ArgumentError("cannot detect communities in an empty graph")

    ws = config.weight_scheme(g.n)

    if config.k is not None:
        if config.k > g.n:
            raise ArgumentError(f"k={config.k} exceeds the {g.n} nodes")
        points, matrix, landmark_ids = _embed(g, ws, config.landmarks, config.seed, config)
        if config.k == g.n:
            partition = Partition.from_groups([v] for v in points.ids)
            logger.info(f"Fixed k={config.k} equals the node count: singleton communities")
            return DetectionResult(partition, ws, landmark_ids, 0, matrix)

        warnings = []
        distinct = int(np.unique(points.points, axis=0).shape[0])
        if distinct < config.k:
            message = f"only {distinct} distinct embedding rows for k={config.k}; fewer communities are possible"
            if matrix is not None and matrix.degenerate:
                message += " (degenerate Feature Spacing)"
            logger.warning(message)
            warnings.append(message)
        result = run_kmeans(points, config.k, config.seed, width=config.width, max_iter=config.max_iter,
                            chunk_size=config.chunk_size, threads=config.threads)
        partition = Partition.from_labels(points.ids, result.assignment.labels)
        logger.info(f"Fixed k={config.k}: {partition.k_found} non-empty communities")
        return DetectionResult(partition, ws, landmark_ids, 0, matrix, warnings)

    groups: List[List[int]] = []
    landmark_ids: List[int] = []
    matrix = None
    splits = 0
    components = connected_components(g)
    for component_index, component in enumerate(components):
        if component.size == 1:
            groups.append([int(component[0])])
            continue
        sub = induced_subgraph(g, component) if len(components) > 1 else g
        component_seed = derive_seed(config.seed, component_index)
        points, component_matrix, component_landmarks = _embed(
            sub, config.weight_scheme(sub.n),
            config.landmarks, component_seed, config,
        )
        if len(components) == 1:
            matrix = component_matrix
        landmark_ids.extend(component_landmarks)
        clusters, component_splits = _bisect(points, config, component_seed)
        splits += component_splits
        ids = np.asarray(points.ids)
        groups.extend(ids[rows].tolist() for rows in clusters)

    partition = Partition.from_groups(groups)
    logger.info(
        f"Auto-k over {len(components)} components: {partition.k_found} communities after {splits} splits"
    )
    return DetectionResult(partition, ws, sorted(landmark_ids), splits, matrix)


def detect_communities(g: Graph, config: Optional[PipelineConfig] = None) -> Partition:
    """Disjoint communities covering every node of g."""
    return run_detection(g, config or PipelineConfig()).partition


def validate_partition(p: Partition, g: Graph) -> ValidationResult:
    """
    Check that p covers every node once with no empty community.

    Only the first violation is reported.
    """
    seen: Dict[int, int] = {}
    for index, community in enumerate(p.communities):
        if not community:
            return ValidationResult(False, [f"empty community: community {index} has no nodes"])
        for node in sorted(community):
            if node not in g:
                return ValidationResult(False, [f"unknown node: node {node} in community {index} is not in the graph"])
            if node in seen:
                return ValidationResult(
                    False, [f"disjointness violation: node {node} is in communities {seen[node]} and {index}"]
                )
            seen[node] = index
    for node in g.node_ids.tolist():
        if node not in seen:
            return ValidationResult(False, [f"cover violation: node {node} is in no community"])
    return ValidationResult(True, [])


def community_count_error(true_count: int, found_count: int) -> float:
    """|true - found| / true * 100, rounded half-up to 2 decimals."""
    if true_count < 1:
        raise ArgumentError(f"true community count must be >= 1, got {true_count}")
    if found_count < 0:
        raise ArgumentError(f"found community count must be >= 0, got {found_count}")
    error = Decimal(abs(int(true_count) - int(found_count)) * 100) / Decimal(int(true_count))
    return float(error.quantize(TWO_PLACES, rounding=ROUND_HALF_UP))


def average_error(rows: Sequence[Union[float, "EvaluationRow"]]) -> float:
    """Arithmetic mean of row errors to 2 decimals (half-even on the decimal values)."""
    values = [row.error_pct if isinstance(row, EvaluationRow) else row for row in rows]
    values = [v for v in values if v is not None]
    if not values:
        raise ArgumentError("average error needs at least one row")
    total = sum((Decimal(str(v)) for v in values), Decimal(0))
    return float((total / Decimal(len(values))).quantize(TWO_PLACES, rounding=ROUND_HALF_EVEN))


def _require_indices(ids: np.ndarray, nodes: Iterable[int], axis: str) -> np.ndarray:
    lookup = {int(v): j for j, v in enumerate(ids.tolist())}
    try:
        return np.asarray([lookup[int(v)] for v in nodes], dtype=np.int64)
    except KeyError as e:
        raise ArgumentError(f"similarity matrix has no {axis} for node {e.args[0]}") from None


def cross_cluster_similarity(p: Partition, sim: FeatureSpacingMatrix, x: int, y: int) -> float:
    """Sum of d(u, v) over u in community x, v in community y, u != v."""
    for index in (x, y):
        if not 0 <= index < p.k_found:
            raise ArgumentError(f"community index {index} out of range [0, {p.k_found})")
    sources = sorted(p.communities[x])
    targets = sorted(p.communities[y])
    rows = _require_indices(sim.node_ids, sources, "row")
    columns = _require_indices(sim.target_ids, targets, "column")
    block = sim.values[np.ix_(rows, columns)]
    distinct = np.asarray(sources)[:, None] != np.asarray(targets)[None, :]
    return float(block[distinct].sum())


def cross_cluster_matrix(p: Partition, sim: FeatureSpacingMatrix) -> List[List[float]]:
    return [[cross_cluster_similarity(p, sim, x, y) for y in range(p.k_found)] for x in range(p.k_found)]


def planted_partition_graph(
    sizes: Sequence[int],
    p_in: float,
    p_out: float,
    seed: int,
    directed: bool = False,
) -> Tuple[Graph, GroundTruthCommunities]:
    """Random partition graph with its planted blocks as ground truth."""
    if not sizes or any(size < 1 for size in sizes):
        raise ArgumentError("block sizes must be positive")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ArgumentError("edge probabilities must lie in [0, 1]")
    nx_graph = nx.random_partition_graph(list(sizes), p_in, p_out, seed=seed, directed=directed)
    graph = Graph.from_arcs(list(nx_graph.edges()), directed=directed, nodes=nx_graph.nodes())
    blocks = tuple(frozenset(int(v) for v in block) for block in nx_graph.graph["partition"])
    return graph, GroundTruthCommunities(communities=blocks)


@dataclass
class EvaluationRow:
    name: str
    true_count: Optional[int]
    found_count: Optional[int]
    error_pct: Optional[float]
    status: str = "ok"
    message: Optional[str] = None
    nodes: Optional[int] = None
    arcs: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EvaluationReport:
    rows: List[EvaluationRow]
    average_error_pct: Optional[float]
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [row.to_dict() for row in self.rows],
            "average_error_pct": self.average_error_pct,
            "notes": list(self.notes),
        }

    def table_rows(self) -> List[Dict[str, Any]]:
        return [
            {"name": r.name, "true": r.true_count, "found": r.found_count, "error_pct": r.error_pct}
            for r in self.rows
        ]

    def plot_rows(self) -> List[Dict[str, Any]]:
        return [{"name": r.name, "true": r.true_count, "found": r.found_count} for r in self.rows if r.status == "ok"]


REFERENCE_TABLE: Tuple[Tuple[str, int, int], ...] = (
    ("com-LiveJournal", 287_512, 275_451),
    ("com-Friendster", 957_154, 843_692),
    ("com-Orkut", 6_288_363, 5_459_713),
    ("com-YouTube", 8_385, 6_930),
    ("com-DBLP", 13_477, 12_572),
    ("com-Amazon", 75_149, 70_349),
    ("email-Eu-core", 42, 38),
    ("wiki-topcats", 17_364, 15_707),
)


def _assemble(rows: List[EvaluationRow]) -> EvaluationReport:
    ok = [row for row in rows if row.status == "ok" and row.error_pct is not None]
    average = average_error(ok) if ok else None
    notes = []
    failed = len(rows) - len(ok)
    if failed:
        notes.append(f"{failed} of {len(rows)} datasets failed and are excluded from the average")
    return EvaluationReport(rows=rows, average_error_pct=average, notes=notes)


def reference_report() -> EvaluationReport:
    """The published found/true counts run through the error arithmetic."""
    rows = [
        EvaluationRow(name, true, found, community_count_error(true, found))
        for name, true, found in REFERENCE_TABLE
    ]
    report = _assemble(rows)
    report.notes.append(
        f"the published summary quotes {PUBLISHED_SUMMARY_ERROR}% average error; "
        f"the per-dataset rows average to {report.average_error_pct:.2f}%"
    )
    return report


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    edges: Path
    communities: Path
    directed: bool = False
    communities_format: str = "cmty"
    p_max: Optional[int] = None
    landmarks: int = 128
    k: Optional[int] = None
    lam: float = 1.0
    seed: int = 0

    def config(self, base: Optional[PipelineConfig] = None) -> PipelineConfig:
        return replace(base or PipelineConfig(), p_max=self.p_max, landmarks=self.landmarks,
                       k=self.k, lam=self.lam, seed=self.seed, threads=1)


MANIFEST_KEYS = {"name", "edges", "communities", "directed", "communities_format",
                 "p_max", "landmarks", "k", "lambda", "seed"}


def parse_manifest(text: str, base_dir: Union[str, Path] = ".") -> List[DatasetEntry]:
    """
    Parse a JSON manifest: an array of dataset objects.

    Relative paths are resolved against base_dir.

    Raises:
        ArgumentError: For an empty manifest or a malformed entry
    """
    try:
        data = json.loads(text) if text.strip() else []
    except json.JSONDecodeError as e:
        raise ArgumentError(f"manifest is not valid JSON: {e}") from None
    if not isinstance(data, list):
        raise ArgumentError("manifest must be a JSON array")
    if not data:
        raise ArgumentError("empty manifest")

    base = Path(base_dir)
    entries = []
    for position, item in enumerate(data):
        if not isinstance(item, dict):
            raise ArgumentError(f"manifest entry {position} is not an object")
        missing = [key for key in ("name", "edges", "communities") if key not in item]
        if missing:
            raise ArgumentError(f"manifest entry {position} lacks {', '.join(missing)}")
        unknown = sorted(set(item) - MANIFEST_KEYS)
        if unknown:
            raise ArgumentError(f"manifest entry {position} has unknown keys {', '.join(unknown)}")
        fmt = item.get("communities_format", "cmty")
        if fmt not in ("cmty", "labels"):
            raise ArgumentError(f"manifest entry {position}: communities_format must be 'cmty' or 'labels'")
        entries.append(DatasetEntry(
            name=str(item["name"]),
            edges=base / item["edges"],
            communities=base / item["communities"],
            directed=bool(item.get("directed", False)),
            communities_format=fmt,
            p_max=_manifest_number(item, "p_max", position, None),
            landmarks=_manifest_number(item, "landmarks", position, 128),
            k=_manifest_number(item, "k", position, None),
            lam=float(_manifest_number(item, "lambda", position, 1.0, integral=False)),
            seed=_manifest_number(item, "seed", position, 0),
        ))
    return entries


def _manifest_number(item: Dict[str, Any], key: str, position: int, default: Any, integral: bool = True) -> Any:
    if key not in item or (item[key] is None and default is None):
        return default
    value = item[key]
    allowed = int if integral else (int, float)
    if isinstance(value, bool) or not isinstance(value, allowed):
        kind = "an integer" if integral else "a number"
        raise ArgumentError(f"manifest entry {position}: {key} must be {kind}, got {value!r}")
    return value


def load_communities(path: Union[str, Path], fmt: str = "cmty") -> GroundTruthCommunities:
    with open_binary(path) as stream:
        return load_node_labels(stream) if fmt == "labels" else load_ground_truth(stream)


def evaluate_entry(entry: DatasetEntry, base: Optional[PipelineConfig] = None) -> EvaluationRow:
    """Run detection on one dataset; failures become a failed row."""
    operation_logger = app_logger.create_operation_logger(entry.name)
    try:
        with open_binary(entry.edges) as stream:
            graph = load_edge_list(stream, directed=entry.directed)
        truth = load_communities(entry.communities, entry.communities_format)
        partition = detect_communities(graph, entry.config(base))
        validation = validate_partition(partition, graph)
        if not validation.is_valid:
            raise CommscapeError(validation.first_error)
        row = EvaluationRow(
            name=entry.name,
            true_count=truth.count,
            found_count=partition.k_found,
            error_pct=community_count_error(truth.count, partition.k_found),
            nodes=graph.n,
            arcs=graph.m,
        )
        operation_logger.info(f"{entry.name}: true={row.true_count} found={row.found_count} error={row.error_pct}%")
        return row
    except (CommscapeError, OSError, ValueError, TypeError) as e:
        operation_logger.error(f"{entry.name} failed: {e}")
        return EvaluationRow(entry.name, None, None, None, status="failed", message=f"{type(e).__name__}: {e}")


@log_performance("evaluate_batch")
def evaluate_batch(
    entries: Sequence[DatasetEntry],
    threads: int = 1,
    base: Optional[PipelineConfig] = None,
) -> EvaluationReport:
    """Evaluate every dataset, in parallel across datasets, rows in manifest order."""
    if not entries:
        raise ArgumentError("empty manifest")
    rows = parallel_map(lambda entry: evaluate_entry(entry, base), list(entries), threads)
    return _assemble(rows)
