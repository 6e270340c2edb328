"""
Path Similarity Module for commscape

Bounded-length walk counting and the Feature Spacing similarity built on it.

For a source a, K_l(a, b) is the number of walks of length l from a to b
(vertices may repeat). The transition probability of length l is
K_l(a, b) divided by the total number of length-l walks leaving a, the
access value H(a, b) is the weighted sum of those probabilities over
l = 1..p_max, and Feature Spacing is H min-max normalized over all
ordered pairs a != b.
"""

from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import sparse

from graph_core import Graph, out_neighbors
from logging_config import log_performance
from utils import ArgumentError, UnknownNodeError, WalkCountOverflowError, chunk_bounds, parallel_map


logger = logging.getLogger(__name__)

DEFAULT_P_MAX = 4
EXACT_FLOAT_LIMIT = float(2 ** 53)


@dataclass(frozen=True)
class WeightScheme:
    """Per-length weights w_1 > w_2 > ... > w_p > 0."""
    p_max: int
    weights: Tuple[float, ...]

    def __post_init__(self):
        if self.p_max < 1:
            raise ArgumentError(f"p_max must be >= 1, got {self.p_max}")
        if len(self.weights) != self.p_max:
            raise ArgumentError(f"expected {self.p_max} weights, got {len(self.weights)}")
        if any(not np.isfinite(w) or w <= 0 for w in self.weights):
            raise ArgumentError("weights must be positive and finite")
        if any(later >= earlier for earlier, later in zip(self.weights, self.weights[1:])):
            raise ArgumentError("weights must be strictly decreasing")

    @property
    def total(self) -> float:
        return float(sum(self.weights))

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "WeightScheme":
        weights = tuple(float(v) for v in values)
        return cls(p_max=len(weights), weights=weights)


def default_weights(p_max: int) -> WeightScheme:
    """Geometric halving: w_l = 2^-l."""
    if p_max < 1:
        raise ArgumentError(f"p_max must be >= 1, got {p_max}")
    return WeightScheme(p_max=p_max, weights=tuple(2.0 ** -length for length in range(1, p_max + 1)))


def resolve_p_max(requested: Optional[int], n: int) -> int:
    """
    Effective maximum walk length for a graph with n nodes.

    The default is capped at n - 2 (and at least 1). An explicit request
    above that cap is honored with a warning.
    """
    cap = max(1, n - 2)
    if requested is None:
        return min(DEFAULT_P_MAX, cap)
    if requested < 1:
        raise ArgumentError(f"p_max must be >= 1, got {requested}")
    if n >= 3 and requested > cap:
        logger.warning(f"p_max={requested} exceeds n-2={cap}; using it as requested")
    return requested


@dataclass(frozen=True, eq=False)
class WalkInventory:
    """
    Walk counts from one source.

    counts[l - 1, j] is the number of length-l walks ending at node_ids[j];
    totals[l - 1] is their sum over all endpoints.
    """
    source: int
    node_ids: np.ndarray
    counts: np.ndarray
    totals: np.ndarray

    @property
    def p_max(self) -> int:
        return int(self.counts.shape[0])

    def _column(self, b: int) -> int:
        j = int(np.searchsorted(self.node_ids, b))
        if j >= self.node_ids.size or int(self.node_ids[j]) != int(b):
            raise UnknownNodeError(b)
        return j

    def count(self, length: int, b: int) -> int:
        return int(self.counts[length - 1, self._column(b)])

    def total(self, length: int) -> int:
        return int(self.totals[length - 1])

    def same_counts(self, other: "WalkInventory") -> bool:
        return (
            self.source == other.source
            and np.array_equal(self.node_ids, other.node_ids)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.totals, other.totals)
        )


def iter_walks(g: Graph, a: int, p_max: int) -> Iterator[Tuple[int, ...]]:
    """
    Yield every walk of length 1..p_max starting at a, as node-id tuples.

    Frontier walks are extended breadth-first by every outgoing arc, with
    no visited check, so walks come out ordered by length.
    """
    if p_max < 1:
        raise ArgumentError(f"p_max must be >= 1, got {p_max}")
    g.index_of(a)
    queue = deque([(int(a),)])
    while queue:
        walk = queue.popleft()
        if len(walk) - 1 >= p_max:
            continue
        for b in out_neighbors(g, walk[-1]):
            extended = walk + (b,)
            yield extended
            queue.append(extended)


def enumerate_walks(g: Graph, a: int, p_max: int) -> WalkInventory:
    """Walk inventory by explicit enumeration of every walk."""
    counts = np.zeros((p_max, g.n), dtype=np.float64)
    for walk in iter_walks(g, a, p_max):
        counts[len(walk) - 2, g.index_of(walk[-1])] += 1
    return WalkInventory(source=int(a), node_ids=g.node_ids, counts=counts, totals=counts.sum(axis=1))


def _check_exact(totals: np.ndarray, context: str) -> None:
    if totals.size and float(np.max(totals)) > EXACT_FLOAT_LIMIT:
        raise WalkCountOverflowError(
            f"walk count {float(np.max(totals)):.6g} exceeds 2^53 ({context}); lower p_max"
        )


def walk_count_dp(g: Graph, a: int, p_max: int) -> WalkInventory:
    """Walk inventory by pushing counts along out-arcs one length at a time."""
    if p_max < 1:
        raise ArgumentError(f"p_max must be >= 1, got {p_max}")
    i = g.index_of(a)
    pull = g.adjacency.T.tocsr()
    counts = np.zeros((p_max, g.n), dtype=np.float64)
    current = np.zeros(g.n, dtype=np.float64)
    current[i] = 1.0
    for length in range(p_max):
        current = pull @ current
        counts[length] = current
        _check_exact(np.array([current.sum()]), f"source {a}, length {length + 1}")
    return WalkInventory(source=int(a), node_ids=g.node_ids, counts=counts, totals=counts.sum(axis=1))


def transition_probability(inv: WalkInventory, b: int, p: int) -> float:
    """K_p(a, b) over the number of length-p walks leaving a; 0 when there are none."""
    if not 1 <= p <= inv.p_max:
        raise ArgumentError(f"length p must be in [1, {inv.p_max}], got {p}")
    total = inv.totals[p - 1]
    if total == 0:
        return 0.0
    return float(inv.counts[p - 1, inv._column(b)] / total)


def access_value(inv: WalkInventory, b: int, ws: WeightScheme) -> float:
    """H(a, b) = sum over l of w_l times the length-l transition probability."""
    if inv.p_max < ws.p_max:
        raise ArgumentError(f"inventory covers {inv.p_max} lengths, weights need {ws.p_max}")
    value = 0.0
    for length, weight in enumerate(ws.weights, start=1):
        value += weight * transition_probability(inv, b, length)
    return value


@dataclass(frozen=True, eq=False)
class FeatureSpacingMatrix:
    """
    Normalized similarity rows for every node against a set of target columns.

    values[i, j] is the Feature Spacing from node_ids[i] to target_ids[j];
    entries where the two ids coincide are 0 and excluded from normalization.
    h_values holds the raw access values.
    """
    node_ids: np.ndarray
    target_ids: np.ndarray
    values: np.ndarray
    h_values: np.ndarray
    h_min: float
    h_max: float
    degenerate: bool
    weights: WeightScheme
    symmetric: bool = False

    @property
    def is_full(self) -> bool:
        return np.array_equal(self.node_ids, self.target_ids)

    def similarity(self, a: int, b: int) -> float:
        """d(a, b)."""
        i = int(np.searchsorted(self.node_ids, a))
        if i >= self.node_ids.size or int(self.node_ids[i]) != int(a):
            raise UnknownNodeError(a)
        matches = np.flatnonzero(self.target_ids == int(b))
        if matches.size == 0:
            raise UnknownNodeError(b)
        return float(self.values[i, matches[0]])

    def metadata(self) -> Dict[str, object]:
        return {
            "p_max": self.weights.p_max,
            "weights": list(self.weights.weights),
            "h_min": self.h_min,
            "h_max": self.h_max,
            "degenerate": self.degenerate,
            "symmetric": self.symmetric,
            "n": int(self.node_ids.size),
            "targets": int(self.target_ids.size),
        }


def _walk_totals(adjacency: sparse.csr_matrix, p_max: int) -> np.ndarray:
    """totals[l - 1, i]: number of length-l walks leaving node i."""
    n = adjacency.shape[0]
    totals = np.zeros((p_max, n), dtype=np.float64)
    current = np.ones(n, dtype=np.float64)
    for length in range(p_max):
        current = adjacency @ current
        totals[length] = current
    _check_exact(totals, "walk totals")
    return totals


def _weighted_access(
    operator: sparse.csr_matrix,
    seeds: np.ndarray,
    totals: np.ndarray,
    ws: WeightScheme,
    divide_by_rows: bool,
) -> np.ndarray:
    """
    Access values for a block of seed nodes.

    With divide_by_rows the block is H[:, seeds] (columns of A^l, each row
    divided by its own totals); otherwise it is H[seeds, :] transposed
    (rows of A^l read as columns, divided by the seeds' totals).
    """
    n = operator.shape[0]
    current = np.zeros((n, seeds.size), dtype=np.float64)
    current[seeds, np.arange(seeds.size)] = 1.0
    result = np.zeros((n, seeds.size), dtype=np.float64)
    for length, weight in enumerate(ws.weights):
        current = np.asarray(operator @ current)
        denominator = totals[length][:, None] if divide_by_rows else totals[length][seeds][None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            probability = np.where(denominator > 0, current / np.where(denominator > 0, denominator, 1.0), 0.0)
        result += weight * probability
    return result


def _access_columns(
    g: Graph,
    ws: WeightScheme,
    targets: np.ndarray,
    symmetrize: bool,
    block_size: int,
    threads: int,
) -> np.ndarray:
    """Raw H for every node (rows) against the target indices (columns)."""
    adjacency = g.adjacency
    totals = _walk_totals(adjacency, ws.p_max)
    pull = adjacency.T.tocsr() if symmetrize else None
    blocks = [targets[list(bounds)] for bounds in chunk_bounds(targets.size, block_size)]

    def compute(block: np.ndarray) -> np.ndarray:
        columns = _weighted_access(adjacency, block, totals, ws, divide_by_rows=True)
        if symmetrize:
            reverse = _weighted_access(pull, block, totals, ws, divide_by_rows=False)
            columns = (columns + reverse) / 2.0
        return columns

    parts = parallel_map(compute, blocks, threads)
    if not parts:
        return np.zeros((g.n, 0), dtype=np.float64)
    return np.hstack(parts)


def _normalize(
    g: Graph,
    h: np.ndarray,
    targets: np.ndarray,
    ws: WeightScheme,
    symmetric: bool,
) -> FeatureSpacingMatrix:
    self_pair = np.zeros(h.shape, dtype=bool)
    self_pair[targets, np.arange(targets.size)] = True
    pool = h[~self_pair]

    if pool.size == 0:
        h_min = h_max = 0.0
    else:
        h_min = float(pool.min())
        h_max = float(pool.max())

    degenerate = not h_max > h_min
    if degenerate:
        values = np.zeros(h.shape, dtype=np.float64)
        logger.warning(f"Feature Spacing is degenerate: every access value equals {h_max:.6g}")
    else:
        values = np.clip((h - h_min) / (h_max - h_min), 0.0, 1.0)
        values[self_pair] = 0.0

    return FeatureSpacingMatrix(
        node_ids=g.node_ids,
        target_ids=g.node_ids[targets],
        values=values,
        h_values=h,
        h_min=h_min,
        h_max=h_max,
        degenerate=degenerate,
        weights=ws,
        symmetric=symmetric,
    )


@log_performance("feature_spacing_matrix")
def feature_spacing_matrix(
    g: Graph,
    ws: WeightScheme,
    symmetrize: bool = False,
    block_size: int = 256,
    threads: int = 1,
) -> FeatureSpacingMatrix:
    """
    Full n x n Feature Spacing matrix.

    Args:
        g: Graph with at least two nodes
        ws: Weight scheme; its p_max bounds the walk length
        symmetrize: Average H(a, b) and H(b, a) before normalizing
        block_size: Target columns per work unit
        threads: Worker cap; the result does not depend on it

    Raises:
        ArgumentError: If the graph has fewer than two nodes
    """
    if g.n < 2:
        raise ArgumentError(f"Feature Spacing needs at least 2 nodes, got {g.n}")
    targets = np.arange(g.n, dtype=np.int64)
    h = _access_columns(g, ws, targets, symmetrize, block_size, threads)
    logger.debug(f"Computed {g.n}x{g.n} access values with p_max={ws.p_max}")
    return _normalize(g, h, targets, ws, symmetrize)


@log_performance("feature_spacing_to_landmarks")
def feature_spacing_to_landmarks(
    g: Graph,
    ws: WeightScheme,
    landmarks: Sequence[int],
    symmetrize: bool = False,
    block_size: int = 256,
    threads: int = 1,
) -> FeatureSpacingMatrix:
    """
    Feature Spacing from every node to each landmark.

    Normalization uses the extremes over the computed entries only.
    """
    if len(landmarks) == 0:
        raise ArgumentError("landmark set must not be empty")
    if len(set(int(v) for v in landmarks)) != len(landmarks):
        raise ArgumentError("landmark ids must be distinct")
    targets = g.indices_of(landmarks)
    h = _access_columns(g, ws, targets, symmetrize, block_size, threads)
    logger.debug(f"Computed access values to {targets.size} landmarks with p_max={ws.p_max}")
    return _normalize(g, h, targets, ws, symmetrize)


def list_walks(g: Graph, a: int, p_max: int, limit: Optional[int] = None) -> List[List[int]]:
    """Walks from a as lists, at most limit of them."""
    walks: List[List[int]] = []
    for walk in iter_walks(g, a, p_max):
        if limit is not None and len(walks) >= limit:
            break
        walks.append(list(walk))
    return walks
