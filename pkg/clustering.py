"""
Clustering Module for commscape

Lloyd k-means and an interval-pruned variant that follows exactly the same
trajectory while re-examining only the points whose assignment could have
changed.

The pruned variant buckets every point by its margin e (distance to the
second-nearest center minus distance to the nearest) into intervals of
a fixed width. Interval i starts with tag i * width, a lower bound on the
margins it holds. When centers move by at most D, no margin shrinks by more
than 2 * D, so each iteration subtracts 2 * D from every tag and only
points in intervals whose tag has reached zero are reassigned and
re-bucketed.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence
import logging

import numpy as np
from scipy.spatial.distance import cdist

from logging_config import log_performance
from utils import ArgumentError, PruningBoundViolation, chunk_bounds, parallel_map


logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 4096
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class PointSet:
    """Rows of real-valued points with opaque per-row ids."""
    points: np.ndarray
    ids: Optional[Sequence] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2:
            raise ArgumentError(f"points must be a 2-D array, got {points.ndim} dimensions")
        if points.shape[0] < 1 or points.shape[1] < 1:
            raise ArgumentError(f"point set must be non-empty, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ArgumentError("points must be finite")
        object.__setattr__(self, "points", points)
        ids = list(range(points.shape[0])) if self.ids is None else list(self.ids)
        if len(ids) != points.shape[0]:
            raise ArgumentError(f"{len(ids)} ids for {points.shape[0]} points")
        object.__setattr__(self, "ids", ids)

    @property
    def n_pts(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.points.shape[1])

    def diagonal(self) -> float:
        """Length of the bounding-box diagonal."""
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    def subset(self, rows: Sequence[int]) -> "PointSet":
        rows = list(rows)
        return PointSet(self.points[rows], [self.ids[r] for r in rows])


@dataclass(frozen=True, eq=False)
class Centroids:
    centers: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[0] < 1:
            raise ArgumentError(f"centers must be a non-empty 2-D array, got shape {centers.shape}")
        if not np.all(np.isfinite(centers)):
            raise ArgumentError("centers must be finite")
        object.__setattr__(self, "centers", centers)

    @property
    def k(self) -> int:
        return int(self.centers.shape[0])


@dataclass(frozen=True, eq=False)
class Assignment:
    labels: np.ndarray
    objective: float

    def sizes(self, k: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=k)


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    visited: int
    deviation: float
    objective: float
    changed: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "iteration": self.iteration,
            "visited": self.visited,
            "deviation": self.deviation,
            "objective": self.objective,
            "changed": self.changed,
        }


@dataclass(eq=False)
class KMeansResult:
    centroids: Centroids
    assignment: Assignment
    iterations: int
    history: List[IterationStats] = field(default_factory=list)
    shadow_violations: int = 0

    @property
    def visit_stats(self) -> List[int]:
        return [stats.visited for stats in self.history]

    @property
    def total_visits(self) -> int:
        return int(sum(self.visit_stats))


class IntervalIndex:
    """Margin intervals with decaying lower-bound tags."""

    def __init__(self, width: float, n_pts: int):
        if not width > 0:
            raise ArgumentError(f"interval width must be > 0, got {width}")
        self.width = float(width)
        self.tags: Dict[int, float] = {}
        self.membership = np.full(n_pts, -1, dtype=np.int64)
        self.last_deviation = 0.0

    def interval_of(self, margin: float) -> int:
        return int(np.floor(margin / self.width))

    def rebucket(self, rows: np.ndarray, margins: np.ndarray) -> None:
        """Place the given points into the intervals of their new margins."""
        intervals = np.floor(np.asarray(margins) / self.width).astype(np.int64)
        for interval in np.unique(intervals).tolist():
            if interval not in self.tags:
                self.tags[interval] = interval * self.width
        self.membership[rows] = intervals

    def shift(self, deviation: float) -> None:
        """Lower every tag by twice the latest center movement."""
        self.last_deviation = float(deviation)
        step = 2.0 * self.last_deviation
        for interval in self.tags:
            self.tags[interval] -= step

    def drain(self, tolerance: float = 0.0) -> np.ndarray:
        """Remove every interval whose tag is <= tolerance and return its points."""
        due = [interval for interval, tag in self.tags.items() if tag <= tolerance]
        if not due:
            return np.empty(0, dtype=np.int64)
        for interval in due:
            del self.tags[interval]
        rows = np.flatnonzero(np.isin(self.membership, due))
        self.membership[rows] = -1
        return rows


def _check_dimensions(ps: PointSet, c: Centroids) -> None:
    if c.centers.shape[1] != ps.d:
        raise ArgumentError(f"centers have {c.centers.shape[1]} dimensions, points have {ps.d}")


def _squared_distances(points: np.ndarray, centers: np.ndarray, chunk_size: int, threads: int) -> np.ndarray:
    """Squared Euclidean distances, points x centers, computed over fixed point chunks."""
    chunks = chunk_bounds(points.shape[0], chunk_size)
    parts = parallel_map(lambda rows: cdist(points[rows.start:rows.stop], centers, "sqeuclidean"), chunks, threads)
    return np.vstack(parts) if parts else np.zeros((0, centers.shape[0]))


def _margins(squared: np.ndarray, labels: np.ndarray) -> np.ndarray:
    distances = np.sqrt(squared)
    winner = distances[np.arange(labels.size), labels]
    others = distances.copy()
    others[np.arange(labels.size), labels] = np.inf
    return np.maximum(others.min(axis=1) - winner, 0.0)


def seed_centroids(ps: PointSet, k: int, seed: int) -> Centroids:
    """
    k-means++ seeding driven by a seeded generator.

    Each new center is drawn with probability proportional to the squared
    distance to the nearest chosen center; once every remaining distance is
    zero the draw is uniform over points not chosen yet.
    """
    if not 1 <= k <= ps.n_pts:
        raise ArgumentError(f"k must be in [1, {ps.n_pts}], got {k}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(ps.n_pts))]
    nearest = cdist(ps.points, ps.points[chosen], "sqeuclidean")[:, 0]
    nearest[chosen[0]] = 0.0
    while len(chosen) < k:
        total = float(nearest.sum())
        if total > 0:
            pick = int(rng.choice(ps.n_pts, p=nearest / total))
        else:
            remaining = np.setdiff1d(np.arange(ps.n_pts), chosen)
            pick = int(rng.choice(remaining))
        chosen.append(pick)
        nearest = np.minimum(nearest, cdist(ps.points, ps.points[[pick]], "sqeuclidean")[:, 0])
        nearest[chosen] = 0.0
    return Centroids(ps.points[chosen].copy())


def kmeans_objective(ps: PointSet, c: Centroids, a: Assignment) -> float:
    """Sum of squared distances from every point to its assigned center."""
    _check_dimensions(ps, c)
    labels = np.asarray(a.labels)
    if labels.shape != (ps.n_pts,):
        raise ArgumentError(f"{labels.size} labels for {ps.n_pts} points")
    if labels.size and (labels.min() < 0 or labels.max() >= c.k):
        raise ArgumentError("labels out of range for the given centers")
    residual = ps.points - c.centers[labels]
    return float(np.einsum("ij,ij->", residual, residual))


def assign(ps: PointSet, c: Centroids, chunk_size: int = DEFAULT_CHUNK_SIZE, threads: int = 1) -> Assignment:
    """Nearest center per point; ties go to the lowest cluster index."""
    _check_dimensions(ps, c)
    squared = _squared_distances(ps.points, c.centers, chunk_size, threads)
    labels = np.argmin(squared, axis=1).astype(np.int64)
    return Assignment(labels=labels, objective=kmeans_objective(ps, c, Assignment(labels, 0.0)))


def margin(point: Sequence[float], c: Centroids) -> float:
    """Distance to the second-nearest center minus distance to the nearest."""
    if c.k < 2:
        raise ArgumentError("margin needs at least 2 centers")
    row = np.asarray(point, dtype=np.float64).reshape(1, -1)
    if row.shape[1] != c.centers.shape[1]:
        raise ArgumentError(f"point has {row.shape[1]} dimensions, centers have {c.centers.shape[1]}")
    squared = cdist(row, c.centers, "sqeuclidean")
    labels = np.argmin(squared, axis=1)
    return float(_margins(squared, labels)[0])


def default_width(ps: PointSet, k: int) -> float:
    """Bounding-box diagonal over 16k, or 1.0 for a zero diagonal."""
    diagonal = ps.diagonal()
    if diagonal == 0:
        return 1.0
    return diagonal / (16.0 * max(1, k))


def _update_centers(
    ps: PointSet,
    labels: np.ndarray,
    centers: np.ndarray,
    chunk_size: int,
    threads: int,
) -> np.ndarray:
    """
    Means of the assigned points.

    Partial sums are taken per fixed chunk and merged in chunk order. An empty
    cluster is reseeded at the point farthest from its currently assigned
    center, empty clusters taken in ascending order without reusing a point.
    """
    k, d = centers.shape
    chunks = chunk_bounds(ps.n_pts, chunk_size)

    def partial(rows: range) -> np.ndarray:
        sums = np.zeros((k, d), dtype=np.float64)
        np.add.at(sums, labels[rows.start:rows.stop], ps.points[rows.start:rows.stop])
        return sums

    sums = np.zeros((k, d), dtype=np.float64)
    for part in parallel_map(partial, chunks, threads):
        sums += part
    counts = np.bincount(labels, minlength=k)

    updated = centers.copy()
    filled = counts > 0
    updated[filled] = sums[filled] / counts[filled][:, None]

    empty = np.flatnonzero(~filled)
    if empty.size:
        residual = ps.points - centers[labels]
        spread = np.einsum("ij,ij->i", residual, residual)
        used = np.zeros(ps.n_pts, dtype=bool)
        for cluster in empty.tolist():
            candidates = np.where(used, -np.inf, spread)
            pick = int(np.argmax(candidates))
            used[pick] = True
            updated[cluster] = ps.points[pick]
            logger.debug(f"Reseeded empty cluster {cluster} at point {pick}")
    return updated


def _validate_run(ps: PointSet, init: Centroids, max_iter: int) -> None:
    _check_dimensions(ps, init)
    if max_iter < 1:
        raise ArgumentError(f"max_iter must be >= 1, got {max_iter}")
    if init.k > ps.n_pts:
        raise ArgumentError(f"k={init.k} exceeds the {ps.n_pts} points")


@log_performance("lloyd_kmeans")
def lloyd_kmeans(
    ps: PointSet,
    init: Centroids,
    max_iter: int = DEFAULT_MAX_ITER,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: int = 1,
) -> KMeansResult:
    """
    Alternate mean update and full reassignment until no label changes.

    Args:
        ps: Points to cluster
        init: Starting centers
        max_iter: Maximum number of update/reassign rounds
        chunk_size: Points per distance and accumulation chunk
        threads: Worker cap; the result does not depend on it

    Returns:
        KMeansResult whose history has one entry per round
    """
    _validate_run(ps, init, max_iter)
    centers = init.centers.copy()
    labels = np.argmin(_squared_distances(ps.points, centers, chunk_size, threads), axis=1).astype(np.int64)
    history: List[IterationStats] = []

    for iteration in range(1, max_iter + 1):
        updated = _update_centers(ps, labels, centers, chunk_size, threads)
        deviation = float(np.max(np.linalg.norm(updated - centers, axis=1)))
        centers = updated
        new_labels = np.argmin(_squared_distances(ps.points, centers, chunk_size, threads), axis=1).astype(np.int64)
        changed = int(np.count_nonzero(new_labels != labels))
        labels = new_labels
        objective = kmeans_objective(ps, Centroids(centers), Assignment(labels, 0.0))
        history.append(IterationStats(iteration, ps.n_pts, deviation, objective, changed))
        if changed == 0:
            break

    final = Centroids(centers)
    logger.debug(f"Lloyd k-means finished after {len(history)} iterations, objective={history[-1].objective:.6g}")
    return KMeansResult(
        centroids=final,
        assignment=Assignment(labels, kmeans_objective(ps, final, Assignment(labels, 0.0))),
        iterations=len(history),
        history=history,
    )


@log_performance("pruned_kmeans")
def pruned_kmeans(
    ps: PointSet,
    init: Centroids,
    width: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    shadow: bool = False,
    strict: bool = False,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: int = 1,
) -> KMeansResult:
    """
    Interval-pruned k-means, label-for-label identical to lloyd_kmeans.

    Args:
        ps: Points to cluster
        init: Starting centers, k >= 2
        width: Interval width; defaults to default_width(ps, k)
        max_iter: Maximum number of update/reassign rounds
        shadow: Also run a full reassignment each round and count skipped
            points whose winner changed
        strict: With shadow, raise on the first such point
        chunk_size: Points per distance and accumulation chunk
        threads: Worker cap; the result does not depend on it

    Raises:
        ArgumentError: For k < 2 or a non-positive width
        PruningBoundViolation: In strict shadow mode, when pruning skipped a change
    """
    _validate_run(ps, init, max_iter)
    if init.k < 2:
        raise ArgumentError("pruned k-means needs k >= 2; use lloyd_kmeans for k = 1")
    if width is None:
        width = default_width(ps, init.k)
    if not width > 0:
        raise ArgumentError(f"width must be > 0, got {width}")

    tolerance = 1e-12 * (1.0 + ps.diagonal())
    centers = init.centers.copy()
    everyone = np.arange(ps.n_pts)

    squared = _squared_distances(ps.points, centers, chunk_size, threads)
    labels = np.argmin(squared, axis=1).astype(np.int64)
    index = IntervalIndex(width, ps.n_pts)
    index.rebucket(everyone, _margins(squared, labels))

    history: List[IterationStats] = []
    violations = 0

    for iteration in range(1, max_iter + 1):
        updated = _update_centers(ps, labels, centers, chunk_size, threads)
        deviation = float(np.max(np.linalg.norm(updated - centers, axis=1)))
        centers = updated

        index.shift(deviation)
        due = index.drain(tolerance)

        new_labels = labels.copy()
        if due.size:
            squared = _squared_distances(ps.points[due], centers, chunk_size, threads)
            due_labels = np.argmin(squared, axis=1).astype(np.int64)
            new_labels[due] = due_labels
            index.rebucket(due, _margins(squared, due_labels))

        if shadow:
            full = np.argmin(_squared_distances(ps.points, centers, chunk_size, threads), axis=1)
            skipped = np.ones(ps.n_pts, dtype=bool)
            skipped[due] = False
            missed = int(np.count_nonzero(full[skipped] != labels[skipped]))
            if missed:
                violations += missed
                logger.error(f"Pruning skipped {missed} changed assignments in iteration {iteration}")
                if strict:
                    raise PruningBoundViolation(
                        f"iteration {iteration}: {missed} skipped points changed their nearest center"
                    )

        changed = int(np.count_nonzero(new_labels != labels))
        labels = new_labels
        objective = kmeans_objective(ps, Centroids(centers), Assignment(labels, 0.0))
        history.append(IterationStats(iteration, int(due.size), deviation, objective, changed))
        if changed == 0:
            break

    final = Centroids(centers)
    visits = sum(stats.visited for stats in history)
    logger.debug(
        f"Pruned k-means finished after {len(history)} iterations, "
        f"revisited {visits} of {ps.n_pts * len(history)} point slots"
    )
    return KMeansResult(
        centroids=final,
        assignment=Assignment(labels, kmeans_objective(ps, final, Assignment(labels, 0.0))),
        iterations=len(history),
        history=history,
        shadow_violations=violations,
    )


def run_kmeans(
    ps: PointSet,
    k: int,
    seed: int,
    width: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    variant: str = "pruned",
    shadow: bool = False,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: int = 1,
) -> KMeansResult:
    """Seed and run one k-means; k = 1 always uses Lloyd."""
    if variant not in ("pruned", "lloyd"):
        raise ArgumentError(f"unknown k-means variant {variant!r}")
    init = seed_centroids(ps, k, seed)
    if k == 1 or variant == "lloyd":
        return lloyd_kmeans(ps, init, max_iter=max_iter, chunk_size=chunk_size, threads=threads)
    return pruned_kmeans(ps, init, width=width, max_iter=max_iter, shadow=shadow,
                         chunk_size=chunk_size, threads=threads)
