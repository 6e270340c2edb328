"""
Quality Scoring Module for commscape

Clusters customers on up to twelve quality parameters and scores each
parameter by the share of its variance that the clustering explains
(between-cluster over total sum of squares).
"""

from dataclasses import dataclass, field
from typing import Any, BinaryIO, Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from clustering import Assignment, PointSet, run_kmeans
from csv_processor import CSVProcessor
from logging_config import log_performance
from utils import ArgumentError, ParseError, derive_seed


logger = logging.getLogger(__name__)

ID_COLUMN = "customer_id"

FEATURE_NAMES: Tuple[str, ...] = (
    "total_direct_transactions",
    "click_direct_transactions",
    "register_direct_transactions",
    "direct_purchases",
    "guidance_direct_transactions",
    "indirect_transactions",
    "activity_days",
    "social_network_role",
    "social_network_size",
    "frequent_visits",
    "various_visits",
    "conversion_rate",
)

FEATURE_LABELS: Dict[str, str] = {
    "total_direct_transactions": "total direct transactions",
    "click_direct_transactions": "click on direct transactions",
    "register_direct_transactions": "register direct transactions",
    "direct_purchases": "direct purchases",
    "guidance_direct_transactions": "guidance for direct transactions",
    "indirect_transactions": "indirect transactions",
    "activity_days": "activity days",
    "social_network_role": "role in social networks",
    "social_network_size": "social network size",
    "frequent_visits": "frequent visits",
    "various_visits": "various visits",
    "conversion_rate": "conversion rate",
}

# ordinal encoding, may be negative
SIGNED_FEATURES = frozenset({"social_network_role"})

REFERENCE_IMPACTS: Dict[str, float] = {
    "various_visits": 37.13,
    "frequent_visits": 28.56,
    "social_network_role": 28.37,
    "indirect_transactions": 26.74,
    "activity_days": 25.62,
    "social_network_size": 25.06,
}


@dataclass(frozen=True)
class CustomerRecord:
    customer_id: str
    features: Mapping[str, float]


@dataclass(frozen=True)
class SeparationSpec:
    """
    Planted-cluster layout for synthetic customers.

    Cluster c shifts feature f by c * separation[f]; every feature carries
    Gaussian noise of scale noise_scale.
    """
    n_clusters: int = 2
    separation: Mapping[str, float] = field(default_factory=dict)
    noise_scale: float = 1.0
    features: Tuple[str, ...] = FEATURE_NAMES

    def validate(self) -> None:
        if self.n_clusters < 1:
            raise ArgumentError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if not self.noise_scale > 0 or not np.isfinite(self.noise_scale):
            raise ArgumentError(f"noise_scale must be positive, got {self.noise_scale}")
        unknown = [f for f in list(self.features) + list(self.separation) if f not in FEATURE_NAMES]
        if unknown:
            raise ArgumentError(f"unknown features: {', '.join(sorted(set(unknown)))}")
        if not self.features:
            raise ArgumentError("at least one feature is required")
        missing = [f for f in self.separation if f not in self.features]
        if missing:
            raise ArgumentError(f"separated features not generated: {', '.join(missing)}")
        for name, gap in self.separation.items():
            if not np.isfinite(gap) or gap < 0:
                raise ArgumentError(f"separation for {name} must be finite and >= 0, got {gap}")


@dataclass(frozen=True)
class Standardization:
    features: Tuple[str, ...]
    means: Tuple[float, ...]
    scales: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {f: {"mean": m, "scale": s} for f, m, s in zip(self.features, self.means, self.scales)}


@dataclass
class ImpactReport:
    impacts: Dict[str, float]
    ordering: List[str]
    absent_features: List[str]
    decomposition: Dict[str, Dict[str, float]] = field(default_factory=dict)
    standardization: Optional[Standardization] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "impacts": dict(self.impacts),
            "ordering": list(self.ordering),
            "absent_features": list(self.absent_features),
            "decomposition": {f: dict(v) for f, v in self.decomposition.items()},
            "standardization": self.standardization.to_dict() if self.standardization else None,
        }

    def plot_rows(self) -> List[Dict[str, Any]]:
        return [
            {"feature": f, "name": FEATURE_LABELS[f], "impact_pct": self.impacts[f]}
            for f in self.ordering
        ]


def active_features(records: Sequence[CustomerRecord]) -> List[str]:
    """Features present on every record, in canonical order."""
    if not records:
        return []
    present = set(records[0].features)
    for record in records[1:]:
        present &= set(record.features)
    return [f for f in FEATURE_NAMES if f in present]


def absent_features(records: Sequence[CustomerRecord]) -> List[str]:
    active = set(active_features(records))
    return [f for f in FEATURE_NAMES if f not in active]


def load_customers(source: BinaryIO, processor: Optional[CSVProcessor] = None) -> List[CustomerRecord]:
    """
    Read customers from CSV: customer_id plus any subset of the twelve features.

    Raises:
        ParseError: For an unknown column, a missing or non-numeric cell, or a
            negative count, with the offending location
    """
    processor = processor or CSVProcessor()
    df = processor.read_frame(source)

    columns = [str(c).strip() for c in df.columns]
    df.columns = columns
    if ID_COLUMN not in columns:
        raise ParseError(f"missing {ID_COLUMN} column", location="header")
    unknown = [c for c in columns if c != ID_COLUMN and c not in FEATURE_NAMES]
    if unknown:
        raise ParseError(f"unknown column {unknown[0]!r}", location="header")
    features = [f for f in FEATURE_NAMES if f in columns]
    if len(set(columns)) != len(columns):
        raise ParseError("duplicate column names", location="header")

    values = processor.to_numeric(df, features)
    for position, name in enumerate(features):
        if name in SIGNED_FEATURES:
            continue
        negative = np.flatnonzero(values[:, position] < 0)
        if negative.size:
            row = int(negative[0])
            raise ParseError(f"negative value {values[row, position]} for a count", location=f"line {row + 2}, column {name!r}")

    ids = df[ID_COLUMN].astype(str).str.strip().tolist() if len(df) else []
    records = [
        CustomerRecord(customer_id=ids[i], features={name: float(values[i, j]) for j, name in enumerate(features)})
        for i in range(len(df))
    ]
    logger.info(f"Loaded {len(records)} customers with {len(features)} active features")
    return records


def synth_customers_with_labels(seed: int, n: int, spec: SeparationSpec) -> Tuple[List[CustomerRecord], np.ndarray]:
    """Synthetic customers plus the planted cluster of each."""
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    spec.validate()
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % spec.n_clusters)

    columns: Dict[str, np.ndarray] = {}
    for name in spec.features:
        base = 10.0 * spec.noise_scale
        gap = float(spec.separation.get(name, 0.0))
        values = base + labels * gap + rng.normal(0.0, spec.noise_scale, size=n)
        if name not in SIGNED_FEATURES:
            values = np.clip(values, 0.0, None)
        columns[name] = values

    records = [
        CustomerRecord(customer_id=f"c{i:06d}", features={name: float(columns[name][i]) for name in spec.features})
        for i in range(n)
    ]
    return records, labels


def synth_customers(seed: int, n: int, spec: SeparationSpec) -> List[CustomerRecord]:
    return synth_customers_with_labels(seed, n, spec)[0]


def customers_frame(records: Sequence[CustomerRecord]) -> pd.DataFrame:
    features = active_features(records)
    frame = pd.DataFrame([[r.features[f] for f in features] for r in records], columns=features)
    frame.insert(0, ID_COLUMN, [r.customer_id for r in records])
    return frame


def _matrix(records: Sequence[CustomerRecord], features: Sequence[str]) -> np.ndarray:
    return np.asarray([[r.features[f] for f in features] for r in records], dtype=np.float64).reshape(len(records), len(features))


def standardize(records: Sequence[CustomerRecord]) -> Tuple[np.ndarray, Standardization]:
    """Z-scores per active feature; constant features keep scale 1."""
    features = active_features(records)
    if not records or not features:
        raise ArgumentError("standardization needs records with at least one active feature")
    raw = _matrix(records, features)
    means = raw.mean(axis=0)
    scales = raw.std(axis=0)
    scales = np.where(np.ptp(raw, axis=0) == 0, 1.0, scales)
    matrix = (raw - means) / scales
    return matrix, Standardization(tuple(features), tuple(float(m) for m in means), tuple(float(s) for s in scales))


@log_performance("cluster_customers")
def cluster_customers(
    records: Sequence[CustomerRecord],
    k: int,
    seed: int,
    width: Optional[float] = None,
    max_iter: int = 100,
    n_init: int = 10,
) -> Assignment:
    """
    Pruned k-means on standardized features (Lloyd for k = 1).

    The lowest-objective run out of n_init seeded starts is kept.
    """
    if not records:
        raise ArgumentError("no customers to cluster")
    if n_init < 1:
        raise ArgumentError(f"n_init must be >= 1, got {n_init}")
    matrix, _ = standardize(records)
    points = PointSet(matrix, [r.customer_id for r in records])
    best = None
    for attempt in range(n_init):
        result = run_kmeans(points, k, derive_seed(seed, attempt), width=width, max_iter=max_iter)
        if best is None or result.assignment.objective < best.assignment.objective:
            best = result
    return best.assignment


def feature_impact(
    records: Sequence[CustomerRecord],
    assignment: Assignment,
    standardization: Optional[Standardization] = None,
) -> ImpactReport:
    """
    Percent of each feature's variance explained by the clusters, on raw values.

    Raises:
        ArgumentError: With fewer than two non-empty clusters or no active feature
    """
    features = active_features(records)
    if not features:
        raise ArgumentError("no active features to score")
    labels = np.asarray(assignment.labels)
    if labels.shape != (len(records),):
        raise ArgumentError(f"{labels.size} labels for {len(records)} customers")
    if np.unique(labels).size < 2:
        raise ArgumentError("feature impact needs at least 2 non-empty clusters")

    frame = pd.DataFrame(_matrix(records, features), columns=features)
    grand_mean = frame.mean()
    grouped = frame.groupby(labels)
    group_means = grouped.transform("mean")
    counts = grouped.size()

    ssb = ((grouped.mean() - grand_mean) ** 2).mul(counts, axis=0).sum()
    ssw = ((frame - group_means) ** 2).sum()
    sst = ((frame - grand_mean) ** 2).sum()
    constant = frame.max() == frame.min()

    impacts: Dict[str, float] = {}
    decomposition: Dict[str, Dict[str, float]] = {}
    for name in features:
        total = float(sst[name])
        if constant[name] or total <= 0:
            impact = 0.0
        else:
            impact = float(np.clip(100.0 * float(ssb[name]) / total, 0.0, 100.0))
        impacts[name] = impact
        decomposition[name] = {"ssb": float(ssb[name]), "ssw": float(ssw[name]), "sst": total}

    canonical = {name: i for i, name in enumerate(FEATURE_NAMES)}
    ordering = sorted(features, key=lambda f: (-impacts[f], canonical[f]))
    logger.info(f"Top impact: {ordering[0]} at {impacts[ordering[0]]:.2f}%")
    return ImpactReport(
        impacts=impacts,
        ordering=ordering,
        absent_features=[f for f in FEATURE_NAMES if f not in features],
        decomposition=decomposition,
        standardization=standardization,
    )


def reference_impact_report() -> ImpactReport:
    """The six published impact percentages in report form."""
    canonical = {name: i for i, name in enumerate(FEATURE_NAMES)}
    ordering = sorted(REFERENCE_IMPACTS, key=lambda f: (-REFERENCE_IMPACTS[f], canonical[f]))
    return ImpactReport(
        impacts=dict(REFERENCE_IMPACTS),
        ordering=ordering,
        absent_features=[f for f in FEATURE_NAMES if f not in REFERENCE_IMPACTS],
    )
