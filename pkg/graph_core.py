"""
Graph Core Module for commscape

Loads SNAP edge lists and ground-truth community files into an immutable
directed graph backed by a CSR adjacency matrix over a dense reindexing of
the external node ids.
"""

from dataclasses import dataclass, field
from typing import BinaryIO, Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple, Union
import logging

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from utils import ArgumentError, ParseError, UnknownNodeError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetInfo:
    """Published size of a SNAP community dataset."""
    name: str
    nodes: int
    edges: int
    communities: int


DATASET_CATALOG: Tuple[DatasetInfo, ...] = (
    DatasetInfo("com-LiveJournal", 3_997_962, 34_681_189, 287_512),
    DatasetInfo("com-Friendster", 65_608_366, 1_806_067_135, 957_154),
    DatasetInfo("com-Orkut", 3_072_441, 117_185_083, 6_288_363),
    DatasetInfo("com-YouTube", 1_134_890, 2_987_624, 8_385),
    DatasetInfo("com-DBLP", 317_080, 1_049_866, 13_477),
    DatasetInfo("com-Amazon", 334_863, 925_872, 75_149),
    DatasetInfo("email-Eu-core", 1_005, 25_571, 42),
    DatasetInfo("wiki-topcats", 1_791_489, 28_511_807, 17_364),
)


def catalog_entry(name: str) -> Optional[DatasetInfo]:
    for info in DATASET_CATALOG:
        if info.name == name:
            return info
    return None


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Immutable directed graph.

    node_ids holds the sorted external ids; row/column i of adjacency is
    node node_ids[i]. Arcs are stored once each (adjacency entries are 1.0),
    sorted by column within each row, with no self-loops.
    """
    node_ids: np.ndarray
    adjacency: sparse.csr_matrix
    directed: bool = True
    labels: Optional[Mapping[int, int]] = None
    _index: Dict[int, int] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {int(v): i for i, v in enumerate(self.node_ids)})

    @property
    def n(self) -> int:
        return int(self.node_ids.shape[0])

    @property
    def m(self) -> int:
        return int(self.adjacency.nnz)

    @property
    def arcs(self) -> List[Tuple[int, int]]:
        """All arcs as (source id, target id), in row-major order."""
        coo = self.adjacency.tocoo()
        order = np.lexsort((coo.col, coo.row))
        sources = self.node_ids[coo.row[order]]
        targets = self.node_ids[coo.col[order]]
        return list(zip(sources.tolist(), targets.tolist()))

    @property
    def out_adjacency(self) -> Dict[int, List[int]]:
        return {int(a): out_neighbors(self, int(a)) for a in self.node_ids}

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def index_of(self, node: int) -> int:
        """Dense index of an external node id."""
        try:
            return self._index[int(node)]
        except (KeyError, TypeError, ValueError):
            raise UnknownNodeError(node) from None

    def indices_of(self, nodes: Iterable[int]) -> np.ndarray:
        return np.fromiter((self.index_of(v) for v in nodes), dtype=np.int64)

    def __contains__(self, node: object) -> bool:
        try:
            return int(node) in self._index
        except (TypeError, ValueError):
            return False

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        if self.directed != other.directed or self.n != other.n or self.m != other.m:
            return False
        if not np.array_equal(self.node_ids, other.node_ids):
            return False
        return (
            np.array_equal(self.adjacency.indptr, other.adjacency.indptr)
            and np.array_equal(self.adjacency.indices, other.adjacency.indices)
        )

    __hash__ = None

    @classmethod
    def from_arcs(
        cls,
        arcs: Union[np.ndarray, Iterable[Tuple[int, int]]],
        directed: bool = True,
        nodes: Optional[Iterable[int]] = None,
    ) -> "Graph":
        """
        Build a graph from (source, target) pairs.

        Args:
            arcs: Pairs of non-negative integer node ids
            directed: When False every pair also yields the reverse arc
            nodes: Extra vertices to include even when they touch no arc

        Returns:
            Graph with self-loops dropped and repeated arcs deduplicated
        """
        pairs = np.asarray(list(arcs) if not isinstance(arcs, np.ndarray) else arcs, dtype=np.int64)
        if pairs.size == 0:
            pairs = pairs.reshape(0, 2)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ArgumentError("arcs must be pairs of node ids")

        extra = np.asarray(sorted(set(int(v) for v in nodes)) if nodes is not None else [], dtype=np.int64)
        node_ids = np.unique(np.concatenate([pairs.ravel(), extra]))
        if node_ids.size and node_ids[0] < 0:
            raise ArgumentError(f"node ids must be non-negative, got {int(node_ids[0])}")

        keep = pairs[:, 0] != pairs[:, 1]
        pairs = pairs[keep]
        if not directed:
            pairs = np.concatenate([pairs, pairs[:, ::-1]])

        n = int(node_ids.size)
        rows = np.searchsorted(node_ids, pairs[:, 0])
        cols = np.searchsorted(node_ids, pairs[:, 1])
        adjacency = sparse.csr_matrix(
            (np.ones(rows.size, dtype=np.float64), (rows, cols)), shape=(n, n)
        )
        adjacency.sum_duplicates()
        adjacency.data[:] = 1.0
        adjacency.sort_indices()
        return cls(node_ids=node_ids, adjacency=adjacency, directed=directed)


@dataclass(frozen=True)
class GroundTruthCommunities:
    """Possibly overlapping ground-truth communities, one per parsed line."""
    communities: Tuple[frozenset, ...]

    @property
    def count(self) -> int:
        return len(self.communities)

    def sizes(self) -> List[int]:
        return [len(c) for c in self.communities]

    def nodes(self) -> frozenset:
        return frozenset().union(*self.communities) if self.communities else frozenset()


@dataclass(frozen=True)
class GraphStats:
    n: int
    m: int
    min_out_degree: int
    max_out_degree: int
    mean_out_degree: float
    sink_count: int

    def to_dict(self) -> Dict[str, Union[int, float]]:
        return {
            "n": self.n,
            "m": self.m,
            "min_out_degree": self.min_out_degree,
            "max_out_degree": self.max_out_degree,
            "mean_out_degree": self.mean_out_degree,
            "sink_count": self.sink_count,
        }


def _decode(raw: bytes, line_number: int) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ParseError("line is not valid UTF-8 text", line=line_number) from None


def _parse_node_id(token: str, line_number: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ParseError(f"expected an integer node id, got {token!r}", line=line_number) from None
    if value < 0:
        raise ParseError(f"node ids must be non-negative, got {value}", line=line_number)
    return value


def load_edge_list(source: BinaryIO, directed: bool = False) -> Graph:
    """
    Parse a SNAP edge list.

    Lines starting with '#' and blank lines are skipped; every other line
    must hold exactly two non-negative integers.

    Args:
        source: Binary stream of edge-list text
        directed: False expands each edge into both arcs

    Returns:
        Graph over every id that appears in the stream

    Raises:
        ParseError: With the 1-based line number of the first malformed line
    """
    sources: List[int] = []
    targets: List[int] = []
    loop_nodes: List[int] = []

    for line_number, raw in enumerate(source, start=1):
        text = _decode(raw, line_number).strip()
        if not text or text.startswith("#"):
            continue
        tokens = text.split()
        if len(tokens) != 2:
            raise ParseError(f"expected 2 node ids, found {len(tokens)} tokens", line=line_number)
        a = _parse_node_id(tokens[0], line_number)
        b = _parse_node_id(tokens[1], line_number)
        if a == b:
            loop_nodes.append(a)
            continue
        sources.append(a)
        targets.append(b)

    pairs = np.column_stack([
        np.asarray(sources, dtype=np.int64),
        np.asarray(targets, dtype=np.int64),
    ]) if sources else np.empty((0, 2), dtype=np.int64)

    if loop_nodes:
        logger.debug(f"Dropped {len(loop_nodes)} self-loop lines")

    graph = Graph.from_arcs(pairs, directed=directed, nodes=loop_nodes)
    logger.info(f"Loaded {'directed' if directed else 'undirected'} graph: n={graph.n}, m={graph.m}")
    return graph


def write_edge_list(g: Graph, stream: TextIO) -> None:
    """
    Serialize a graph as edge-list text that load_edge_list reads back identically.

    Undirected graphs write each edge once; isolated vertices are written as
    self-loop lines so they survive the round trip.
    """
    kind = "Directed" if g.directed else "Undirected"
    stream.write(f"# {kind} graph\n# Nodes: {g.n} Edges: {g.m}\n# FromNodeId\tToNodeId\n")
    degrees = np.diff(g.adjacency.indptr)
    incoming = np.bincount(g.adjacency.indices, minlength=g.n) if g.n else np.zeros(0, dtype=np.int64)
    for i in range(g.n):
        a = int(g.node_ids[i])
        row = g.adjacency.indices[g.adjacency.indptr[i]:g.adjacency.indptr[i + 1]]
        if degrees[i] == 0 and incoming[i] == 0:
            stream.write(f"{a}\t{a}\n")
            continue
        for j in row:
            b = int(g.node_ids[j])
            if not g.directed and b < a:
                continue
            stream.write(f"{a}\t{b}\n")


def load_ground_truth(source: BinaryIO) -> GroundTruthCommunities:
    """
    Parse a SNAP community file: one community per non-empty line.

    Raises:
        ParseError: On a non-integer token, with its line number
    """
    communities = []
    for line_number, raw in enumerate(source, start=1):
        text = _decode(raw, line_number).strip()
        if not text or text.startswith("#"):
            continue
        members = frozenset(_parse_node_id(token, line_number) for token in text.split())
        communities.append(members)

    logger.info(f"Loaded {len(communities)} ground-truth communities")
    return GroundTruthCommunities(communities=tuple(communities))


def load_node_labels(source: BinaryIO) -> GroundTruthCommunities:
    """
    Parse a "node label" file (e.g. email-Eu-core department labels).

    Each label becomes one community; communities are ordered by label.
    """
    groups: Dict[int, set] = {}
    for line_number, raw in enumerate(source, start=1):
        text = _decode(raw, line_number).strip()
        if not text or text.startswith("#"):
            continue
        tokens = text.split()
        if len(tokens) != 2:
            raise ParseError(f"expected 'node label', found {len(tokens)} tokens", line=line_number)
        node = _parse_node_id(tokens[0], line_number)
        label = _parse_node_id(tokens[1], line_number)
        groups.setdefault(label, set()).add(node)

    communities = tuple(frozenset(groups[label]) for label in sorted(groups))
    logger.info(f"Loaded {len(communities)} labelled communities")
    return GroundTruthCommunities(communities=communities)


def out_neighbors(g: Graph, a: int) -> List[int]:
    """Sorted successor ids of node a; empty for a sink."""
    i = g.index_of(a)
    row = g.adjacency.indices[g.adjacency.indptr[i]:g.adjacency.indptr[i + 1]]
    return [int(v) for v in g.node_ids[row]]


def graph_stats(g: Graph) -> GraphStats:
    if g.n == 0:
        return GraphStats(n=0, m=0, min_out_degree=0, max_out_degree=0, mean_out_degree=0.0, sink_count=0)
    degrees = g.out_degrees()
    return GraphStats(
        n=g.n,
        m=g.m,
        min_out_degree=int(degrees.min()),
        max_out_degree=int(degrees.max()),
        mean_out_degree=float(g.m) / g.n,
        sink_count=int(np.count_nonzero(degrees == 0)),
    )


def induced_subgraph(g: Graph, nodes: Sequence[int]) -> Graph:
    """Subgraph on the given node ids, keeping every arc between them."""
    idx = np.sort(g.indices_of(nodes))
    sub = g.adjacency[idx][:, idx].tocsr()
    sub.sort_indices()
    labels = None
    if g.labels is not None:
        labels = {int(v): g.labels[int(v)] for v in g.node_ids[idx] if int(v) in g.labels}
    return Graph(node_ids=g.node_ids[idx].copy(), adjacency=sub, directed=g.directed, labels=labels)


def connected_components(g: Graph) -> List[np.ndarray]:
    """Weakly connected components as sorted id arrays, ordered by smallest id."""
    if g.n == 0:
        return []
    count, membership = csgraph.connected_components(g.adjacency, directed=True, connection="weak")
    # first occurrence order over sorted ids == order by smallest member id
    _, first = np.unique(membership, return_index=True)
    order = np.argsort(first, kind="stable")
    return [g.node_ids[membership == label] for label in order]


def attach_ground_truth(g: Graph, gt: GroundTruthCommunities) -> Graph:
    """
    Copy of g whose labels map each node to the lowest-index community containing it.

    Nodes outside every community stay unlabelled; community members that are
    not graph nodes are ignored.
    """
    labels: Dict[int, int] = {}
    for index, community in enumerate(gt.communities):
        for node in community:
            if node in g and node not in labels:
                labels[int(node)] = index
    return Graph(node_ids=g.node_ids, adjacency=g.adjacency, directed=g.directed, labels=labels)
