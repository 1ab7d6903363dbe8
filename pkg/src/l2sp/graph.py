"""Text-attributed graph model, TSV loaders and BFS primitives."""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)


class GraphKind(str, enum.Enum):
    HOMOGENEOUS = "homogeneous"
    HETEROGENEOUS = "heterogeneous"


class GraphFormatError(ValueError):
    """Raised when a node/edge/label file does not conform to its TSV format."""


@dataclass(frozen=True)
class NodeRecord:
    id: int
    node_type: str
    raw_text: str


@dataclass(frozen=True)
class EdgeRecord:
    src: int
    dst: int
    edge_text: str = ""

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"self-loop on node {self.src}")


@dataclass
class TextAttributedGraph:
    """Undirected view of a TAG with dense node ids ``0..n-1``.

    ``orig_ids[i]`` is the identifier node ``i`` carried in the input files.
    """

    nodes: list[NodeRecord]
    edges: list[EdgeRecord]
    kind: GraphKind = GraphKind.HOMOGENEOUS
    orig_ids: list[str] = field(default_factory=list)
    dropped_self_loops: int = 0
    dropped_duplicates: int = 0

    def __post_init__(self):
        n = len(self.nodes)
        if not self.orig_ids:
            self.orig_ids = [str(i) for i in range(n)]
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise ValueError(f"node ids must be dense 0..n-1, got {node.id} at index {i}")
            if self.kind is GraphKind.HETEROGENEOUS and not node.node_type:
                raise ValueError(f"node {i} has no node_type in a heterogeneous graph")
        adj: list[set[int]] = [set() for _ in range(n)]
        self._edge_text: dict[tuple[int, int], str] = {}
        for e in self.edges:
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise ValueError(f"edge ({e.src}, {e.dst}) references a missing node")
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
            self._edge_text[(e.src, e.dst)] = e.edge_text
        self.adjacency: list[list[int]] = [sorted(a) for a in adj]
        self._orig_index = {o: i for i, o in enumerate(self.orig_ids)}

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Iterable[tuple[int, int]],
        texts: Sequence[str] | None = None,
        kind: GraphKind = GraphKind.HOMOGENEOUS,
        node_types: Sequence[str] | None = None,
    ) -> "TextAttributedGraph":
        """Build a graph in memory, collapsing duplicates and dropping self-loops."""
        texts = texts if texts is not None else [""] * n
        if node_types is None:
            node_types = ["paper" if kind is GraphKind.HOMOGENEOUS else "node"] * n
        nodes = [NodeRecord(i, node_types[i], texts[i]) for i in range(n)]
        recs, loops, dups = _dedup_edges((u, v, "") for u, v in edges)
        g = cls(nodes, recs, kind)
        g.dropped_self_loops, g.dropped_duplicates = loops, dups
        return g

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.edges)

    def neighbors(self, v: int) -> list[int]:
        return self.adjacency[v]

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self._edge_text or (v, u) in self._edge_text

    def edge_text(self, u: int, v: int) -> str:
        """Text of the edge between u and v in either orientation."""
        if (u, v) in self._edge_text:
            return self._edge_text[(u, v)]
        return self._edge_text[(v, u)]

    def index_of(self, orig_id: str) -> int:
        return self._orig_index[orig_id]

    def edge_list(self) -> list[tuple[int, int]]:
        return [(e.src, e.dst) for e in self.edges]


def _dedup_edges(triples: Iterable[tuple[int, int, str]]):
    seen: set[frozenset] = set()
    out: list[EdgeRecord] = []
    loops = dups = 0
    for u, v, text in triples:
        if u == v:
            loops += 1
            continue
        key = frozenset((u, v))
        if key in seen:
            dups += 1
            continue
        seen.add(key)
        out.append(EdgeRecord(u, v, text))
    return out, loops, dups


def _unescape(field_text: str) -> str:
    return (
        field_text.replace("\\t", "\t").replace("\\n", "\n").replace("\\r", "\r").replace("\\\\", "\\")
        if "\\" in field_text
        else field_text
    )


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def load_graph(
    nodes_path: str | Path,
    edges_path: str | Path,
    kind: GraphKind | str = GraphKind.HOMOGENEOUS,
) -> TextAttributedGraph:
    kind = GraphKind(kind)
    nodes: list[NodeRecord] = []
    orig_ids: list[str] = []
    index: dict[str, int] = {}
    with open(nodes_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphFormatError(f"{nodes_path}: malformed node line {lineno}: expected 3 fields, got {len(parts)}")
            orig, node_type, text = parts
            if orig in index:
                raise GraphFormatError(f"{nodes_path}: duplicate node id {orig!r}, line {lineno}")
            index[orig] = len(nodes)
            orig_ids.append(orig)
            nodes.append(NodeRecord(len(nodes), node_type, _unescape(text)))

    triples = []
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise GraphFormatError(f"{edges_path}: malformed edge line {lineno}: expected 2 or 3 fields, got {len(parts)}")
            src, dst = parts[0], parts[1]
            for end in (src, dst):
                if end not in index:
                    raise GraphFormatError(f"{edges_path}: dangling endpoint {end!r}, line {lineno}")
            triples.append((index[src], index[dst], _unescape(parts[2]) if len(parts) == 3 else ""))

    edges, loops, dups = _dedup_edges(triples)
    if loops or dups:
        log.warning("dropped %d self-loops and %d duplicate edges", loops, dups)
    g = TextAttributedGraph(nodes, edges, kind, orig_ids)
    g.dropped_self_loops, g.dropped_duplicates = loops, dups
    return g


def save_graph(g: TextAttributedGraph, nodes_path: str | Path, edges_path: str | Path) -> None:
    with open(nodes_path, "w", encoding="utf-8", newline="\n") as fh:
        for node in g.nodes:
            fh.write(f"{g.orig_ids[node.id]}\t{node.node_type}\t{_escape(node.raw_text)}\n")
    with open(edges_path, "w", encoding="utf-8", newline="\n") as fh:
        for e in g.edges:
            fh.write(f"{g.orig_ids[e.src]}\t{g.orig_ids[e.dst]}\t{_escape(e.edge_text)}\n")


def load_labels(path: str | Path, g: TextAttributedGraph) -> dict[int, str]:
    """Read ``labels.tsv`` into a mapping from dense node id to label."""
    labels: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(f"{path}: malformed label line {lineno}")
            try:
                labels[g.index_of(parts[0])] = parts[1]
            except KeyError:
                raise GraphFormatError(f"{path}: unknown node id {parts[0]!r}, line {lineno}") from None
    return labels


def bfs_distances(g: TextAttributedGraph, source: int) -> dict[int, int]:
    if not 0 <= source < g.n:
        raise KeyError(f"unknown source node {source}")
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for v in g.adjacency[u]:
            if v not in dist:
                dist[v] = du
                queue.append(v)
    return dist


def bfs_predecessors(g: TextAttributedGraph, source: int) -> tuple[dict[int, int], dict[int, list[int]]]:
    """Hop distances plus, for every reached node, its predecessors on shortest paths."""
    if not 0 <= source < g.n:
        raise KeyError(f"unknown source node {source}")
    dist = {source: 0}
    preds: dict[int, list[int]] = {source: []}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for v in g.adjacency[u]:
            if v not in dist:
                dist[v] = du
                preds[v] = [u]
                queue.append(v)
            elif dist[v] == du:
                preds[v].append(u)
    return dist, preds
