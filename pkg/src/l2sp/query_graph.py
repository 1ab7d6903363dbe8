"""Reweighted query graph built from node embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .embeddings import EmbeddingTable, cosine_similarity
from .graph import TextAttributedGraph


@dataclass(frozen=True)
class WeightedEdge:
    src: int
    dst: int
    importance: float
    weight: float


@dataclass
class WeightedQueryGraph:
    n: int
    edges: list[WeightedEdge]
    adjacency: list[list[tuple[int, float]]] = field(init=False, repr=False)

    def __post_init__(self):
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        self._lookup: dict[tuple[int, int], WeightedEdge] = {}
        for e in self.edges:
            adj[e.src].append((e.dst, e.weight))
            adj[e.dst].append((e.src, e.weight))
            self._lookup[(e.src, e.dst)] = e
            self._lookup[(e.dst, e.src)] = e
        self.adjacency = [sorted(a) for a in adj]

    def edge(self, u: int, v: int) -> WeightedEdge:
        return self._lookup[(u, v)]

    def weight(self, u: int, v: int) -> float:
        return self._lookup[(u, v)].weight

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self._lookup

    @property
    def total_weight(self) -> float:
        return math.fsum(e.weight for e in self.edges)


def edge_importance(psi: float) -> float:
    return psi if psi > 0 else 0.0


def build_query_graph(g: TextAttributedGraph, table: EmbeddingTable) -> WeightedQueryGraph:
    """Keep edges whose endpoint embeddings have positive cosine; weight = -ln(cosine)."""
    missing = [v for v in range(g.n) if v not in table]
    if missing:
        raise KeyError(f"no embedding for nodes {missing[:20]}{'...' if len(missing) > 20 else ''}")
    edges = []
    for e in g.edges:
        f = edge_importance(cosine_similarity(table[e.src], table[e.dst]))
        if f > 0:
            edges.append(WeightedEdge(e.src, e.dst, f, -math.log(f) if f < 1.0 else 0.0))
    return WeightedQueryGraph(g.n, edges)


def uniform_query_graph(g: TextAttributedGraph) -> WeightedQueryGraph:
    return WeightedQueryGraph(g.n, [WeightedEdge(e.src, e.dst, 1.0, 1.0) for e in g.edges])


def write_weighted_edges(wg: WeightedQueryGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in wg.edges:
            fh.write(f"{e.src}\t{e.dst}\t{e.importance!r}\t{e.weight!r}\n")


def read_weighted_edges(path: str | Path, n: int) -> WeightedQueryGraph:
    edges = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                s, d, f, w = line.rstrip("\n").split("\t")
                edges.append(WeightedEdge(int(s), int(d), float(f), float(w)))
    return WeightedQueryGraph(n, edges)
