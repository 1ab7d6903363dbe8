"""Keyword search over a weighted query graph: Dijkstra, Mehlhorn Steiner trees, exact oracle."""

from __future__ import annotations

import enum
import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .graph import TextAttributedGraph
from .query_graph import WeightedEdge, WeightedQueryGraph
from .textualize import clean_text, words


class InfeasibleQuery(Exception):
    """No answer exists: an unmatched keyword or terminals disconnected in the query graph."""


class MatchMode(str, enum.Enum):
    TOKEN_EXACT = "token"
    SUBSTRING_CI = "substring"


@dataclass(frozen=True)
class QuerySpec:
    keywords: tuple[str, ...]
    mode: MatchMode = MatchMode.TOKEN_EXACT

    def __post_init__(self):
        kws = tuple(dict.fromkeys(k.strip() for k in self.keywords))
        if any(not k for k in kws):
            raise ValueError("keywords must be non-empty")
        if len(kws) < 2:
            raise ValueError("a query needs at least two distinct keywords")
        object.__setattr__(self, "keywords", kws)
        object.__setattr__(self, "mode", MatchMode(self.mode))


def map_keywords_to_terminals(g: TextAttributedGraph, q: QuerySpec) -> dict[str, int]:
    """Best-matching node per keyword: highest fraction of node tokens matched, then lowest id."""
    cleaned = [clean_text(n.raw_text) for n in g.nodes]
    node_tokens = [words(t) for t in cleaned]
    out = {}
    for kw in q.keywords:
        kw_tokens = words(kw)
        kw_set = set(kw_tokens)
        best: tuple[float, int] | None = None
        for v in range(g.n):
            toks = node_tokens[v]
            if q.mode is MatchMode.TOKEN_EXACT:
                hit = bool(kw_set) and kw_set <= set(toks)
            else:
                hit = kw.lower() in cleaned[v].lower()
            if not hit:
                continue
            score = sum(t in kw_set for t in toks) / len(toks) if toks else 0.0
            if best is None or score > best[0]:
                best = (score, v)
        if best is None:
            raise InfeasibleQuery(f"keyword {kw!r} matches no node")
        out[kw] = best[1]
    return out


def dijkstra_min_weight_path(wg: WeightedQueryGraph, s: int, t: int) -> tuple[tuple[int, ...], float]:
    """Minimum-weight s-t path; equal-cost paths resolve to the lexicographically smallest.

    ``s == t`` yields the edgeless path ``(s,)`` with cost 0.
    """
    for v in (s, t):
        if not 0 <= v < wg.n:
            raise KeyError(f"unknown node {v}")
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (s,))]
    settled: set[int] = set()
    while heap:
        cost, path = heapq.heappop(heap)
        u = path[-1]
        if u in settled:
            continue
        settled.add(u)
        if u == t:
            return path, cost
        for v, w in wg.adjacency[u]:
            if v not in settled:
                heapq.heappush(heap, (cost + w, path + (v,)))
    raise InfeasibleQuery(f"node {t} is unreachable from {s} in the query graph")


class _DisjointSet:
    def __init__(self, items: Iterable[int]):
        self.parent = {x: x for x in items}

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True


def kruskal(nodes: Iterable[int], edges: Iterable[tuple[float, int, int]]) -> list[tuple[float, int, int]]:
    """Minimum spanning forest; ties broken by (weight, u, v) order."""
    ds = _DisjointSet(nodes)
    return [(w, u, v) for w, u, v in sorted(edges) if ds.union(u, v)]


@dataclass
class SteinerAnswer:
    edges: list[WeightedEdge]
    terminals: dict[str, int]
    cost: float
    hop_distances: dict[tuple[str, str], int] = field(default_factory=dict)

    @property
    def nodes(self) -> list[int]:
        ns = set(self.terminals.values())
        for e in self.edges:
            ns.update((e.src, e.dst))
        return sorted(ns)

    def to_json(self) -> dict:
        return {
            "terminals": self.terminals,
            "edges": [[e.src, e.dst, e.importance, e.weight] for e in self.edges],
            "cost": self.cost,
            "answer_distance": answer_distance(self),
            "sum_distance": sum(self.hop_distances.values()),
        }


def _tree_hops(edges: Sequence[WeightedEdge], source: int) -> dict[int, int]:
    adj: dict[int, list[int]] = {}
    for e in edges:
        adj.setdefault(e.src, []).append(e.dst)
        adj.setdefault(e.dst, []).append(e.src)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _make_answer(wg: WeightedQueryGraph, pairs: Iterable[tuple[int, int]], terminals: dict[str, int]) -> SteinerAnswer:
    edges = sorted((wg.edge(min(u, v), max(u, v)) for u, v in pairs), key=lambda e: (min(e.src, e.dst), max(e.src, e.dst)))
    cost = math.fsum(e.weight for e in edges)
    hops = {}
    for a, b in itertools.combinations(terminals, 2):
        hops[(a, b)] = _tree_hops(edges, terminals[a])[terminals[b]]
    return SteinerAnswer(edges, dict(terminals), cost, hops)


def _normalize_terminals(terminals: Mapping[str, int] | Iterable[int]) -> dict[str, int]:
    if isinstance(terminals, Mapping):
        return dict(terminals)
    return {str(v): v for v in dict.fromkeys(terminals)}


def path_answer(wg: WeightedQueryGraph, terminals: Mapping[str, int] | Iterable[int]) -> SteinerAnswer:
    """Two-keyword answer: the Dijkstra path between both terminals."""
    terms = _normalize_terminals(terminals)
    a, b = list(terms.values())[:2]
    path, _ = dijkstra_min_weight_path(wg, a, b)
    return _make_answer(wg, zip(path, path[1:]), terms)


def _voronoi(wg: WeightedQueryGraph, sources: Sequence[int]):
    """Multi-source Dijkstra: nearest terminal, distance and predecessor for every reached node."""
    dist: dict[int, float] = {}
    owner: dict[int, int] = {}
    pred: dict[int, int | None] = {}
    heap = [(0.0, s, s, -1) for s in sorted(sources)]
    heapq.heapify(heap)
    while heap:
        d, term, u, p = heapq.heappop(heap)
        if u in dist:
            continue
        dist[u], owner[u], pred[u] = d, term, (None if p < 0 else p)
        for v, w in wg.adjacency[u]:
            if v not in dist:
                heapq.heappush(heap, (d + w, term, v, u))
    return dist, owner, pred


def _prune_leaves(tree: set[tuple[int, int]], keep: set[int]) -> set[tuple[int, int]]:
    tree = set(tree)
    while True:
        deg: dict[int, int] = {}
        for u, v in tree:
            deg[u] = deg.get(u, 0) + 1
            deg[v] = deg.get(v, 0) + 1
        leaves = {x for x, dg in deg.items() if dg == 1 and x not in keep}
        if not leaves:
            return tree
        tree = {(u, v) for u, v in tree if u not in leaves and v not in leaves}


def steiner_2approx(wg: WeightedQueryGraph, terminals: Mapping[str, int] | Iterable[int]) -> SteinerAnswer:
    """Mehlhorn's 2(1 - 1/m)-approximate Steiner tree over the query graph."""
    terms = _normalize_terminals(terminals)
    tset = sorted(set(terms.values()))
    if len(tset) == 1:
        return _make_answer(wg, [], terms)
    dist, owner, pred = _voronoi(wg, tset)

    best: dict[tuple[int, int], tuple[float, int, int]] = {}
    for e in wg.edges:
        u, v = e.src, e.dst
        if u not in owner or v not in owner or owner[u] == owner[v]:
            continue
        if owner[u] > owner[v]:
            u, v = v, u
        key = (owner[u], owner[v])
        cand = (dist[u] + e.weight + dist[v], u, v)
        if key not in best or cand < best[key]:
            best[key] = cand
    aux = [(c, s, t) for (s, t), (c, _, _) in best.items()]
    mst = kruskal(tset, aux)
    if len(mst) != len(tset) - 1:
        raise InfeasibleQuery("terminals are not connected in the query graph")

    union: set[tuple[int, int]] = set()

    def climb(x: int):
        while pred[x] is not None:
            union.add((min(x, pred[x]), max(x, pred[x])))
            x = pred[x]

    for _, s, t in mst:
        _, u, v = best[(s, t)]
        union.add((min(u, v), max(u, v)))
        climb(u)
        climb(v)

    nodes = {x for uv in union for x in uv}
    sub = kruskal(nodes, [(wg.weight(u, v), u, v) for u, v in union])
    tree = _prune_leaves({(min(u, v), max(u, v)) for _, u, v in sub}, set(tset))
    return _make_answer(wg, tree, terms)


def steiner_exact_oracle(wg: WeightedQueryGraph, terminals: Iterable[int]) -> float:
    """Optimal Steiner cost: min over node supersets S of the terminals of MST(G*[S]).

    Exponential; restricted to graphs with at most 16 nodes.
    """
    if wg.n > 16:
        raise ValueError(f"exact oracle supports n <= 16, got {wg.n}")
    tset = sorted(set(terminals))
    if len(tset) <= 1:
        return 0.0
    others = [v for v in range(wg.n) if v not in set(tset)]
    best = math.inf
    for r in range(len(others) + 1):
        for extra in itertools.combinations(others, r):
            members = set(tset).union(extra)
            edges = [(e.weight, e.src, e.dst) for e in wg.edges if e.src in members and e.dst in members]
            forest = kruskal(members, edges)
            if len(forest) == len(members) - 1:
                best = min(best, math.fsum(w for w, _, _ in forest))
    if math.isinf(best):
        raise InfeasibleQuery("terminals are not connected in the query graph")
    return best


def answer(wg: WeightedQueryGraph, terminals: Mapping[str, int]) -> SteinerAnswer:
    """Dijkstra for two distinct terminals, Mehlhorn otherwise."""
    if len(set(terminals.values())) == 2:
        return path_answer(wg, terminals)
    return steiner_2approx(wg, terminals)


def answer_distance(ans: SteinerAnswer) -> float:
    """Mean tree hop distance over unordered keyword pairs."""
    if not ans.hop_distances:
        return 0.0
    return sum(ans.hop_distances.values()) / len(ans.hop_distances)


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def export_answer_dot(ans: SteinerAnswer, g: TextAttributedGraph | None = None) -> str:
    term_nodes = {}
    for kw, v in ans.terminals.items():
        term_nodes.setdefault(v, []).append(kw)
    lines = ["graph answer {", "  node [shape=box];"]
    for v in ans.nodes:
        label = _dot_escape(g.orig_ids[v] if g is not None else str(v))
        if v in term_nodes:
            label += "\\n[" + _dot_escape(", ".join(term_nodes[v])) + "]"
            lines.append(f'  n{v} [label="{label}", style=filled, fillcolor=gold];')
        else:
            lines.append(f'  n{v} [label="{label}"];')
    for e in ans.edges:
        lines.append(f'  n{e.src} -- n{e.dst} [label="f*={e.importance:.4f} w*={e.weight:.4f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
