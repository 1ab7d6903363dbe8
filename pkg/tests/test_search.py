import math
import re

import networkx as nx
import numpy as np
import pytest

from conftest import random_connected_edges
from l2sp.graph import TextAttributedGraph
from l2sp.query_graph import WeightedEdge, WeightedQueryGraph, uniform_query_graph
from l2sp.search import (
    InfeasibleQuery,
    MatchMode,
    QuerySpec,
    answer,
    answer_distance,
    dijkstra_min_weight_path,
    export_answer_dot,
    kruskal,
    map_keywords_to_terminals,
    path_answer,
    steiner_2approx,
    steiner_exact_oracle,
)


def weighted(n, pairs, rng=None, weights=None):
    edges = []
    for i, (u, v) in enumerate(pairs):
        w = float(weights[i]) if weights is not None else float(rng.uniform(0.01, 3.0))
        edges.append(WeightedEdge(u, v, math.exp(-w), w))
    return WeightedQueryGraph(n, edges)


def random_weighted(seed, n, extra=0.3):
    rng = np.random.default_rng(seed)
    return weighted(n, random_connected_edges(rng, n, extra), rng)


def to_nx(wg):
    h = nx.Graph()
    h.add_nodes_from(range(wg.n))
    h.add_weighted_edges_from((e.src, e.dst, e.weight) for e in wg.edges)
    return h


def assert_valid_tree(ans, wg):
    h = nx.Graph([(e.src, e.dst) for e in ans.edges])
    terms = set(ans.terminals.values())
    if not ans.edges:
        assert len(terms) == 1
        return
    assert nx.is_tree(h)
    assert terms <= set(h.nodes)
    assert all(h.degree(v) > 1 for v in h.nodes if v not in terms)
    assert all(wg.has_edge(e.src, e.dst) for e in ans.edges)
    assert abs(ans.cost - math.fsum(e.weight for e in ans.edges)) < 1e-9


# -- keyword mapping ---------------------------------------------------------------


def text_graph(texts):
    return TextAttributedGraph.from_edges(len(texts), [], texts=texts)


def test_keyword_maps_to_matching_node():
    g = text_graph(["graph mining", "Epilepsy and seizures", "protein"])
    assert map_keywords_to_terminals(g, QuerySpec(("epilepsy", "protein"))) == {"epilepsy": 1, "protein": 2}


def test_equal_scores_pick_lower_id_and_higher_score_wins():
    g = text_graph(["tree search", "graph data", "tree search", "tree"])
    assert map_keywords_to_terminals(g, QuerySpec(("search", "graph")))["search"] == 0
    assert map_keywords_to_terminals(g, QuerySpec(("tree", "graph")))["tree"] == 3


def test_unmatched_keyword_is_infeasible():
    with pytest.raises(InfeasibleQuery, match="zzzz"):
        map_keywords_to_terminals(text_graph(["graph", "tree"]), QuerySpec(("graph", "zzzz")))


def test_substring_mode_and_phrases():
    g = text_graph(["Steiner trees", "keyword search engines"])
    q = QuerySpec(("STEIN", "word sea"), MatchMode.SUBSTRING_CI)
    assert map_keywords_to_terminals(g, q) == {"STEIN": 0, "word sea": 1}
    with pytest.raises(InfeasibleQuery):
        map_keywords_to_terminals(g, QuerySpec(("stein", "search")))
    assert map_keywords_to_terminals(g, QuerySpec(("keyword search", "trees")))["keyword search"] == 1


def test_query_spec_validation():
    assert QuerySpec(("a", "b", "a")).keywords == ("a", "b")
    for bad in (("a",), ("a", "a"), ("a", " ")):
        with pytest.raises(ValueError):
            QuerySpec(bad)


# -- Dijkstra ----------------------------------------------------------------------


def test_two_routes_prefers_cheaper():
    wg = weighted(4, [(0, 1), (1, 3), (0, 2), (2, 3)], weights=[0.1, 0.2, 0.4, 0.5])
    path, cost = dijkstra_min_weight_path(wg, 0, 3)
    assert path == (0, 1, 3) and abs(cost - 0.3) < 1e-12


def test_same_node_path():
    wg = weighted(2, [(0, 1)], weights=[1.0])
    assert dijkstra_min_weight_path(wg, 1, 1) == ((1,), 0.0)
    ans = path_answer(wg, {"a": 1, "b": 1})
    assert ans.edges == [] and ans.cost == 0 and answer_distance(ans) == 0


def test_lexicographic_tie_break():
    wg = weighted(4, [(0, 2), (2, 3), (0, 1), (1, 3)], weights=[1.0, 1.0, 1.0, 1.0])
    assert dijkstra_min_weight_path(wg, 0, 3)[0] == (0, 1, 3)


def test_unreachable_is_infeasible():
    wg = weighted(4, [(0, 1), (2, 3)], weights=[1.0, 1.0])
    with pytest.raises(InfeasibleQuery):
        dijkstra_min_weight_path(wg, 0, 3)
    with pytest.raises(InfeasibleQuery):
        steiner_2approx(wg, [0, 1, 3])


@pytest.mark.parametrize("seed", range(100))
def test_dijkstra_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    wg = random_weighted(seed, n)
    h = to_nx(wg)
    s, t = (int(x) for x in rng.choice(n, size=2, replace=False))
    best = min(
        math.fsum(wg.weight(u, v) for u, v in zip(p, p[1:])) for p in nx.all_simple_paths(h, s, t)
    )
    path, cost = dijkstra_min_weight_path(wg, s, t)
    assert abs(cost - best) < 1e-9
    assert abs(math.fsum(wg.weight(u, v) for u, v in zip(path, path[1:])) - cost) < 1e-9


# -- Steiner trees -------------------------------------------------------------------


def test_star_three_leaves():
    wg = uniform_query_graph(TextAttributedGraph.from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)]))
    ans = steiner_2approx(wg, [1, 2, 3])
    assert ans.cost == 3 and sorted((e.src, e.dst) for e in ans.edges) == [(0, 1), (0, 2), (0, 3)]
    assert answer_distance(ans) == 2.0
    assert steiner_exact_oracle(wg, [1, 2, 3]) == 3


def test_terminals_on_a_path():
    wg = uniform_query_graph(TextAttributedGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]))
    ans = steiner_2approx(wg, [1, 2, 3])
    assert sorted((e.src, e.dst) for e in ans.edges) == [(1, 2), (2, 3)]


def test_four_cycle_with_chord_hand_checked():
    # cycle 0-1-2-3-0 plus chord 0-2; terminals {1, 2, 3}
    wg = weighted(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], weights=[1.0, 2.0, 2.0, 1.0, 0.5])
    # candidate trees: {12,23}=4.0, {01,03,02}=2.5, {01,12,03}=4, {12,02,03}=3.5, {01,02,23}=3.5 ...
    assert steiner_exact_oracle(wg, [1, 2, 3]) == 2.5
    ans = steiner_2approx(wg, [1, 2, 3])
    assert_valid_tree(ans, wg)
    assert ans.cost <= 2 * (1 - 1 / 3) * 2.5 + 1e-9


def test_oracle_with_all_terminals_is_mst():
    wg = random_weighted(4, 9)
    mst = nx.minimum_spanning_tree(to_nx(wg))
    assert abs(steiner_exact_oracle(wg, range(9)) - mst.size(weight="weight")) < 1e-9


def test_oracle_size_limit():
    with pytest.raises(ValueError):
        steiner_exact_oracle(random_weighted(0, 17), [0, 1])


@pytest.mark.parametrize("seed", range(30))
def test_two_terminals_agree_with_dijkstra(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11))
    wg = random_weighted(seed, n)
    s, t = (int(x) for x in rng.choice(n, size=2, replace=False))
    d = dijkstra_min_weight_path(wg, s, t)[1]
    assert abs(steiner_2approx(wg, [s, t]).cost - d) < 1e-9
    assert abs(steiner_exact_oracle(wg, [s, t]) - d) < 1e-9
    assert abs(answer(wg, {"a": s, "b": t}).cost - d) < 1e-9


@pytest.mark.parametrize("seed", range(100))
def test_mehlhorn_bound_and_validity(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(4, 11))
    m = int(rng.choice([3, 4]))
    wg = random_weighted(1000 + seed, n, 0.25)
    terms = sorted(int(x) for x in rng.choice(n, size=m, replace=False))
    ans = steiner_2approx(wg, terms)
    assert_valid_tree(ans, wg)
    assert ans.cost <= 2 * (1 - 1 / m) * steiner_exact_oracle(wg, terms) + 1e-9


def test_kruskal_matches_networkx():
    wg = random_weighted(8, 12, 0.4)
    ours = kruskal(range(12), [(e.weight, e.src, e.dst) for e in wg.edges])
    assert abs(math.fsum(w for w, _, _ in ours) - nx.minimum_spanning_tree(to_nx(wg)).size(weight="weight")) < 1e-12


# -- answer distance and DOT export ------------------------------------------------------


def test_answer_distance_on_path():
    wg = uniform_query_graph(TextAttributedGraph.from_edges(5, [(i, i + 1) for i in range(4)]))
    ans = answer(wg, {"q1": 0, "q2": 4})
    assert answer_distance(ans) == 4.0
    js = ans.to_json()
    assert js["answer_distance"] == 4.0 and js["sum_distance"] == 4 and js["cost"] == 4.0
    assert set(js) == {"terminals", "edges", "cost", "answer_distance", "sum_distance"}


def test_dot_export():
    g = TextAttributedGraph.from_edges(5, [(i, i + 1) for i in range(4)])
    wg = uniform_query_graph(g)
    ans = answer(wg, {"a": 0, "b": 3})
    dot = export_answer_dot(ans, g)
    assert dot == export_answer_dot(answer(wg, {"a": 0, "b": 3}), g)
    lines = dot.splitlines()
    assert lines[0] == "graph answer {" and lines[-1] == "}"
    assert sum(" -- " in ln for ln in lines) == 3
    assert sum(bool(re.match(r"\s+n\d+ \[", ln)) for ln in lines) == 4
    assert sum("fillcolor=gold" in ln for ln in lines) == 2
    single = export_answer_dot(path_answer(wg, {"a": 2, "b": 2}), g).splitlines()
    assert sum("fillcolor=gold" in ln for ln in single) == 1 and not any(" -- " in ln for ln in single)
