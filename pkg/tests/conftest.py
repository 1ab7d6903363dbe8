import numpy as np
import pytest

from l2sp.graph import TextAttributedGraph


def random_connected_edges(rng: np.random.Generator, n: int, extra: float = 0.2) -> list[tuple[int, int]]:
    """Random spanning tree plus each remaining pair with probability ``extra``."""
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[i]), int(order[rng.integers(i)])))) for i in range(1, n)}
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < extra:
                edges.add((u, v))
    return sorted(edges)


def random_connected_graph(seed: int, n: int, extra: float = 0.2) -> TextAttributedGraph:
    rng = np.random.default_rng(seed)
    return TextAttributedGraph.from_edges(n, random_connected_edges(rng, n, extra))


def path_graph(n: int) -> TextAttributedGraph:
    return TextAttributedGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


@pytest.fixture
def toy_dir():
    from pathlib import Path

    return Path(__file__).resolve().parent.parent / "data" / "toy30"


def separable_clusters(seed: int, n: int = 200, d: int = 8):
    """Two Gaussian clusters at +-3 along every axis; labels are the cluster ids."""
    from l2sp.embeddings import EmbeddingTable

    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.standard_normal((n, d)) + np.where(y[:, None] == 1, 3.0, -3.0)
    return EmbeddingTable.from_matrix(x), {i: f"c{y[i]}" for i in range(n)}


def planted_partition(seed: int, n: int = 120, k: int = 4, p_in: float = 0.95, p_out: float = 0.002):
    """Dense communities with rare cross edges, and embeddings that encode community membership."""
    from l2sp.embeddings import EmbeddingTable

    rng = np.random.default_rng(seed)
    comm = np.arange(n) % k
    edges = [
        (u, v)
        for u in range(n)
        for v in range(u + 1, n)
        if rng.random() < (p_in if comm[u] == comm[v] else p_out)
    ]
    g = TextAttributedGraph.from_edges(n, edges)
    onehot = np.zeros((n, 2 * k))
    onehot[np.arange(n), comm] = 2.0
    x = onehot + 0.3 * rng.standard_normal((n, 2 * k))
    return g, EmbeddingTable.from_matrix(x)
