"""Downstream evaluation of node embeddings: node classification and edge validation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import f1_score
from sklearn.model_selection import StratifiedKFold

from .embeddings import EmbeddingTable
from .graph import TextAttributedGraph
from .lm import nn

log = logging.getLogger(__name__)

N_FOLDS = 5


@dataclass
class MetricsReport:
    macro_f1: list[float] = field(default_factory=list)
    micro_f1: list[float] = field(default_factory=list)
    auc: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @staticmethod
    def _mean(xs: list[float]) -> float | None:
        return math.fsum(xs) / len(xs) if xs else None

    @property
    def mean(self) -> dict[str, float | None]:
        return {k: self._mean(getattr(self, k)) for k in ("macro_f1", "micro_f1", "auc", "accuracy")}

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if v}
        out["mean"] = {k: v for k, v in self.mean.items() if v is not None}
        return out


def auc_rank(labels, scores) -> float:
    """ROC AUC from the Mann-Whitney rank statistic (average ranks for ties)."""
    labels = np.asarray(labels).astype(bool)
    ranks = rankdata(np.asarray(scores, dtype=np.float64))
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc_pairwise(labels, scores) -> float:
    """ROC AUC as P(score_pos > score_neg) + P(tie) / 2 over all pairs."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    pos, neg = scores[labels], scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both positive and negative examples")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def hadamard(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.asarray(x) * np.asarray(y)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def train_softmax_classifier(
    X: np.ndarray, y: np.ndarray, n_classes: int, epochs=50, lr=2e-4, batch_size=8, seed=0
) -> dict[str, np.ndarray]:
    """One linear layer with softmax cross-entropy, trained with Adam."""
    rng = np.random.default_rng(seed)
    params = {"w": rng.standard_normal((X.shape[1], n_classes)) * 0.02, "b": np.zeros(n_classes)}
    opt = nn.Adam(params, lr=lr)
    for _ in range(epochs):
        for idx in _batches(len(X), batch_size, rng):
            logits, x_in = nn.linear_forward(X[idx], params["w"], params["b"])
            probs = nn.softmax(logits)
            probs[np.arange(len(idx)), y[idx]] -= 1.0
            _, dw, db = nn.linear_backward(probs / len(idx), x_in, params["w"])
            opt.step({"w": dw, "b": db})
    return params


def train_pair_mlp(X: np.ndarray, y: np.ndarray, epochs=100, lr=2e-4, batch_size=8, seed=0) -> dict[str, np.ndarray]:
    """Two-layer network d -> d/2 -> 1 with ReLU and a logistic output."""
    rng = np.random.default_rng(seed)
    d = X.shape[1]
    hdim = max(1, d // 2)
    params = {
        "w1": rng.standard_normal((d, hdim)) * math.sqrt(2.0 / d),
        "b1": np.zeros(hdim),
        "w2": rng.standard_normal((hdim, 1)) * math.sqrt(1.0 / hdim),
        "b2": np.zeros(1),
    }
    opt = nn.Adam(params, lr=lr)
    for _ in range(epochs):
        for idx in _batches(len(X), batch_size, rng):
            h, c1 = nn.linear_forward(X[idx], params["w1"], params["b1"])
            a, c_relu = nn.relu_forward(h)
            z, c2 = nn.linear_forward(a, params["w2"], params["b2"])
            p = 1.0 / (1.0 + np.exp(-z[:, 0]))
            dz = ((p - y[idx]) / len(idx))[:, None]
            da, dw2, db2 = nn.linear_backward(dz, c2, params["w2"])
            dh = nn.relu_backward(da, c_relu)
            _, dw1, db1 = nn.linear_backward(dh, c1, params["w1"])
            opt.step({"w1": dw1, "b1": db1, "w2": dw2, "b2": db2})
    return params


def pair_mlp_scores(params: Mapping[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    h = np.maximum(X @ params["w1"] + params["b1"], 0.0)
    z = (h @ params["w2"] + params["b2"])[:, 0]
    return 1.0 / (1.0 + np.exp(-z))


def node_classification_eval(
    table: EmbeddingTable,
    labels: Mapping[int, str],
    seed: int = 0,
    epochs: int = 50,
    lr: float = 2e-4,
    batch_size: int = 8,
) -> MetricsReport:
    nodes = sorted(labels)
    missing = [v for v in nodes if v not in table]
    if missing:
        raise KeyError(f"no embedding for labeled nodes {missing[:20]}")
    classes = sorted(set(labels.values()))
    if len(classes) < 2:
        raise ValueError("node classification needs at least two classes")
    cls_index = {c: i for i, c in enumerate(classes)}
    X = table.matrix(nodes)
    y = np.array([cls_index[labels[v]] for v in nodes])
    report = MetricsReport()
    folds = StratifiedKFold(n_splits=N_FOLDS, shuffle=True, random_state=seed)
    for fold, (tr, te) in enumerate(folds.split(X, y)):
        params = train_softmax_classifier(X[tr], y[tr], len(classes), epochs, lr, batch_size, seed + fold)
        pred = (X[te] @ params["w"] + params["b"]).argmax(axis=1)
        absent = sorted(set(range(len(classes))) - set(y[te].tolist()))
        if absent:
            report.flags.append(f"fold {fold}: classes {[classes[i] for i in absent]} have no test instances")
        all_labels = list(range(len(classes)))
        report.macro_f1.append(float(f1_score(y[te], pred, labels=all_labels, average="macro", zero_division=0)))
        report.micro_f1.append(float(f1_score(y[te], pred, labels=all_labels, average="micro", zero_division=0)))
        report.accuracy.append(float((pred == y[te]).mean()))
    return report


def sample_validation_pairs(g: TextAttributedGraph, seed: int = 0, holdout: float = 0.2):
    """Held-out edges (label 1) and an equal number of uniformly drawn non-edges (label 0)."""
    if g.m < 10:
        raise ValueError(f"edge validation needs at least 10 edges, graph has {g.m}")
    rng = np.random.default_rng(seed)
    n_pos = max(1, int(round(holdout * g.m)))
    pos_idx = np.sort(rng.choice(g.m, size=n_pos, replace=False))
    positives = [(g.edges[i].src, g.edges[i].dst) for i in pos_idx]
    n_non_edges = g.n * (g.n - 1) // 2 - g.m
    if n_non_edges < n_pos:
        raise ValueError(f"only {n_non_edges} non-edges available, {n_pos} needed")
    negatives: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    while len(negatives) < n_pos:
        u, v = (int(x) for x in rng.integers(g.n, size=2))
        key = (min(u, v), max(u, v))
        if u == v or key in seen or g.has_edge(u, v):
            continue
        seen.add(key)
        negatives.append(key)
    return positives, negatives


def edge_validation_eval(
    table: EmbeddingTable,
    g: TextAttributedGraph,
    split_seed: int = 0,
    epochs: int = 100,
    lr: float = 2e-4,
    batch_size: int = 8,
) -> MetricsReport:
    positives, negatives = sample_validation_pairs(g, split_seed)
    pairs = positives + negatives
    X = np.stack([hadamard(table[u], table[v]) for u, v in pairs]).astype(np.float64)
    y = np.array([1] * len(positives) + [0] * len(negatives))
    report = MetricsReport()
    folds = StratifiedKFold(n_splits=N_FOLDS, shuffle=True, random_state=split_seed)
    for fold, (tr, te) in enumerate(folds.split(X, y)):
        params = train_pair_mlp(X[tr], y[tr].astype(np.float64), epochs, lr, batch_size, split_seed + fold)
        scores = pair_mlp_scores(params, X[te])
        report.auc.append(auc_rank(y[te], scores))
        report.accuracy.append(float(((scores >= 0.5) == y[te]).mean()))
    return report
