"""Training loop, sequence log-probabilities, gradient checking and node embeddings."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .model import ToyModel
from .vocab import BOS, EOS, FILLER, TokenizedText, Vocab, tokenize_with_offsets

log = logging.getLogger(__name__)

PRECISIONS = {"f32": np.float32, "f64": np.float64}


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    batch_size: int = 8
    steps: int = 1000
    seed: int = 0
    precision: str = "f64"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class TrainResult:
    model: ToyModel
    losses: list[float] = field(default_factory=list)


def _ids(seq) -> np.ndarray:
    return seq.ids if isinstance(seq, TokenizedText) else np.asarray(seq, dtype=np.int64)


def clm_loss(model: ToyModel, tokens) -> float:
    """Mean next-token cross-entropy of one sequence (positions 2..S)."""
    loss, _ = model.loss_and_grads([_ids(tokens)], with_grads=False)
    return loss


def corpus_loss(model: ToyModel, sequences: Sequence) -> float:
    """Mean over texts of the per-text loss."""
    return model.loss_and_grads([_ids(s) for s in sequences], with_grads=False)[0]


def train(model: ToyModel, sequences: Sequence, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch Adam training; batches are drawn from seeded per-epoch shuffles."""
    if not sequences:
        raise ValueError("cannot train on an empty corpus")
    data = [_ids(s) for s in sequences]
    model = model.astype(cfg.dtype) if model.dtype != cfg.dtype else model
    opt = nn.Adam(model.params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    order: list[int] = []
    losses = []
    for step in range(cfg.steps):
        batch = []
        while len(batch) < min(cfg.batch_size, len(data)):
            if not order:
                order = rng.permutation(len(data)).tolist()
            batch.append(data[order.pop()])
        loss, grads = model.loss_and_grads(batch)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at step {step}")
        opt.step(grads)
        losses.append(loss)
    return TrainResult(model, losses)


@dataclass
class LogProbReport:
    total: float
    per_span: dict[tuple[str, int], float]
    per_token: np.ndarray

    @property
    def residual(self) -> float:
        """Sum of the grouped span log-probs minus the sequence total."""
        return math.fsum(self.per_span.values()) - self.total


def sequence_logprob(model: ToyModel, tok: TokenizedText) -> LogProbReport:
    """log p(t_2..t_S | t_1) and the same summands grouped by node, edge and filler spans."""
    ids = tok.ids
    logp = nn.log_softmax(model.forward_logits(ids)[:-1].astype(np.float64))
    per_token = logp[np.arange(len(ids) - 1), ids[1:]]
    groups: dict[tuple[str, int], list[float]] = defaultdict(list)
    for j, lp in enumerate(per_token, start=1):
        groups[tok.tags[j]].append(float(lp))
    per_span = {key: math.fsum(vals) for key, vals in groups.items()}
    return LogProbReport(float(per_token.sum()), per_span, per_token)


def finite_difference_gradcheck(
    model: ToyModel, tokens, epsilon: float = 1e-5, n_checks: int = 200, seed: int = 0
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks ``n_checks`` parameter entries drawn uniformly over all parameters.
    """
    if model.dtype != np.float64:
        raise ValueError("gradient checks need a float64 model")
    ids = _ids(tokens)
    _, grads = model.loss_and_grads([ids])
    names = list(model.params)
    sizes = np.array([model.params[n].size for n in names])
    rng = np.random.default_rng(seed)
    flat = rng.choice(sizes.sum(), size=min(n_checks, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for f in flat:
        i = int(np.searchsorted(bounds, f, side="right"))
        name = names[i]
        idx = np.unravel_index(int(f - (bounds[i] - sizes[i])), model.params[name].shape)
        p = model.params[name]
        orig = p[idx]
        p[idx] = orig + epsilon
        up = model.loss_and_grads([ids], with_grads=False)[0]
        p[idx] = orig - epsilon
        down = model.loss_and_grads([ids], with_grads=False)[0]
        p[idx] = orig
        numeric = (up - down) / (2 * epsilon)
        analytic = float(grads[name][idx])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


@dataclass
class NodeEmbedding:
    vector: np.ndarray
    n_tokens: int

    @property
    def empty(self) -> bool:
        return self.n_tokens == 0


def extract_node_embedding(model: ToyModel, node_text: str, vocab: Vocab) -> NodeEmbedding:
    """Mean of the last-layer representations of the node's attribute tokens."""
    toks = vocab.encode(t for t, _, _ in tokenize_with_offsets(node_text))
    toks = toks[: model.cfg.max_len - 2]
    if not toks:
        return NodeEmbedding(np.zeros(model.cfg.d, dtype=model.dtype), 0)
    hidden = model.hidden_states([BOS] + toks + [EOS])
    return NodeEmbedding(hidden[1 : 1 + len(toks)].mean(axis=0), len(toks))
