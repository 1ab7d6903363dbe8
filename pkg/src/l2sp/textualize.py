"""Path textualization: attribute cleaning, PositionRank keyphrases and path templates."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import GraphKind, TextAttributedGraph

log = logging.getLogger(__name__)

_URL = re.compile(r"(?:https?://|ftp://|www\.)\S+", re.IGNORECASE)
_KEEP_PUNCT = set(".,;:-()")
_WS = re.compile(r"\s+")
_WORD = re.compile(r"[^\W_]+")

HOMOGENEOUS_PREFIX = "paper with content:"
HOMOGENEOUS_EDGE = "cites"
HETEROGENEOUS_EDGE = "linked to"


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    text = resources.files("l2sp").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def load_stopwords(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())


def clean_text(raw: str) -> str:
    """Strip links, control characters and non-text symbols; collapse whitespace."""
    text = _URL.sub(" ", raw)
    chars = []
    for ch in text:
        if ch.isalnum() or ch in _KEEP_PUNCT:
            chars.append(ch)
        elif ch.isspace() or unicodedata.category(ch)[0] in "CSPZ":
            chars.append(" ")
    return _WS.sub(" ", "".join(chars)).strip()


def words(text: str) -> list[str]:
    return [w.lower() for w in _WORD.findall(text)]


@dataclass(frozen=True)
class TextualizerConfig:
    max_phrases: int = 5
    window: int = 3
    damping: float = 0.85
    tol: float = 1e-8
    max_iter: int = 1000
    min_word_len: int = 3
    max_phrase_words: int = 3
    stopwords: frozenset[str] = field(default_factory=default_stopwords)

    def is_candidate(self, word: str) -> bool:
        return len(word) >= self.min_word_len and word not in self.stopwords


@dataclass
class WordScores:
    words: list[str]
    scores: np.ndarray
    iterations: int
    residual: float

    def as_dict(self) -> dict[str, float]:
        return {w: float(s) for w, s in zip(self.words, self.scores)}


def positionrank(tokens: Sequence[str], cfg: TextualizerConfig = TextualizerConfig()) -> WordScores:
    """Position-biased PageRank over the candidate-word co-occurrence graph.

    ``tokens`` is the full lowercased token stream; positions are 1-indexed over
    it, and two candidate words are linked when they fall in the same window of
    ``cfg.window`` consecutive tokens.
    """
    index: dict[str, int] = {}
    cand_pos: list[tuple[int, int]] = []
    for pos, tok in enumerate(tokens):
        if cfg.is_candidate(tok):
            idx = index.setdefault(tok, len(index))
            cand_pos.append((pos, idx))
    n = len(index)
    vocab = list(index)
    if n == 0:
        return WordScores([], np.zeros(0), 0, 0.0)

    bias = np.zeros(n)
    for pos, idx in cand_pos:
        bias[idx] += 1.0 / (pos + 1)
    bias /= bias.sum()

    weights = np.zeros((n, n))
    for a in range(len(cand_pos)):
        pa, ia = cand_pos[a]
        for b in range(a + 1, len(cand_pos)):
            pb, ib = cand_pos[b]
            if pb - pa >= cfg.window:
                break
            if ia != ib:
                weights[ia, ib] += 1.0
                weights[ib, ia] += 1.0

    out_deg = weights.sum(axis=1)
    dangling = out_deg == 0
    trans = np.divide(weights, out_deg[:, None], out=np.zeros_like(weights), where=~dangling[:, None])

    scores = bias.copy()
    residual = np.inf
    it = 0
    while it < cfg.max_iter:
        it += 1
        new = (1 - cfg.damping) * bias + cfg.damping * (trans.T @ scores + scores[dangling].sum() * bias)
        residual = float(np.abs(new - scores).sum())
        scores = new
        if residual < cfg.tol:
            break
    scores = scores / scores.sum()
    return WordScores(vocab, scores, it, residual)


@dataclass(frozen=True)
class KeyphraseSet:
    node: int
    phrases: tuple[tuple[str, float], ...] = ()

    @property
    def texts(self) -> list[str]:
        return [p for p, _ in self.phrases]


def extract_keyphrases(
    text: str, max_phrases: int | None = None, cfg: TextualizerConfig = TextualizerConfig(), node: int = -1
) -> KeyphraseSet:
    max_phrases = cfg.max_phrases if max_phrases is None else max_phrases
    tokens = words(text)
    ws = positionrank(tokens, cfg)
    if not ws.words:
        return KeyphraseSet(node)
    score = ws.as_dict()

    phrases: dict[str, tuple[float, int]] = {}

    def flush(run: list[tuple[int, str]]):
        for i in range(0, len(run), cfg.max_phrase_words):
            chunk = run[i : i + cfg.max_phrase_words]
            phrase = " ".join(w for _, w in chunk)
            if phrase not in phrases:
                phrases[phrase] = (sum(score[w] for _, w in chunk), chunk[0][0])

    run: list[tuple[int, str]] = []
    for pos, tok in enumerate(tokens):
        if cfg.is_candidate(tok):
            run.append((pos, tok))
        elif run:
            flush(run)
            run = []
    if run:
        flush(run)

    ranked = sorted(phrases.items(), key=lambda kv: (-kv[1][0], kv[1][1]))
    return KeyphraseSet(node, tuple((p, s) for p, (s, _) in ranked[:max_phrases]))


@dataclass(frozen=True)
class TextualizedPath:
    text: str
    nodes: tuple[int, ...]
    node_spans: tuple[tuple[int, int], ...]
    edge_spans: tuple[tuple[int, int], ...]

    @property
    def source_segment(self) -> tuple[int, ...]:
        return self.nodes

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "nodes": list(self.nodes),
            "node_spans": [list(s) for s in self.node_spans],
            "edge_spans": [list(s) for s in self.edge_spans],
        }

    @classmethod
    def from_json(cls, rec: Mapping) -> "TextualizedPath":
        return cls(
            rec["text"],
            tuple(rec["nodes"]),
            tuple(tuple(s) for s in rec["node_spans"]),
            tuple(tuple(s) for s in rec["edge_spans"]),
        )


def node_attribute_text(g: TextAttributedGraph, node: int, phrases: KeyphraseSet) -> str:
    """The reduced node attribute as it appears inside a node span."""
    body = ", ".join(phrases.texts)
    if g.kind is GraphKind.HETEROGENEOUS:
        node_type = g.nodes[node].node_type
        return f"{node_type} {body}" if body else node_type
    return body


def textualize_path(
    seg: Sequence[int], g: TextAttributedGraph, phrases: Mapping[int, KeyphraseSet]
) -> TextualizedPath:
    homogeneous = g.kind is GraphKind.HOMOGENEOUS
    parts: list[str] = []
    node_spans = []
    edge_spans = []
    cursor = 0

    def emit(piece: str) -> tuple[int, int]:
        nonlocal cursor
        parts.append(piece)
        start = cursor
        cursor += len(piece)
        return start, cursor

    for i, v in enumerate(seg):
        if i > 0:
            edge = clean_text(g.edge_text(seg[i - 1], v)).lower()
            if not edge:
                edge = HOMOGENEOUS_EDGE if homogeneous else HETEROGENEOUS_EDGE
            emit(" ")
            edge_spans.append(emit(edge))
            emit(" ")
        attr = node_attribute_text(g, v, phrases[v])
        if homogeneous:
            emit(HOMOGENEOUS_PREFIX + (" " if attr else ""))
        node_spans.append(emit(attr))
    emit(".")
    return TextualizedPath("".join(parts), tuple(seg), tuple(node_spans), tuple(edge_spans))


def compute_keyphrases(
    g: TextAttributedGraph, nodes: Iterable[int], cfg: TextualizerConfig = TextualizerConfig()
) -> dict[int, KeyphraseSet]:
    return {v: extract_keyphrases(clean_text(g.nodes[v].raw_text), cfg=cfg, node=v) for v in sorted(set(nodes))}


@dataclass
class Corpus:
    paths: list[TextualizedPath]
    keyphrases: dict[int, KeyphraseSet]
    empty_nodes: list[int]

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def texts(self) -> list[str]:
        return [p.text for p in self.paths]


def build_corpus(
    segments: Sequence[Sequence[int]],
    g: TextAttributedGraph,
    cfg: TextualizerConfig = TextualizerConfig(),
    keyphrases: Mapping[int, KeyphraseSet] | None = None,
) -> Corpus:
    if not segments:
        raise ValueError("cannot build a corpus from zero segments")
    needed = {v for seg in segments for v in seg}
    cache = dict(keyphrases) if keyphrases is not None else {}
    missing = needed - cache.keys()
    if missing:
        cache.update(compute_keyphrases(g, missing, cfg))
    empty = sorted(v for v in needed if not cache[v].phrases)
    if empty:
        log.info("%d nodes render with an empty phrase list", len(empty))
    paths = [textualize_path(seg, g, cache) for seg in segments]
    return Corpus(paths, cache, empty)


def write_corpus(corpus: Corpus | Iterable[TextualizedPath], path: str | Path) -> None:
    paths = corpus.paths if isinstance(corpus, Corpus) else corpus
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in paths:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")


def read_corpus(path: str | Path) -> list[TextualizedPath]:
    with open(path, encoding="utf-8") as fh:
        return [TextualizedPath.from_json(json.loads(line)) for line in fh if line.strip()]


def write_keyphrases(keyphrases: Mapping[int, KeyphraseSet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in sorted(keyphrases):
            rec = {"node": v, "phrases": [[p, s] for p, s in keyphrases[v].phrases]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_keyphrases(path: str | Path) -> dict[int, KeyphraseSet]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["node"]] = KeyphraseSet(rec["node"], tuple((p, s) for p, s in rec["phrases"]))
    return out
