"""Closed word/punctuation vocabulary and span-aware tokenization."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..textualize import TextualizedPath

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")

_TOKEN = re.compile(r"[^\W_]+|[^\w\s]|_")

NODE, EDGE, FILLER = "node", "edge", "filler"


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN.finditer(text)]


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        seen = sorted({tok for text in texts for tok, _, _ in tokenize_with_offsets(text)})
        if not seen:
            raise ValueError("cannot build a vocabulary from an empty corpus")
        return cls(seen)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, t in enumerate(self.itos):
                fh.write(f"{t}\t{i}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line:
                    tok, idx = line.rsplit("\t", 1)
                    pairs.append((int(idx), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError(f"{path}: vocabulary ids are not dense")
        if tuple(t for _, t in pairs[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"{path}: special tokens missing")
        return cls([t for _, t in pairs[len(SPECIALS) :]])


@dataclass(frozen=True)
class TokenizedText:
    """Token ids (BOS ... EOS) and, per token, the span it belongs to.

    ``tags[j]`` is ``("node", i)``, ``("edge", i)`` or ``("filler", -1)``.
    """

    ids: np.ndarray
    tags: tuple[tuple[str, int], ...]

    def __len__(self) -> int:
        return len(self.ids)


def _tag_for(start: int, end: int, node_spans, edge_spans) -> tuple[str, int]:
    for kind, spans in ((NODE, node_spans), (EDGE, edge_spans)):
        for i, (s, e) in enumerate(spans):
            if s <= start and end <= e:
                return kind, i
    return FILLER, -1


def tokenize_text(
    text: str,
    vocab: Vocab,
    max_len: int,
    node_spans: Sequence[tuple[int, int]] = (),
    edge_spans: Sequence[tuple[int, int]] = (),
) -> TokenizedText:
    toks = tokenize_with_offsets(text)
    ids = [BOS] + vocab.encode(t for t, _, _ in toks) + [EOS]
    tags = [(FILLER, -1)] + [_tag_for(s, e, node_spans, edge_spans) for _, s, e in toks] + [(FILLER, -1)]
    return TokenizedText(np.asarray(ids[:max_len], dtype=np.int64), tuple(tags[:max_len]))


def tokenize_path(p: TextualizedPath, vocab: Vocab, max_len: int) -> TokenizedText:
    return tokenize_text(p.text, vocab, max_len, p.node_spans, p.edge_spans)


def build_vocab_and_tokenize(
    corpus: Sequence[TextualizedPath], max_len: int = 128
) -> tuple[Vocab, list[TokenizedText]]:
    if not corpus:
        raise ValueError("cannot tokenize an empty corpus")
    vocab = Vocab.build(p.text for p in corpus)
    return vocab, [tokenize_path(p, vocab, max_len) for p in corpus]
