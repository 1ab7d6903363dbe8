"""Shortest-path sampling: long-to-short (L2SP) selection and ablation samplers."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import TextAttributedGraph, bfs_predecessors

log = logging.getLogger(__name__)

Path_ = tuple[int, ...]


class SamplerMode(str, enum.Enum):
    L2SP = "l2sp"
    RANDOM_WALK = "rw"
    RANDOM_SHORT_SP = "rssp"
    ONE_HOP = "1hop"


@dataclass(frozen=True)
class SamplerConfig:
    b: int = 1000
    L: int = 10
    k: int = 5
    ell: int = 3
    seed: int = 0
    mode: SamplerMode = SamplerMode.L2SP

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplerMode(self.mode))
        if self.b < 1 or self.L < 2 or self.k < 1 or self.ell < 2:
            raise ValueError(f"invalid sampler config: {self}")
        if self.mode is SamplerMode.L2SP and self.ell > self.L:
            raise ValueError(f"ell={self.ell} must not exceed L={self.L} in L2SP mode")


@dataclass(frozen=True)
class LongShortestPath:
    nodes: Path_
    source: int
    target: int

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class SamplingStats:
    attempts: int = 0
    skipped_sources: int = 0
    max_length: int = 0
    duplicates_removed: int = 0
    message: str = ""
    extra: dict = field(default_factory=dict)


def substream(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for (seed, stream); streams never overlap."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def _random_predecessor_paths(
    preds: dict[int, list[int]], s: int, t: int, k: int, rng: np.random.Generator
) -> list[Path_]:
    found: list[Path_] = []
    seen: set[Path_] = set()
    for _ in range(10 * k):
        path = [t]
        v = t
        while v != s:
            choices = preds[v]
            v = choices[int(rng.integers(len(choices)))] if len(choices) > 1 else choices[0]
            path.append(v)
        p = tuple(reversed(path))
        if p not in seen:
            seen.add(p)
            found.append(p)
            if len(found) == k:
                break
    return found


def enumerate_k_shortest_paths(
    g: TextAttributedGraph, s: int, t: int, k: int, seed: int = 0
) -> list[LongShortestPath]:
    """Up to ``k`` distinct s-t shortest paths drawn from the BFS shortest-path DAG.

    Paths are sampled by random predecessor walks from ``t`` back to ``s``, with
    at most ``10 * k`` walks; duplicates are rejected.
    """
    dist, preds = bfs_predecessors(g, s)
    if t not in dist:
        raise ValueError(f"node {t} is unreachable from {s}")
    paths = _random_predecessor_paths(preds, s, t, k, substream(seed, 0))
    return [LongShortestPath(p, s, t) for p in sorted(paths)]


def l2sp_cut(path: Sequence[int] | LongShortestPath, ell: int) -> list[Path_]:
    """Cut a long shortest path into segments of at most ``ell`` nodes.

    Segments start every ``ell - 1`` nodes, so consecutive segments share their
    cut node; the last segment holds the remainder.
    """
    if ell < 2:
        raise ValueError("ell must be >= 2")
    nodes = tuple(path.nodes if isinstance(path, LongShortestPath) else path)
    if len(nodes) <= ell:
        return [nodes]
    step = ell - 1
    return [nodes[i : i + ell] for i in range(0, len(nodes) - 1, step)]


def sample_long_shortest_paths(
    g: TextAttributedGraph, cfg: SamplerConfig
) -> tuple[list[LongShortestPath], SamplingStats]:
    if cfg.mode is not SamplerMode.L2SP:
        raise ValueError(f"sample_long_shortest_paths needs mode l2sp, got {cfg.mode.value}")
    stats = SamplingStats()
    order = substream(cfg.seed, 0).permutation(g.n)
    max_attempts = min(3 * cfg.b, g.n)
    accepted = 0
    out: list[LongShortestPath] = []
    for attempt in range(max_attempts):
        if accepted == cfg.b:
            break
        stats.attempts += 1
        s = int(order[attempt])
        dist, preds = bfs_predecessors(g, s)
        candidates = sorted(v for v, d in dist.items() if d >= cfg.L)
        if not candidates:
            stats.skipped_sources += 1
            continue
        # stream 0 is reserved for the source permutation
        rng = substream(cfg.seed, attempt + 1)
        tau = candidates[int(rng.integers(len(candidates)))]
        for p in _random_predecessor_paths(preds, s, tau, cfg.k, rng):
            out.append(LongShortestPath(p, s, tau))
            stats.max_length = max(stats.max_length, len(p) - 1)
        accepted += 1
    if not out:
        stats.message = f"no source has a node at distance >= {cfg.L}; graph diameter is smaller than L"
        log.warning(stats.message)
    out.sort(key=lambda p: (p.source, p.target, p.nodes))
    return out, stats


def _sources(g: TextAttributedGraph, cfg: SamplerConfig) -> list[int]:
    order = substream(cfg.seed, 0).permutation(g.n)
    return [int(v) for v in order[: min(cfg.b, g.n)]]


def sample_ablation_paths(
    g: TextAttributedGraph, cfg: SamplerConfig
) -> tuple[list[Path_], SamplingStats]:
    stats = SamplingStats()
    out: list[Path_] = []
    for i, v in enumerate(_sources(g, cfg)):
        stats.attempts += 1
        if not g.adjacency[v]:
            stats.skipped_sources += 1
            continue
        rng = substream(cfg.seed, i + 1)
        if cfg.mode is SamplerMode.RANDOM_WALK:
            walk = [v]
            while len(walk) < cfg.ell:
                nbrs = g.adjacency[walk[-1]]
                walk.append(nbrs[int(rng.integers(len(nbrs)))])
            out.append(tuple(walk))
        elif cfg.mode is SamplerMode.RANDOM_SHORT_SP:
            dist, preds = bfs_predecessors(g, v)
            near = sorted(u for u, d in dist.items() if 1 <= d <= cfg.ell - 1)
            t = near[int(rng.integers(len(near)))]
            out.extend(_random_predecessor_paths(preds, v, t, 1, rng))
        elif cfg.mode is SamplerMode.ONE_HOP:
            out.extend((v, u) for u in g.adjacency[v])
        else:
            raise ValueError(f"sample_ablation_paths does not handle mode {cfg.mode.value}")
        stats.max_length = max(stats.max_length, len(out[-1]) - 1)
    return out, stats


def dedup_segments(segments: Iterable[Path_]) -> tuple[list[Path_], int]:
    """Drop repeated segments, keeping first occurrences in order."""
    seen: set[Path_] = set()
    out = []
    dropped = 0
    for seg in segments:
        if seg in seen:
            dropped += 1
            continue
        seen.add(seg)
        out.append(seg)
    return out, dropped


def sample_segments(g: TextAttributedGraph, cfg: SamplerConfig) -> tuple[list[Path_], SamplingStats]:
    """Run the configured sampler and return deduplicated segments in canonical order."""
    if cfg.mode is SamplerMode.L2SP:
        long_paths, stats = sample_long_shortest_paths(g, cfg)
        raw = [seg for p in long_paths for seg in l2sp_cut(p, cfg.ell)]
    else:
        raw, stats = sample_ablation_paths(g, cfg)
    segments, stats.duplicates_removed = dedup_segments(raw)
    return segments, stats


def write_paths(segments: Iterable[Path_], mode: SamplerMode | str, path: str | Path) -> None:
    mode = SamplerMode(mode).value
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seg in segments:
            fh.write(json.dumps({"nodes": list(seg), "mode": mode}) + "\n")


def read_paths(path: str | Path) -> tuple[list[Path_], SamplerMode | None]:
    segments = []
    mode = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                segments.append(tuple(rec["nodes"]))
                mode = SamplerMode(rec["mode"])
    return segments, mode
