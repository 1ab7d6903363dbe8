"""End-to-end orchestration: sample -> textualize -> train -> embed -> weight -> search -> eval.

Every phase records the hashes of its inputs, its config section and its outputs in
``manifest.json``. A phase whose recorded hashes still match is skipped, so editing
an upstream artifact or config section reruns exactly the phases downstream of it.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import search as ks
from .embeddings import EmbeddingTable, Provenance, export_embeddings, import_embeddings
from .evaluate import edge_validation_eval, node_classification_eval
from .graph import GraphKind, TextAttributedGraph, load_graph, load_labels
from .lm import ModelConfig, ToyModel, TrainConfig, Vocab, extract_node_embedding, tokenize_path, train
from .query_graph import build_query_graph, read_weighted_edges, uniform_query_graph, write_weighted_edges
from .sampling import SamplerConfig, read_paths, sample_segments, write_paths
from .textualize import (
    TextualizerConfig,
    build_corpus,
    compute_keyphrases,
    default_stopwords,
    load_stopwords,
    node_attribute_text,
    read_corpus,
    read_keyphrases,
    write_corpus,
    write_keyphrases,
)

log = logging.getLogger(__name__)

PHASES = ("sample", "textualize", "train", "embed", "weight", "search", "eval")
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


class PhaseError(RuntimeError):
    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"phase {phase!r} failed: {cause}")
        self.phase = phase
        self.cause = cause


def sub_seed(global_seed: int, phase: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{phase}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_hash(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class PipelineConfig:
    nodes: Path
    edges: Path
    output_dir: Path
    kind: GraphKind = GraphKind.HOMOGENEOUS
    labels: Path | None = None
    seed: int = 0
    sampler: dict = field(default_factory=dict)
    textualizer: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    query: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, base: Path = Path(".")) -> "PipelineConfig":
        def resolve(p):
            return None if p is None else (base / p).resolve()

        try:
            graph = raw["graph"]
            cfg = cls(
                nodes=resolve(graph["nodes"]),
                edges=resolve(graph["edges"]),
                kind=GraphKind(graph.get("kind", "homogeneous")),
                labels=resolve(graph.get("labels")),
                output_dir=resolve(raw.get("output_dir", "artifacts")),
                seed=int(raw.get("seed", 0)),
                **{k: dict(raw.get(k, {})) for k in ("sampler", "textualizer", "model", "train", "query", "eval")},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid pipeline config: {exc!r}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if path.suffix == ".toml":
            import tomli

            try:
                raw = tomli.loads(text)
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        else:
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if seed is not None:
            raw["seed"] = seed
        return cls.from_dict(raw, path.parent)

    def validate(self) -> None:
        for p in (self.nodes, self.edges, self.labels):
            if p is not None and not p.is_file():
                raise ConfigError(f"input file not found: {p}")
        try:
            self.sampler_config()
            self.textualizer_config()
            self.train_config()
            if self.query.get("keywords"):
                ks.QuerySpec(tuple(self.query["keywords"]), self.query.get("match", "token"))
                if self.query.get("mode", "l2sp") not in ("l2sp", "uniform"):
                    raise ValueError(f"query mode must be l2sp or uniform, got {self.query['mode']!r}")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(**self.sampler, seed=sub_seed(self.seed, "sample"))

    def textualizer_config(self) -> TextualizerConfig:
        opts = dict(self.textualizer)
        sw = opts.pop("stopwords", None)
        return TextualizerConfig(**opts, stopwords=load_stopwords(sw) if sw else default_stopwords())

    def train_config(self) -> TrainConfig:
        opts = {"precision": "f32", **self.train}
        return TrainConfig(**opts, seed=sub_seed(self.seed, "train"))

    def section(self, phase: str) -> dict:
        sections = {
            "sample": {"sampler": self.sampler, "kind": self.kind.value},
            "textualize": {"textualizer": self.textualizer, "kind": self.kind.value},
            "train": {"model": self.model, "train": self.train},
            "embed": {},
            "weight": {},
            "search": {"query": self.query},
            "eval": {"eval": self.eval},
        }
        return {"seed": self.seed, **sections[phase]}


@dataclass
class PhaseResult:
    phase: str
    skipped: bool
    outputs: list[str]


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.output_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self._graph: TextAttributedGraph | None = None
        self.manifest_path = self.out / MANIFEST
        self.manifest: dict = json.loads(self.manifest_path.read_text()) if self.manifest_path.exists() else {}

    @property
    def graph(self) -> TextAttributedGraph:
        if self._graph is None:
            self._graph = load_graph(self.cfg.nodes, self.cfg.edges, self.cfg.kind)
        return self._graph

    def _a(self, name: str) -> Path:
        return self.out / name

    # -- phase table --------------------------------------------------------

    def _spec(self, phase: str) -> tuple[list[Path], list[str], Callable[[], dict]]:
        """(input files, output names, runner) for a phase."""
        g_in = [self.cfg.nodes, self.cfg.edges]
        a = self._a
        table = {
            "sample": (g_in, ["paths.jsonl"], self._run_sample),
            "textualize": (g_in + [a("paths.jsonl")], ["corpus.jsonl", "keyphrases.jsonl"], self._run_textualize),
            "train": ([a("corpus.jsonl")], ["model.bin", "vocab.tsv", "train_log.json"], self._run_train),
            "embed": (
                g_in + [a("model.bin"), a("vocab.tsv"), a("keyphrases.jsonl")],
                ["embeddings.tsv"],
                self._run_embed,
            ),
            "weight": (g_in + [a("embeddings.tsv")], ["weighted_edges.tsv"], self._run_weight),
            "search": (g_in + [a("weighted_edges.tsv")], ["answer.json", "answer.dot"], self._run_search),
            "eval": (
                g_in + [a("embeddings.tsv")] + ([self.cfg.labels] if self.cfg.labels else []),
                ["metrics.json"],
                self._run_eval,
            ),
        }
        return table[phase]

    def enabled(self, phase: str) -> bool:
        return phase != "search" or bool(self.cfg.query.get("keywords"))

    def run_phase(self, phase: str, force: bool = False) -> PhaseResult:
        inputs, outputs, runner = self._spec(phase)
        for p in inputs:
            if not p.is_file():
                raise PhaseError(phase, FileNotFoundError(f"missing input {p}; run the upstream phase first"))
        key = {
            "config": _json_hash(self.cfg.section(phase)),
            "inputs": {p.name: file_hash(p) for p in inputs},
        }
        prev = self.manifest.get(phase)
        if not force and prev and all(prev.get(k) == v for k, v in key.items()):
            recorded = prev.get("outputs", {})
            if all(self._a(o).is_file() and file_hash(self._a(o)) == recorded.get(o) for o in outputs):
                log.info("phase %s up to date, skipping", phase)
                return PhaseResult(phase, True, outputs)
        log.info("running phase %s", phase)
        try:
            info = runner()
        except ks.InfeasibleQuery:
            raise
        except Exception as exc:
            raise PhaseError(phase, exc) from exc
        self.manifest[phase] = {**key, "outputs": {o: file_hash(self._a(o)) for o in outputs}, "info": info}
        _dump_json(self.manifest, self.manifest_path)
        return PhaseResult(phase, False, outputs)

    def run(self, phases=PHASES, force: bool = False) -> list[PhaseResult]:
        return [self.run_phase(p, force) for p in phases if self.enabled(p)]

    # -- phase bodies ------------------------------------------------------

    def _run_sample(self) -> dict:
        scfg = self.cfg.sampler_config()
        segments, stats = sample_segments(self.graph, scfg)
        if not segments:
            raise RuntimeError(stats.message or "sampler produced no segments")
        write_paths(segments, scfg.mode, self._a("paths.jsonl"))
        return {
            "segments": len(segments),
            "attempts": stats.attempts,
            "skipped_sources": stats.skipped_sources,
            "max_length": stats.max_length,
            "duplicates_removed": stats.duplicates_removed,
        }

    def _run_textualize(self) -> dict:
        tcfg = self.cfg.textualizer_config()
        segments, _ = read_paths(self._a("paths.jsonl"))
        keyphrases = compute_keyphrases(self.graph, range(self.graph.n), tcfg)
        corpus = build_corpus(segments, self.graph, tcfg, keyphrases)
        write_corpus(corpus, self._a("corpus.jsonl"))
        write_keyphrases(keyphrases, self._a("keyphrases.jsonl"))
        return {"texts": len(corpus), "empty_nodes": corpus.empty_nodes}

    def _run_train(self) -> dict:
        tcfg = self.cfg.train_config()
        corpus = read_corpus(self._a("corpus.jsonl"))
        mopts = {"d": 64, "heads": 4, "blocks": 2, "max_len": 128, **self.cfg.model}
        vocab = Vocab.build(p.text for p in corpus)
        seqs = [tokenize_path(p, vocab, mopts["max_len"]) for p in corpus]
        model = ToyModel.init(ModelConfig(len(vocab), **mopts), seed=sub_seed(self.cfg.seed, "init"), dtype=tcfg.dtype)
        result = train(model, seqs, tcfg)
        result.model.save(self._a("model.bin"))
        vocab.save(self._a("vocab.tsv"))
        _dump_json({"config": asdict(tcfg), "losses": result.losses}, self._a("train_log.json"))
        return {"steps": tcfg.steps, "final_loss": result.losses[-1], "vocab_size": len(vocab)}

    def _run_embed(self) -> dict:
        model = ToyModel.load(self._a("model.bin"), dtype=np.float64)
        vocab = Vocab.load(self._a("vocab.tsv"))
        keyphrases = read_keyphrases(self._a("keyphrases.jsonl"))
        vectors = {}
        empty = []
        for v in range(self.graph.n):
            emb = extract_node_embedding(model, node_attribute_text(self.graph, v, keyphrases[v]), vocab)
            if emb.empty:
                empty.append(v)
            vectors[v] = emb.vector
        export_embeddings(EmbeddingTable(model.cfg.d, vectors, Provenance.TOY_MODEL), self._a("embeddings.tsv"))
        return {"nodes": self.graph.n, "empty_nodes": empty}

    def _run_weight(self) -> dict:
        table = import_embeddings(self._a("embeddings.tsv"), Provenance.TOY_MODEL)
        wg = build_query_graph(self.graph, table)
        write_weighted_edges(wg, self._a("weighted_edges.tsv"))
        return {"edges_kept": len(wg.edges), "edges_total": self.graph.m}

    def _run_search(self) -> dict:
        q = self.cfg.query
        spec = ks.QuerySpec(tuple(q["keywords"]), q.get("match", "token"))
        if q.get("mode", "l2sp") == "uniform":
            wg = uniform_query_graph(self.graph)
        else:
            wg = read_weighted_edges(self._a("weighted_edges.tsv"), self.graph.n)
        terms = ks.map_keywords_to_terminals(self.graph, spec)
        ans = ks.answer(wg, terms)
        _dump_json(ans.to_json(), self._a("answer.json"))
        self._a("answer.dot").write_text(ks.export_answer_dot(ans, self.graph), encoding="utf-8")
        return {"cost": ans.cost, "answer_distance": ks.answer_distance(ans)}

    def _run_eval(self) -> dict:
        table = import_embeddings(self._a("embeddings.tsv"), Provenance.TOY_MODEL)
        seed = sub_seed(self.cfg.seed, "eval") % (2**32)
        opts = self.cfg.eval
        metrics: dict[str, Any] = {"seed": seed, "config": opts}
        if self.cfg.labels:
            labels = load_labels(self.cfg.labels, self.graph)
            metrics["node_classification"] = node_classification_eval(
                table, labels, seed=seed, epochs=opts.get("nc_epochs", 50)
            ).to_json()
        metrics["edge_validation"] = edge_validation_eval(
            table, self.graph, split_seed=seed, epochs=opts.get("ev_epochs", 100)
        ).to_json()
        _dump_json(metrics, self._a("metrics.json"))
        return {k: v["mean"] for k, v in metrics.items() if isinstance(v, dict) and "mean" in v}


def run_pipeline(cfg: PipelineConfig, force: bool = False) -> Path:
    Pipeline(cfg).run(force=force)
    return cfg.output_dir
