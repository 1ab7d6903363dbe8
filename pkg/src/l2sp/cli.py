"""Command-line entry point: one subcommand per pipeline phase plus ``pipeline``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import search as ks
from .embeddings import import_embeddings
from .graph import GraphFormatError, GraphKind, load_graph
from .pipeline import PHASES, ConfigError, Pipeline, PipelineConfig, PhaseError
from .query_graph import build_query_graph, uniform_query_graph

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_PHASE = 0, 2, 3, 4

log = logging.getLogger("l2sp")


def _limit_threads(threads: int | None):
    if threads is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _run(ctx: click.Context, phases, overrides: dict[str, dict] | None = None) -> Pipeline:
    opts = ctx.obj
    if opts["config"] is None:
        _fail(EXIT_CONFIG, "--config is required")
    try:
        cfg = PipelineConfig.load(opts["config"], seed=opts["seed"])
        for section, values in (overrides or {}).items():
            getattr(cfg, section).update(values)
        cfg.validate()
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    limiter = _limit_threads(opts["threads"])
    try:
        pipe = Pipeline(cfg)
        for phase in phases:
            if not pipe.enabled(phase):
                log.info("phase %s disabled (no query keywords configured)", phase)
                continue
            res = pipe.run_phase(phase, force=opts["force"])
            click.echo(f"{phase}: {'skipped (up to date)' if res.skipped else 'done'}")
    except ks.InfeasibleQuery as exc:
        _fail(EXIT_INFEASIBLE, f"infeasible query: {exc}")
    except PhaseError as exc:
        _fail(EXIT_PHASE, str(exc))
    finally:
        if limiter is not None:
            limiter.unregister()
    return pipe


@click.group()
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None, help="TOML or JSON pipeline config.")
@click.option("--seed", type=int, default=None, help="Override the global seed.")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Cap BLAS threads (1 for bitwise determinism).")
@click.option("--force", is_flag=True, help="Rerun phases even when the manifest says they are up to date.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, config, seed, threads, force, verbose):
    """Long-to-short shortest-path embeddings and keyword search."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config, "seed": seed, "threads": threads, "force": force}


def _phase_command(phase: str):
    @click.pass_context
    def cmd(ctx):
        _run(ctx, [phase])

    cmd.__doc__ = f"Run the {phase} phase from the config."
    return cmd


for _phase in ("sample", "textualize", "embed", "weight", "eval"):
    main.command(name=_phase)(_phase_command(_phase))


@main.command()
@click.option("--lr", type=float, default=None)
@click.option("--batch", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--precision", type=click.Choice(["f32", "f64"]), default=None)
@click.pass_context
def train(ctx, lr, batch, steps, precision):
    """Train the toy language model on the textualized corpus."""
    overrides = {"lr": lr, "batch_size": batch, "steps": steps, "precision": precision}
    _run(ctx, ["train"], {"train": {k: v for k, v in overrides.items() if v is not None}})


@main.command()
@click.option("--graph", "graph_dir", type=click.Path(file_okay=False), default=None,
              help="Directory holding nodes.tsv and edges.tsv.")
@click.option("--kind", type=click.Choice([k.value for k in GraphKind]), default="homogeneous")
@click.option("--embeddings", type=click.Path(dir_okay=False), default=None)
@click.option("--keywords", default=None, help='Comma-separated keywords, e.g. "a,b,c".')
@click.option("--mode", type=click.Choice(["l2sp", "uniform"]), default=None, help="Edge weights (default l2sp).")
@click.option("--match", type=click.Choice([m.value for m in ks.MatchMode]), default=None, help="Keyword matching (default token).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="DOT file for the answer tree.")
@click.pass_context
def search(ctx, graph_dir, kind, embeddings, keywords, mode, match, out):
    """Answer a keyword query: a min-weight path or an approximate Steiner tree.

    With --graph the query runs standalone; otherwise the search phase of the config runs,
    with any of --keywords/--mode/--match overriding the configured query.
    """
    if graph_dir is None:
        query = {"keywords": keywords.split(",") if keywords else None, "mode": mode, "match": match}
        pipe = _run(ctx, ["search"], {"query": {k: v for k, v in query.items() if v is not None}})
        if out:
            Path(out).write_bytes((pipe.out / "answer.dot").read_bytes())
        return
    mode, match = mode or "l2sp", match or "token"
    if not keywords:
        _fail(EXIT_CONFIG, "--keywords is required with --graph")
    if mode == "l2sp" and embeddings is None:
        _fail(EXIT_CONFIG, "--embeddings is required in l2sp mode")
    try:
        g = load_graph(Path(graph_dir) / "nodes.tsv", Path(graph_dir) / "edges.tsv", GraphKind(kind))
        spec = ks.QuerySpec(tuple(k for k in keywords.split(",")), match)
        wg = uniform_query_graph(g) if mode == "uniform" else build_query_graph(g, import_embeddings(embeddings))
    except (OSError, GraphFormatError, ValueError, KeyError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        ans = ks.answer(wg, ks.map_keywords_to_terminals(g, spec))
    except ks.InfeasibleQuery as exc:
        _fail(EXIT_INFEASIBLE, f"infeasible query: {exc}")
    click.echo(json.dumps(ans.to_json(), sort_keys=True))
    if out:
        Path(out).write_text(ks.export_answer_dot(ans, g), encoding="utf-8")
        Path(out).with_suffix(".json").write_text(json.dumps(ans.to_json(), indent=2, sort_keys=True) + "\n")


@main.command()
@click.pass_context
def pipeline(ctx):
    """Run every phase in order, skipping those whose inputs are unchanged."""
    _run(ctx, PHASES)


if __name__ == "__main__":
    main()
