"""Operator entry points.

Exit codes: 0 ok, 2 usage, 3 data error, 4 backend error, 5 internal. Every
failure prints one machine-parseable JSON line on stderr and removes partial
outputs. Run outputs are byte-identical across repeats; wall-clock metadata
goes to a sidecar file, never into the payload files.
"""

from __future__ import annotations

import json
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import click

from . import __version__
from .backend import RemoteBackend, ScriptedBackend, load_script_file
from .core import Conversation, PipelineConfig, load_conversations, validate_config
from .datagen import CollectAborted, CriticTask, collect_labels, read_instances, write_dataset
from .errors import BackendError, ConvragError, DataError
from .evaluation import (
    PredictionRecord,
    Representation,
    critic_accuracy,
    load_benchmark,
    read_run_log,
    render_critic_report,
    render_retrieval_report,
    render_run_metrics,
    retrieval_report,
    run_metrics,
    write_jsonl,
)
from .orchestrator import Bm25Retriever, DenseRetriever, run_turn
from .retrieval import (
    Bm25Params,
    HashingEmbedder,
    bm25_search,
    build_bm25,
    build_dense,
    dense_search,
    load_corpus,
    load_index,
    save_index,
)
from .service import load_service_config, serve

EXIT_DATA = 3
EXIT_BACKEND = 4
EXIT_INTERNAL = 5


class _Failure(click.ClickException):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.exit_code = code
        self.kind = kind

    def show(self, file=None) -> None:
        click.echo(json.dumps({"error": self.kind, "message": self.format_message()}), err=True)


def _fail_from(exc: Exception) -> _Failure:
    if isinstance(exc, DataError):
        return _Failure(EXIT_DATA, "data", str(exc))
    if isinstance(exc, (BackendError, CollectAborted)):
        return _Failure(EXIT_BACKEND, "backend", str(exc))
    return _Failure(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")


class _OutDir:
    """Prepares an output directory and removes partial outputs on failure.

    Only paths created by this invocation are removed; pre-existing files in
    a --force directory are left alone."""

    def __init__(self, path: str, force: bool):
        self.path = Path(path)
        self.created = False
        if self.path.exists():
            if any(self.path.iterdir()) and not force:
                raise DataError(f"output directory {path} is not empty (use --force)")
            self._preexisting = {child.name for child in self.path.iterdir()}
        else:
            self.path.mkdir(parents=True)
            self.created = True
            self._preexisting = set()

    def cleanup(self) -> None:
        if self.created:
            shutil.rmtree(self.path, ignore_errors=True)
            return
        for child in self.path.iterdir():
            if child.name in self._preexisting:
                continue
            if child.is_dir():
                shutil.rmtree(child, ignore_errors=True)
            else:
                child.unlink(missing_ok=True)


def _guarded(fn, out: Optional[_OutDir] = None):
    try:
        fn()
    except ConvragError as exc:
        if out is not None:
            out.cleanup()
        raise _fail_from(exc) from exc
    except click.ClickException:
        raise
    except Exception as exc:  # internal failure
        if out is not None:
            out.cleanup()
        raise _fail_from(exc) from exc


def _guarded_with_out(out_path: str, force: bool, body) -> None:
    """Prepare the output directory, run body(out), clean up on failure."""
    try:
        out = _OutDir(out_path, force)
    except ConvragError as exc:
        raise _fail_from(exc) from exc
    _guarded(lambda: body(out), out)


def _load_pipeline_config(path: Optional[str]) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        cfg = PipelineConfig.from_dict(json.load(fh))
    check = validate_config(cfg)
    if not check.ok:
        raise DataError("invalid config: " + "; ".join(check.messages()))
    return cfg


def _make_backend(script: Optional[str], backend_url: Optional[str]):
    if script:
        backend = ScriptedBackend(load_script_file(script))
        backend.identity = "scripted"
        return backend
    if backend_url:
        backend = RemoteBackend(backend_url)
        backend.identity = backend_url
        return backend
    raise DataError("provide --script or --backend-url")


def _make_retriever(cfg: PipelineConfig, corpus, index):
    if cfg.retriever_kind.value == "dense":
        embedder = HashingEmbedder()
        return DenseRetriever(embedder, build_dense(corpus, embedder))
    return Bm25Retriever(index)


def _write_meta(out: Path, seed: Optional[int], extra: Optional[dict] = None) -> None:
    meta = {"created_at": time.time(), "seed": seed, "version": __version__}
    if extra:
        meta.update(extra)
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Adaptive retrieval-augmented conversation engine."""


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True), help="Corpus JSONL file.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output directory for the snapshot.")
@click.option("--k1", default=1.2, show_default=True, help="BM25 k1 parameter.")
@click.option("--b", default=0.75, show_default=True, help="BM25 b parameter.")
@click.option("--force", is_flag=True, help="Allow writing into a non-empty directory.")
def index(corpus_path: str, out_path: str, k1: float, b: float, force: bool) -> None:
    """Build a BM25 index snapshot from a corpus file."""

    def body(out: _OutDir) -> None:
        corpus = load_corpus(corpus_path)
        idx = build_bm25(corpus, Bm25Params(k1=k1, b=b))
        save_index(idx, out.path / "index.json")
        _write_meta(out.path, seed=None, extra={"doc_count": idx.doc_count})
        click.echo(f"indexed {idx.doc_count} passages -> {out.path / 'index.json'}")

    _guarded_with_out(out_path, force, body)


@main.command()
@click.option("--bench", "bench_path", required=True, type=click.Path(exists=True), help="Benchmark conversations JSONL.")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), help="Corpus JSONL (builds the index in memory).")
@click.option("--index", "index_path", type=click.Path(exists=True), help="Prebuilt index snapshot.")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Pipeline config JSON.")
@click.option("--script", type=click.Path(exists=True), help="Scripted backend rules file.")
@click.option("--backend-url", help="Remote backend base URL.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output directory for the run log.")
@click.option("--parallel", default=1, show_default=True, help="Conversations processed concurrently.")
@click.option("--seed", default=0, show_default=True, help="Recorded in the sidecar metadata.")
@click.option("--force", is_flag=True)
def run(
    bench_path: str,
    corpus_path: Optional[str],
    index_path: Optional[str],
    config_path: Optional[str],
    script: Optional[str],
    backend_url: Optional[str],
    out_path: str,
    parallel: int,
    seed: int,
    force: bool,
) -> None:
    """Run the turn pipeline over every benchmark conversation."""

    def body(out: _OutDir) -> None:
        cfg = _load_pipeline_config(config_path)
        if index_path:
            idx = load_index(index_path)
            corpus = idx.corpus
        elif corpus_path:
            corpus = load_corpus(corpus_path)
            idx = build_bm25(corpus)
        else:
            raise DataError("provide --corpus or --index")
        backend = _make_backend(script, backend_url)
        retriever = _make_retriever(cfg, corpus, idx)
        entries = load_conversations(bench_path)

        def replay(entry: Conversation) -> list[dict]:
            state = Conversation(id=entry.id)
            records = []
            turn_index = 0
            for turn in entry.turns:
                if turn.role.value != "user":
                    continue
                result, state = run_turn(state, turn.text, cfg, backend, retriever, corpus)
                records.append(
                    {"conversation_id": entry.id, "turn_index": turn_index, **result.to_dict()}
                )
                turn_index += 1
            return records

        if parallel > 1:
            with ThreadPoolExecutor(max_workers=parallel) as pool:
                per_conv = list(pool.map(replay, entries))
        else:
            per_conv = [replay(e) for e in entries]

        log_path = out.path / "runlog.jsonl"
        with open(log_path, "w", encoding="utf-8") as fh:
            for records in per_conv:
                for record in records:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
        metrics = run_metrics(record for records in per_conv for record in records)
        with open(out.path / "metrics.json", "w", encoding="utf-8") as fh:
            json.dump(metrics.to_dict(), fh, sort_keys=True)
            fh.write("\n")
        _write_meta(out.path, seed=seed, extra={"conversations": len(entries)})
        click.echo(
            f"ran {len(entries)} conversations, {metrics.n_turns} turns, "
            f"retrieval_rate {metrics.retrieval_rate:.3f} -> {log_path}"
        )

    _guarded_with_out(out_path, force, body)


@main.command("eval-retrieval")
@click.option("--bench", "bench_path", required=True, type=click.Path(exists=True), help="Benchmark with gold passage ids.")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--script", type=click.Path(exists=True), help="Backend script for rewrite/summary representations.")
@click.option("--backend-url", help="Remote backend for rewrite/summary representations.")
@click.option(
    "--representations",
    default="last_turn,full_conversation,summary",
    show_default=True,
    help="Comma-separated subset of last_turn,full_conversation,rewrite,summary,gold_rewrite.",
)
@click.option("--retrievers", default="bm25", show_default=True, help="Comma-separated subset of bm25,dense.")
@click.option("--ks", default="5,10", show_default=True, help="Comma-separated cutoffs.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def eval_retrieval(
    bench_path: str,
    corpus_path: str,
    script: Optional[str],
    backend_url: Optional[str],
    representations: str,
    retrievers: str,
    ks: str,
    out_path: str,
    force: bool,
) -> None:
    """Compare conversation representations as retrieval queries."""

    def body(out: _OutDir) -> None:
        corpus = load_corpus(corpus_path)
        reps = [Representation(r.strip()) for r in representations.split(",") if r.strip()]
        cutoffs = [int(x) for x in ks.split(",") if x.strip()]
        backend = _make_backend(script, backend_url) if (script or backend_url) else None
        searchers = {}
        for name in (r.strip() for r in retrievers.split(",")):
            if name == "bm25":
                idx = build_bm25(corpus)
                searchers["bm25"] = lambda q, k, _idx=idx: bm25_search(_idx, q, k)
            elif name == "dense":
                embedder = HashingEmbedder()
                didx = build_dense(corpus, embedder)
                searchers["dense"] = lambda q, k, _e=embedder, _d=didx: dense_search(
                    _e, corpus, q, k, index=_d
                )
            elif name:
                raise DataError(f"unknown retriever {name!r}")
        rows = retrieval_report(load_benchmark(bench_path), reps, searchers, cutoffs, backend)
        with open(out.path / "report.jsonl", "w", encoding="utf-8") as fh:
            write_jsonl((r.to_dict() for r in rows), fh)
        table = render_retrieval_report(rows, cutoffs)
        (out.path / "report.txt").write_text(table, encoding="utf-8")
        _write_meta(out.path, seed=None)
        click.echo(table)

    _guarded_with_out(out_path, force, body)


@main.command("eval-critic")
@click.option("--predictions", "pred_path", required=True, type=click.Path(exists=True), help="JSONL of {task, variant, predicted, gold}.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def eval_critic(pred_path: str, out_path: str, force: bool) -> None:
    """Critic classification accuracy per task and variant."""

    def body(out: _OutDir) -> None:
        with open(pred_path, encoding="utf-8") as fh:
            records = [PredictionRecord.from_dict(r) for r in read_run_log(fh)]
        rows = critic_accuracy(records)
        with open(out.path / "report.jsonl", "w", encoding="utf-8") as fh:
            write_jsonl((r.to_dict() for r in rows), fh)
        table = render_critic_report(rows)
        (out.path / "report.txt").write_text(table, encoding="utf-8")
        _write_meta(out.path, seed=None)
        click.echo(table)

    _guarded_with_out(out_path, force, body)


@main.command("eval-run")
@click.option("--runlog", "runlog_path", required=True, type=click.Path(exists=True), help="Run log from `convrag run`.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def eval_run(runlog_path: str, out_path: str, force: bool) -> None:
    """Retrieval rate and decision histogram from a run log."""

    def body(out: _OutDir) -> None:
        with open(runlog_path, encoding="utf-8") as fh:
            metrics = run_metrics(read_run_log(fh))
        with open(out.path / "metrics.json", "w", encoding="utf-8") as fh:
            json.dump(metrics.to_dict(), fh, sort_keys=True)
            fh.write("\n")
        (out.path / "metrics.txt").write_text(render_run_metrics(metrics), encoding="utf-8")
        _write_meta(out.path, seed=None)
        click.echo(render_run_metrics(metrics))

    _guarded_with_out(out_path, force, body)


@main.command()
@click.option("--task", "task_name", required=True, type=click.Choice([t.value for t in CriticTask]))
@click.option("--instances", "instances_path", required=True, type=click.Path(exists=True))
@click.option("--script", type=click.Path(exists=True), help="Scripted judge rules file.")
@click.option("--judge-url", help="Remote judge backend base URL.")
@click.option("--parallel", default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def datagen(
    task_name: str,
    instances_path: str,
    script: Optional[str],
    judge_url: Optional[str],
    parallel: int,
    out_path: str,
    force: bool,
) -> None:
    """Collect judge labels for a critic task."""

    def body(out: _OutDir) -> None:
        task = CriticTask(task_name)
        with open(instances_path, encoding="utf-8") as fh:
            instances = read_instances(fh)
        judge = _make_backend(script, judge_url)
        try:
            labeled, stats = collect_labels(judge, task, instances, parallelism=parallel)
        except CollectAborted as exc:
            # Persist what we have before reporting the backend failure.
            with open(out.path / "dataset.partial.jsonl", "w", encoding="utf-8") as fh:
                write_dataset(exc.partial, fh)
            raise
        with open(out.path / "dataset.jsonl", "w", encoding="utf-8") as fh:
            write_dataset(labeled, fh)
        with open(out.path / "stats.json", "w", encoding="utf-8") as fh:
            json.dump(stats.to_dict(), fh, sort_keys=True)
            fh.write("\n")
        (out.path / "stats.txt").write_text(stats.render_table() + "\n", encoding="utf-8")
        _write_meta(out.path, seed=None)
        click.echo(stats.render_table())

    try:
        out = _OutDir(out_path, force)
    except ConvragError as exc:
        raise _fail_from(exc) from exc
    try:
        body(out)
    except CollectAborted as exc:
        raise _fail_from(exc) from exc  # partial dataset intentionally kept
    except ConvragError as exc:
        out.cleanup()
        raise _fail_from(exc) from exc
    except click.ClickException:
        raise
    except Exception as exc:
        out.cleanup()
        raise _fail_from(exc) from exc


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True))
@click.option("--index", "index_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), help="Pipeline config JSON.")
@click.option("--script", type=click.Path(exists=True))
@click.option("--backend-url", help="Remote backend base URL.")
def chat(
    corpus_path: Optional[str],
    index_path: Optional[str],
    config_path: Optional[str],
    script: Optional[str],
    backend_url: Optional[str],
) -> None:
    """Interactive terminal session against a configured backend."""

    def body() -> None:
        cfg = _load_pipeline_config(config_path)
        if index_path:
            idx = load_index(index_path)
            corpus = idx.corpus
        elif corpus_path:
            corpus = load_corpus(corpus_path)
            idx = build_bm25(corpus)
        else:
            raise DataError("provide --corpus or --index")
        backend = _make_backend(script, backend_url)
        retriever = _make_retriever(cfg, corpus, idx)
        state = Conversation(id="chat")
        click.echo("convrag chat - /quit to exit")
        while True:
            try:
                line = click.prompt("you", prompt_suffix="> ", default="", show_default=False)
            except (EOFError, click.Abort):
                break
            line = line.strip()
            if not line:
                continue
            if line in ("/quit", "/exit"):
                break
            try:
                result, state = run_turn(state, line, cfg, backend, retriever, corpus)
            except ConvragError as exc:
                click.echo(f"[turn failed: {exc}]", err=True)
                continue
            click.echo(f"[decision: {result.decision.choice.value}]")
            if result.query is not None:
                click.echo(f"[query: {result.query.combined}]")
            if result.retrieved.entries:
                ids = ", ".join(f"{pid} ({score:.3f})" for pid, score in result.retrieved)
                click.echo(f"[retrieved: {ids}]")
            click.echo(f"assistant> {result.selected.text()}")

    _guarded(body)


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Service config JSON.")
def serve_cmd(config_path: Optional[str]) -> None:
    """Start the HTTP service (config file plus CONVRAG_* env overrides)."""

    def body() -> None:
        serve(load_service_config(config_path))

    _guarded(body)


if __name__ == "__main__":
    main()
