"""Session-oriented HTTP API around the turn pipeline.

Sessions persist as an append-only log of completed turn records plus a
manifest; restart replays the log, so a crash never loses a finished turn and
never surfaces a partial one. Per-session turn execution is serialized; the
corpus and index load once and are shared read-only.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from .backend import RemoteBackend, ScriptedBackend, load_script_file
from .backend.base import Backend
from .core import Conversation, PipelineConfig, Role, Turn, validate_config
from .errors import ConvragError, DataError
from .orchestrator import Bm25Retriever, DenseRetriever, Retriever, run_turn
from .retrieval import Corpus, HashingEmbedder, build_bm25, build_dense, load_corpus, load_index
from .retrieval.kernels import kernel_backend

logger = logging.getLogger(__name__)

_CONFIG_FIELDS = set(PipelineConfig().to_dict())


@dataclass
class ServiceConfig:
    listen: str = "127.0.0.1:8450"
    corpus_path: Optional[str] = None
    index_path: Optional[str] = None
    backend_url: Optional[str] = None
    script_path: Optional[str] = None
    data_dir: str = "convrag-data"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceConfig":
        return cls(
            listen=d.get("listen", cls.listen),
            corpus_path=d.get("corpus"),
            index_path=d.get("index"),
            backend_url=d.get("backend_url"),
            script_path=d.get("script"),
            data_dir=d.get("data_dir", cls.data_dir),
            pipeline=PipelineConfig.from_dict(d.get("pipeline", {})),
        )


# Environment overrides, applied on top of the config file.
_ENV_KEYS = {
    "CONVRAG_LISTEN": "listen",
    "CONVRAG_CORPUS": "corpus",
    "CONVRAG_INDEX": "index",
    "CONVRAG_BACKEND_URL": "backend_url",
    "CONVRAG_SCRIPT": "script",
    "CONVRAG_DATA_DIR": "data_dir",
}


def load_service_config(path=None, env=None) -> ServiceConfig:
    env = os.environ if env is None else env
    raw: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    for key, name in _ENV_KEYS.items():
        if env.get(key):
            raw[name] = env[key]
    if env.get("CONVRAG_WEIGHTS"):
        try:
            w1, w2, w3 = (float(x) for x in env["CONVRAG_WEIGHTS"].split(","))
        except ValueError as exc:
            raise DataError(f"CONVRAG_WEIGHTS must be three comma-separated reals: {exc}") from exc
        raw.setdefault("pipeline", {})["weights"] = {"w1": w1, "w2": w2, "w3": w3}
    return ServiceConfig.from_dict(raw)


class SessionState:
    def __init__(self, session_id: str, config: PipelineConfig, created_at: float, path: Path):
        self.id = session_id
        self.config = config
        self.created_at = created_at
        self.path = path
        self.conversation = Conversation(id=session_id)
        self.turn_records: list[dict] = []
        self.turn_lock = threading.Lock()
        self.in_flight = False
        self.cond = threading.Condition()
        # Envelopes carry a monotone stream_seq so subscribers are immune to
        # live-event clears after a failed turn.
        self.stream_seq = 0
        self.event_history: list[dict] = []
        self.live_events: list[dict] = []

    def envelope(self, turn_index: int, event_dict: dict) -> dict:
        wrapped = {"stream_seq": self.stream_seq, "turn_index": turn_index, **event_dict}
        self.stream_seq += 1
        return wrapped

    def snapshot_events(self) -> list[dict]:
        with self.cond:
            return list(self.event_history) + list(self.live_events)


class SessionStore:
    def __init__(self, data_dir, default_config: PipelineConfig):
        self.root = Path(data_dir) / "sessions"
        self.root.mkdir(parents=True, exist_ok=True)
        self.default_config = default_config
        self.sessions: dict[str, SessionState] = {}
        self.lock = threading.Lock()
        self.load_existing()

    def load_existing(self) -> None:
        for session_dir in sorted(self.root.iterdir()):
            manifest_path = session_dir / "session.json"
            if not manifest_path.is_file():
                continue
            with open(manifest_path, encoding="utf-8") as fh:
                manifest = json.load(fh)
            session = SessionState(
                session_id=manifest["id"],
                config=PipelineConfig.from_dict(manifest["config"]),
                created_at=manifest["created_at"],
                path=session_dir,
            )
            self._replay(session)
            self.sessions[session.id] = session

    def _replay(self, session: SessionState) -> None:
        log_path = session.path / "turns.jsonl"
        if not log_path.is_file():
            return
        with open(log_path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                if i == len(lines) - 1:
                    # Torn final line from a crash mid-append: the turn never
                    # completed, drop it.
                    logger.warning("session %s: dropping torn final log line", session.id)
                    continue
                raise DataError(f"session {session.id} log line {i + 1}: {exc}") from exc
            self._apply(session, record)

    @staticmethod
    def _apply(session: SessionState, record: dict) -> None:
        result = record["result"]
        selected = result["candidates"][result["selected_index"]]
        attached = (selected["passage_id"],) if selected.get("passage_id") else ()
        session.conversation = session.conversation.append(
            Turn(role=Role.USER, text=record["user_text"])
        ).append(
            Turn(role=Role.ASSISTANT, text=result["selected_text"], attached_passage_ids=attached)
        )
        session.turn_records.append(record)
        session.event_history.extend(
            session.envelope(record["turn_index"], event) for event in result.get("events", ())
        )

    def create(self, config: PipelineConfig) -> SessionState:
        session_id = uuid.uuid4().hex[:12]
        session_dir = self.root / session_id
        session_dir.mkdir(parents=True)
        session = SessionState(
            session_id=session_id, config=config, created_at=time.time(), path=session_dir
        )
        manifest = {"id": session.id, "created_at": session.created_at, "config": config.to_dict()}
        _atomic_write(session_dir / "session.json", json.dumps(manifest, sort_keys=True))
        with self.lock:
            self.sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Optional[SessionState]:
        with self.lock:
            return self.sessions.get(session_id)

    def append_turn(self, session: SessionState, record: dict) -> None:
        """Atomic append of one completed turn: the record hits disk before it
        becomes visible in memory."""
        line = json.dumps(record, sort_keys=True) + "\n"
        with open(session.path / "turns.jsonl", "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(content + "\n", encoding="utf-8")
    tmp.replace(path)


def _error_body(code: str, message: str, detail=None) -> dict:
    return {"code": code, "message": message, "detail": detail}


def _merge_config(base: PipelineConfig, overrides: dict) -> PipelineConfig:
    unknown = set(overrides) - _CONFIG_FIELDS
    if unknown:
        raise DataError(f"unknown config fields: {sorted(unknown)}")
    merged = base.to_dict()
    for key, value in overrides.items():
        if key == "weights":
            if not isinstance(value, dict):
                raise DataError("weights must be an object {w1, w2, w3}")
            merged["weights"] = {**merged["weights"], **value}
        else:
            merged[key] = value
    return PipelineConfig.from_dict(merged)


def create_app(
    config: ServiceConfig,
    backend: Optional[Backend] = None,
    corpus: Optional[Corpus] = None,
    retriever: Optional[Retriever] = None,
) -> FastAPI:
    """Wire the service from config; tests may inject backend/corpus/retriever."""
    if corpus is None or retriever is None:
        if config.index_path:
            index = load_index(config.index_path)
            corpus = index.corpus
        elif config.corpus_path:
            corpus = load_corpus(config.corpus_path)
            index = build_bm25(corpus)
        else:
            raise DataError("service needs a corpus or an index")
        if retriever is None:
            if config.pipeline.retriever_kind.value == "dense":
                embedder = HashingEmbedder()
                retriever = DenseRetriever(embedder, build_dense(corpus, embedder))
            else:
                retriever = Bm25Retriever(index)
    if backend is None:
        if config.script_path:
            backend = ScriptedBackend(load_script_file(config.script_path))
        elif config.backend_url:
            backend = RemoteBackend(config.backend_url)
        else:
            raise DataError("service needs a script path or a backend url")

    store = SessionStore(config.data_dir, config.pipeline)
    app = FastAPI(title="convrag", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store
    app.state.retriever = retriever

    @app.exception_handler(DataError)
    async def _data_error(request: Request, exc: DataError):
        return JSONResponse(status_code=400, content=_error_body("invalid_request", str(exc)))

    @app.exception_handler(ConvragError)
    async def _pipeline_error(request: Request, exc: ConvragError):
        return JSONResponse(status_code=500, content=_error_body("pipeline_failure", str(exc)))

    def _session_or_none(session_id: str) -> Optional[SessionState]:
        return store.get(session_id)

    def _session_view(session: SessionState) -> dict:
        return {
            "id": session.id,
            "created_at": session.created_at,
            "config": session.config.to_dict(),
            "conversation": session.conversation.to_dict(),
            "turn_count": len(session.turn_records),
            "in_flight": session.in_flight,
        }

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "kernel": kernel_backend(), "sessions": len(store.sessions)}

    @app.get("/corpus/stats")
    def corpus_stats():
        lengths = [len(p.text) for p in corpus.passages]
        return {
            "doc_count": len(corpus),
            "total_chars": sum(lengths),
            "retriever": retriever.kind,
        }

    @app.post("/sessions")
    def create_session(overrides: Optional[dict] = None):
        cfg = _merge_config(config.pipeline, overrides or {})
        check = validate_config(cfg)
        if not check.ok:
            return JSONResponse(
                status_code=400,
                content=_error_body("invalid_config", "config validation failed", check.messages()),
            )
        session = store.create(cfg)
        return _session_view(session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = _session_or_none(session_id)
        if session is None:
            return JSONResponse(
                status_code=404, content=_error_body("unknown_session", f"no session {session_id}")
            )
        return _session_view(session)

    @app.post("/sessions/{session_id}/turns")
    def post_turn(session_id: str, body: dict):
        session = _session_or_none(session_id)
        if session is None:
            return JSONResponse(
                status_code=404, content=_error_body("unknown_session", f"no session {session_id}")
            )
        text = (body or {}).get("text", "")
        if not isinstance(text, str) or not text.strip():
            return JSONResponse(
                status_code=400, content=_error_body("invalid_request", "turn text must be non-empty")
            )
        if not session.turn_lock.acquire(blocking=False):
            return JSONResponse(
                status_code=409,
                content=_error_body("turn_in_flight", "a turn is already running on this session"),
            )
        try:
            session.in_flight = True
            turn_index = len(session.turn_records)

            def sink(event) -> None:
                with session.cond:
                    session.live_events.append(session.envelope(turn_index, event.to_dict()))
                    session.cond.notify_all()

            try:
                result, updated = run_turn(
                    session.conversation,
                    text,
                    session.config,
                    backend,
                    retriever,
                    corpus,
                    event_sink=sink,
                )
            except ConvragError as exc:
                with session.cond:
                    session.live_events.clear()
                    session.cond.notify_all()
                status = 400 if isinstance(exc, DataError) else 500
                code = "invalid_request" if status == 400 else "pipeline_failure"
                return JSONResponse(status_code=status, content=_error_body(code, str(exc)))

            record = {
                "turn_index": turn_index,
                "user_text": text,
                "ts": time.time(),
                "result": result.to_dict(),
            }
            store.append_turn(session, record)
            session.conversation = updated
            session.turn_records.append(record)
            with session.cond:
                # Live envelopes move to history verbatim, keeping stream_seq.
                session.event_history.extend(session.live_events)
                session.live_events.clear()
                session.cond.notify_all()
            return record
        finally:
            session.in_flight = False
            session.turn_lock.release()

    @app.get("/sessions/{session_id}/events")
    def stream_events(session_id: str, follow: int = 1):
        session = _session_or_none(session_id)

        def gen():
            if session is None:
                yield json.dumps(
                    {"kind": "error", "payload": _error_body("unknown_session", f"no session {session_id}")},
                    sort_keys=True,
                ) + "\n"
                return
            last_seq = -1
            while True:
                with session.cond:
                    pending = [
                        e
                        for e in session.event_history + session.live_events
                        if e["stream_seq"] > last_seq
                    ]
                    if not pending:
                        if not follow:
                            return
                        session.cond.wait(timeout=0.5)
                if not pending:
                    # Heartbeats keep the generator passing through a yield
                    # point so client disconnects can terminate it promptly.
                    yield json.dumps({"kind": "heartbeat", "stream_seq": -1}) + "\n"
                    continue
                for event in pending:
                    last_seq = event["stream_seq"]
                    yield json.dumps(event, sort_keys=True) + "\n"

        return StreamingResponse(gen(), media_type="application/x-ndjson")

    return app


def serve(config: ServiceConfig) -> None:  # pragma: no cover - exercised manually
    import uvicorn

    host, _, port = config.listen.partition(":")
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port or 8450))
