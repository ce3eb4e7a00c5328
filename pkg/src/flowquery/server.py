"""HTTP query service tying the pipeline together.

Single-tenant session: one field, one streamline store, one match index.
Query responses are canonical JSON (sorted keys, compact separators) so
identical requests produce byte-identical bodies.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import Response

from . import __version__
from .errors import (BadParam, BadResponse, BindError, ConfigError,
                     EmptyIndex, EmptyQuery, FlowQueryError,
                     ServiceUnavailable, Timeout)
from .field import VectorField, load_raw
from .llmbridge import ChatClientConfig, ChatTurn, chat, extract_tags, merge_tags
from .matcher import (EmbeddingServiceConfig, MatchIndex, load_index,
                      make_embedder, query)
from .trace import load_streamlines


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    data_dir: str = "."
    field_path: str = ""        # base of a .meta/.vec pair
    streamlines_path: str = ""
    index_path: str = ""
    chat_endpoint: str = ""
    chat_model: str = "default"
    embed_endpoint: str = ""
    tag_mode: str = "lexicon"
    max_payload: int = 1_000_000
    frontend_dir: str = ""  # serve the browser explorer from this directory

    @classmethod
    def from_file(cls, path, **overrides):
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def resolve(self, name):
        p = Path(name)
        return p if p.is_absolute() else Path(self.data_dir) / p

    def apply_env(self):
        self.chat_endpoint = os.environ.get("FLOWQUERY_CHAT_ENDPOINT",
                                            self.chat_endpoint)
        self.embed_endpoint = os.environ.get("FLOWQUERY_EMBED_ENDPOINT",
                                             self.embed_endpoint)
        return self


@dataclass
class SessionState:
    field: VectorField | None = None
    streamlines: list = dc_field(default_factory=list)
    index: MatchIndex | None = None
    chat_history: list = dc_field(default_factory=list)
    tags: list = dc_field(default_factory=list)
    lock: threading.Lock = dc_field(default_factory=threading.Lock)


def load_session(config: ServiceConfig) -> SessionState:
    state = SessionState()
    if config.field_path:
        state.field = load_raw(config.resolve(config.field_path))
    if config.streamlines_path:
        state.streamlines = load_streamlines(config.resolve(config.streamlines_path))
    if config.index_path:
        state.index = load_index(config.resolve(config.index_path))
    return state


def _canonical(payload, status_code=200):
    return Response(content=json.dumps(payload, sort_keys=True,
                                       separators=(",", ":")),
                    status_code=status_code, media_type="application/json")


_ERROR_CODES = (
    (EmptyQuery, 400), (BadParam, 400), (EmptyIndex, 409),
    (ServiceUnavailable, 503), (Timeout, 504), (BadResponse, 502),
)


def _http_error(exc):
    for cls, code in _ERROR_CODES:
        if isinstance(exc, cls):
            return code
    return 500


def create_app(config: ServiceConfig, state: SessionState | None = None):
    config.apply_env()
    state = state if state is not None else load_session(config)
    app = FastAPI(title="flowquery", version=__version__)
    if config.embed_endpoint:
        embedder = make_embedder(
            "external_service",
            EmbeddingServiceConfig(endpoint=config.embed_endpoint))
    else:
        embedder = make_embedder("hashed_fallback")
    chat_cfg = ChatClientConfig(endpoint=config.chat_endpoint,
                                model=config.chat_model)

    @app.middleware("http")
    async def guard(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > config.max_payload:
            return _canonical({"error": "payload too large"}, 413)
        try:
            return await call_next(request)
        except FlowQueryError as e:
            return _canonical({"error": type(e).__name__, "detail": str(e)},
                              _http_error(e))

    @app.get("/health")
    def health():
        return _canonical({
            "version": __version__,
            "fingerprint": state.index.fingerprint if state.index else "",
            "streamlines": len(state.streamlines),
        })

    @app.get("/field")
    def field_meta():
        if state.field is None:
            return _canonical({"error": "no field loaded"}, 404)
        f = state.field
        return _canonical({"dims": list(f.dims),
                           "bounds_min": list(f.bounds_min),
                           "bounds_max": list(f.bounds_max)})

    @app.get("/streamlines")
    def streamlines(offset: int = 0, limit: int = 100):
        page = state.streamlines[offset:offset + max(0, limit)]
        return _canonical({
            "total": len(state.streamlines), "offset": offset,
            "streamlines": [
                {"id": sl.seed_id,
                 "points": [round(float(c), 6) for c in sl.points.reshape(-1)]}
                for sl in page]})

    @app.post("/query")
    async def run_query(request: Request):
        body = await request.json()
        text = body.get("text", "")
        k = int(body.get("k", 10))
        if state.index is None:
            return _canonical({"error": "no index loaded"}, 404)
        results = query(state.index, text, k, embedder=embedder)
        rows = []
        id_pos = {int(v): i for i, v in enumerate(state.index.ids)}
        for r in results:
            poly = state.index.geometry[id_pos[r.segment_id]]
            rows.append({"segment_id": r.segment_id, "rank": r.rank,
                         "score": round(r.score, 9),
                         "polyline": [round(float(c), 6)
                                      for c in poly.reshape(-1)]})
        return _canonical({"results": rows,
                           "fingerprint": state.index.fingerprint})

    @app.post("/chat")
    async def run_chat(request: Request):
        body = await request.json()
        turns = [ChatTurn(role=m.get("role", "user"), text=m.get("text", ""))
                 for m in body.get("messages", [])]
        with state.lock:
            state.chat_history = turns
        reply = chat(turns, chat_cfg)
        with state.lock:
            state.chat_history = turns + [reply]
        return _canonical({"role": reply.role, "text": reply.text})

    @app.get("/tags")
    def get_tags():
        with state.lock:
            rows = [{"name": t.name, "source_turn": t.source_turn,
                     "query_text": t.query_text} for t in state.tags]
        return _canonical({"tags": rows})

    @app.post("/tags")
    async def post_tags(request: Request):
        body = await request.json()
        turn = ChatTurn(role="assistant", text=body.get("text", ""))
        extracted = extract_tags(turn, mode=config.tag_mode, config=chat_cfg,
                                 turn_index=int(body.get("turn_index", 0)))
        with state.lock:
            state.tags = merge_tags(state.tags, extracted)
            rows = [{"name": t.name, "source_turn": t.source_turn,
                     "query_text": t.query_text} for t in state.tags]
        return _canonical({"tags": rows})

    @app.get("/segments/{segment_id}")
    def segment_geometry(segment_id: int):
        if state.index is None:
            return _canonical({"error": "no index loaded"}, 404)
        pos = {int(v): i for i, v in enumerate(state.index.ids)}.get(segment_id)
        if pos is None:
            return _canonical({"error": "unknown segment id"}, 404)
        poly = state.index.geometry[pos]
        return _canonical({"segment_id": segment_id,
                           "polyline": [round(float(c), 6)
                                        for c in poly.reshape(-1)]})

    if config.frontend_dir and Path(config.frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.frontend_dir, html=True),
                  name="explorer")

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service until interrupted; uvicorn handles signals."""
    import uvicorn

    app = create_app(config)
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    except OSError as e:
        raise BindError(f"cannot bind {config.host}:{config.port}: {e}") from e
