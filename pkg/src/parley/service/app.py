"""HTTP session service: lifecycle endpoints plus a server-sent event stream.

Events streamed over SSE carry exactly the bytes persisted in the session's
JSONL log, one event per SSE message, with the event seq as the SSE id.
"""

from __future__ import annotations

import json
import queue
from pathlib import Path
from typing import Any, Iterator

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import PlainTextResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from ..core import Event, NotUsersTurn, SessionEnded
from ..engine import SessionEngine
from .models import (
    AdvanceResponse,
    CreateSessionRequest,
    CreateSessionResponse,
    SceneIngestResponse,
    SceneModel,
    SessionConfigModel,
    StateResponse,
    UtteranceAck,
    UtteranceRequest,
)
from .store import SessionStore, UnknownSession

SSE_KEEPALIVE_S = 15.0


def _event_dicts(events: list[Event]) -> list[dict[str, Any]]:
    return [json.loads(ev.to_json_line()) for ev in events]


def create_app(
    store: SessionStore | None = None,
    data_dir: str | Path = "data",
    frontend_dir: str | Path | None = None,
    sse_keepalive_s: float = SSE_KEEPALIVE_S,
) -> FastAPI:
    app = FastAPI(title="parley", version="0.1.0")
    app.state.store = store or SessionStore(data_dir)
    app.state.sse_keepalive_s = sse_keepalive_s

    def _get_handle(session_id: str):
        try:
            return app.state.store.get(session_id)
        except UnknownSession:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}") from None

    @app.post("/sessions", response_model=CreateSessionResponse)
    def create_session(body: CreateSessionRequest | None = None) -> CreateSessionResponse:
        config_model = body.config if body and body.config else SessionConfigModel()
        try:
            config = config_model.to_core()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        handle = app.state.store.create(config)
        snapshot = handle.run(lambda e: e.state.snapshot())
        return CreateSessionResponse(session_id=handle.engine.state.session_id, snapshot=snapshot)

    @app.post("/sessions/{session_id}/utterance", response_model=UtteranceAck)
    def post_user_utterance(session_id: str, body: UtteranceRequest) -> UtteranceAck:
        handle = _get_handle(session_id)
        try:
            utt = handle.run(lambda e: e.post_user_utterance(body.text))
        except NotUsersTurn as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except SessionEnded as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return UtteranceAck(seq=utt.seq, ts_ms=utt.ts_ms)

    @app.post("/sessions/{session_id}/advance", response_model=AdvanceResponse)
    def advance(session_id: str) -> AdvanceResponse:
        handle = _get_handle(session_id)

        def step(engine: SessionEngine):
            events = engine.advance()
            return events, engine.state.awaiting_user, engine.state.phase.value

        try:
            events, awaiting, phase = handle.run(step)
        except SessionEnded as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return AdvanceResponse(events=_event_dicts(events), awaiting_user=awaiting, phase=phase)

    @app.post("/sessions/{session_id}/scene", response_model=SceneIngestResponse)
    def ingest_scene(session_id: str, body: SceneModel) -> SceneIngestResponse:
        handle = _get_handle(session_id)
        try:
            scene_ctx = body.to_core()
            events = handle.run(lambda e: e.ingest_scene(scene_ctx))
        except NotUsersTurn as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return SceneIngestResponse(events=_event_dicts(events), phase=handle.engine.state.phase.value)

    @app.get("/sessions/{session_id}/state", response_model=StateResponse)
    def get_state(session_id: str) -> StateResponse:
        handle = _get_handle(session_id)
        return StateResponse(snapshot=handle.run(lambda e: e.state.snapshot()))

    @app.get("/sessions/{session_id}/transcript")
    def export_transcript(session_id: str) -> PlainTextResponse:
        handle = _get_handle(session_id)
        lines = handle.persisted_lines()
        body = "\n".join(lines) + ("\n" if lines else "")
        return PlainTextResponse(body, media_type="application/x-ndjson")

    @app.get("/sessions/{session_id}/events")
    def stream_events(
        session_id: str,
        request: Request,
        from_seq: int = 0,
        follow: bool = True,
        max_events: int | None = None,
    ) -> StreamingResponse:
        handle = _get_handle(session_id)
        last_event_id = request.headers.get("last-event-id")
        start_after = int(last_event_id) if last_event_id and last_event_id.isdigit() else from_seq

        def sse(line: str) -> str:
            seq = json.loads(line)["seq"]
            return f"id: {seq}\ndata: {line}\n\n"

        def generate() -> Iterator[bytes]:
            sub: queue.Queue[str | None] | None = handle.subscribe() if follow else None
            try:
                sent = 0
                delivered = 0
                for line in handle.persisted_lines():
                    seq = json.loads(line)["seq"]
                    if seq > start_after:
                        yield sse(line).encode("utf-8")
                        delivered = seq
                        sent += 1
                        if max_events is not None and sent >= max_events:
                            return
                if sub is None:
                    return
                while True:
                    try:
                        line = sub.get(timeout=app.state.sse_keepalive_s)
                    except queue.Empty:
                        yield b": keepalive\n\n"
                        continue
                    if line is None:
                        return
                    seq = json.loads(line)["seq"]
                    if seq <= max(delivered, start_after):
                        continue
                    delivered = seq
                    yield sse(line).encode("utf-8")
                    sent += 1
                    if max_events is not None and sent >= max_events:
                        return
            finally:
                if sub is not None:
                    handle.unsubscribe(sub)

        return StreamingResponse(generate(), media_type="text/event-stream")

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
