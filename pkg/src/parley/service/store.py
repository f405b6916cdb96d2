"""Session store: per-session actor locks, JSONL persistence, SSE fanout.

Each session's event log is appended to its own JSONL file as soon as the
events exist; subscribers receive exactly the persisted line for each
event, so any stream is byte-identical to the file.
"""

from __future__ import annotations

import queue
import threading
from pathlib import Path
from typing import Any, Callable

from ..core import Event, SessionConfig
from ..engine import SessionEngine
from ..gateway import Gateway, GatewayConfig
from ..objects import AssetBackend, StubAssetBackend


class UnknownSession(KeyError):
    pass


class SessionHandle:
    def __init__(self, engine: SessionEngine, log_path: Path):
        self.engine = engine
        self.log_path = log_path
        self.lock = threading.Lock()
        self.subscribers: list[queue.Queue[str | None]] = []
        self._persisted = 0

    def run(self, fn: Callable[[SessionEngine], Any]) -> Any:
        """Serialize one mutation against the session actor, then persist."""
        with self.lock:
            try:
                return fn(self.engine)
            finally:
                self._flush()

    def _flush(self) -> None:
        events = self.engine.state.events
        if self._persisted >= len(events):
            return
        fresh = events[self._persisted :]
        lines = [ev.to_json_line() for ev in fresh]
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
        self._persisted = len(events)
        for q in list(self.subscribers):
            for line in lines:
                q.put(line)

    def subscribe(self) -> "queue.Queue[str | None]":
        q: queue.Queue[str | None] = queue.Queue()
        with self.lock:
            self.subscribers.append(q)
        return q

    def unsubscribe(self, q: "queue.Queue[str | None]") -> None:
        with self.lock:
            if q in self.subscribers:
                self.subscribers.remove(q)

    def persisted_lines(self) -> list[str]:
        if not self.log_path.exists():
            return []
        return [l for l in self.log_path.read_text(encoding="utf-8").splitlines() if l.strip()]


class SessionStore:
    def __init__(
        self,
        data_dir: str | Path,
        gateway_factory: Callable[[SessionConfig], Gateway] | None = None,
        asset_backend: AssetBackend | None = None,
        model_id: str | None = None,
    ):
        self.data_dir = Path(data_dir)
        self.gateway_factory = gateway_factory or self._default_gateway_factory
        self.asset_backend = asset_backend or StubAssetBackend()
        self.model_id = GatewayConfig.from_env().model_id if model_id is None else model_id
        self._sessions: dict[str, SessionHandle] = {}
        self._registry_lock = threading.Lock()

    def _default_gateway_factory(self, config: SessionConfig) -> Gateway:
        gw_config = GatewayConfig.from_env()
        gw_config.mode = config.mode
        return Gateway(gw_config)

    def _log_path(self, session_id: str) -> Path:
        return self.data_dir / f"{session_id}.jsonl"

    def create(self, config: SessionConfig, session_id: str | None = None) -> SessionHandle:
        gateway = self.gateway_factory(config)
        engine = SessionEngine.create(
            config, gateway, self.asset_backend, session_id=session_id, model_id=self.model_id
        )
        handle = SessionHandle(engine, self._log_path(engine.state.session_id))
        with self._registry_lock:
            self._sessions[engine.state.session_id] = handle
        handle.run(lambda _: None)  # persist creation events
        return handle

    def get(self, session_id: str) -> SessionHandle:
        with self._registry_lock:
            handle = self._sessions.get(session_id)
        if handle is not None:
            return handle
        return self._restore(session_id)

    def _restore(self, session_id: str) -> SessionHandle:
        """Crash recovery: rebuild the session from its persisted log."""
        log_path = self._log_path(session_id)
        if not log_path.exists():
            raise UnknownSession(session_id)
        lines = [l for l in log_path.read_text(encoding="utf-8").splitlines() if l.strip()]
        events = [Event.from_json_line(l) for l in lines]
        from ..core import restore_from_events

        state = restore_from_events(events)
        gateway = self.gateway_factory(state.config)
        # The log does not carry the gateway mode; resume with whatever mode
        # this store's gateway actually runs in (affects the clock choice).
        actual_mode = getattr(gateway, "mode", None)
        if actual_mode is not None:
            state.config = state.config.with_overrides(mode=actual_mode)
        engine = SessionEngine(state, gateway, self.asset_backend, model_id=self.model_id)
        handle = SessionHandle(engine, log_path)
        handle._persisted = len(events)
        with self._registry_lock:
            self._sessions.setdefault(session_id, handle)
            return self._sessions[session_id]

    def ids(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._sessions)
