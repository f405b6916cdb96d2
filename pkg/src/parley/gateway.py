"""Provider-agnostic model access with live, record, and replay modes.

Requests are canonicalized (sorted-key JSON, UTF-8, no insignificant
whitespace) and keyed by their SHA-256 digest. Record mode appends
key/response pairs to a JSONL cassette; replay mode resolves calls from the
cassette alone and never touches the network.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from .core import GatewayMode

logger = logging.getLogger(__name__)

RETRY_BACKOFF_S = (0.5, 1.0, 2.0)
MAX_ATTEMPTS = 3


class GatewayError(Exception):
    pass


class ProviderError(GatewayError):
    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"provider returned status {status}: {detail}")
        self.status = status


class Timeout(GatewayError):
    pass


class CassetteMiss(GatewayError):
    """Replay key absent: the test script has drifted from the cassette."""

    def __init__(self, key: str):
        super().__init__(f"cassette has no (further) entry for request key {key}")
        self.key = key


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str
    image: bytes | None = None


@dataclass(frozen=True)
class ModelRequest:
    kind: str  # chat | vision
    system_prompt: str
    messages: tuple[Message, ...]
    model_id: str
    temperature: float
    max_tokens: int

    def __post_init__(self) -> None:
        if sum(1 for m in self.messages if m.image is not None) > 1:
            raise ValueError("at most one image per request")

    def canonical(self) -> str:
        doc = {
            "kind": self.kind,
            "messages": [
                {
                    "content": m.content,
                    "image": base64.b64encode(m.image).decode("ascii") if m.image else None,
                    "role": m.role,
                }
                for m in self.messages
            ],
            "params": {
                "max_tokens": self.max_tokens,
                "model_id": self.model_id,
                "temperature": self.temperature,
            },
            "system_prompt": self.system_prompt,
        }
        return json.dumps(doc, ensure_ascii=False, separators=(",", ":"), sort_keys=True)

    def key(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CassetteEntry:
    key: str
    response: str
    meta: dict[str, Any]


class Cassette:
    """Append-only JSONL store of request-key/response pairs."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: list[CassetteEntry] = []
        self._cursors: dict[str, int] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                d = json.loads(line)
                self._entries.append(CassetteEntry(d["key"], d["response"], d.get("meta", {})))

    def __len__(self) -> int:
        return len(self._entries)

    def append(self, key: str, response: str, meta: dict[str, Any]) -> None:
        entry = CassetteEntry(key, response, meta)
        self._entries.append(entry)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "response": response, "meta": meta}, ensure_ascii=False))
            fh.write("\n")

    def lookup(self, key: str) -> str:
        """Next unconsumed response for this key, in recorded order."""
        start = self._cursors.get(key, 0)
        for idx in range(start, len(self._entries)):
            if self._entries[idx].key == key:
                self._cursors[key] = idx + 1
                return self._entries[idx].response
        raise CassetteMiss(key)

    def reset_cursors(self) -> None:
        self._cursors.clear()


# A transport takes the provider-ready payload and returns the raw response
# body (already JSON-decoded). Injectable so tests can fake or forbid I/O.
Transport = Callable[[dict[str, Any]], dict[str, Any]]


class NetworkForbidden(GatewayError):
    pass


def forbidden_transport(payload: dict[str, Any]) -> dict[str, Any]:
    raise NetworkForbidden("network transport invoked in replay mode")


@dataclass
class GatewayConfig:
    mode: GatewayMode = GatewayMode.REPLAY
    base_url: str = "https://api.openai.com/v1"
    model_id: str = "gpt-4o-mini"
    api_key: str = ""
    cassette_path: str | None = None
    request_timeout_s: float = 30.0

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> "GatewayConfig":
        env = dict(os.environ if env is None else env)
        return cls(
            mode=GatewayMode(env.get("MODE", "replay")),
            base_url=env.get("MODEL_BASE_URL", "https://api.openai.com/v1"),
            model_id=env.get("MODEL_ID", "gpt-4o-mini"),
            api_key=env.get("API_KEY", ""),
            cassette_path=env.get("CASSETTE_PATH"),
        )


class ModelGateway(Protocol):
    def call(self, request: ModelRequest) -> str: ...


@dataclass
class Gateway:
    config: GatewayConfig
    transport: Transport | None = None
    sleep: Callable[[float], None] = time.sleep
    _cassette: Cassette | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.config.mode in (GatewayMode.RECORD, GatewayMode.REPLAY):
            if not self.config.cassette_path:
                raise ValueError(f"{self.config.mode.value} mode requires a cassette path")
            self._cassette = Cassette(self.config.cassette_path)
        if self.transport is None:
            self.transport = forbidden_transport if self.config.mode is GatewayMode.REPLAY else self._http_transport

    @property
    def mode(self) -> GatewayMode:
        return self.config.mode

    @property
    def cassette(self) -> Cassette | None:
        return self._cassette

    def call(self, request: ModelRequest) -> str:
        key = request.key()
        if self.config.mode is GatewayMode.REPLAY:
            assert self._cassette is not None
            return self._cassette.lookup(key)
        text = self._call_with_retry(request)
        if self.config.mode is GatewayMode.RECORD:
            assert self._cassette is not None
            self._cassette.append(
                key,
                text,
                {"recorded_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()), "model_id": request.model_id},
            )
        return text

    # -- live path -------------------------------------------------------

    def _call_with_retry(self, request: ModelRequest) -> str:
        payload = self._provider_payload(request)
        last_error: GatewayError | None = None
        for attempt in range(MAX_ATTEMPTS):
            try:
                assert self.transport is not None
                body = self.transport(payload)
                return self._extract_text(body)
            except Timeout as exc:
                last_error = exc
            except ProviderError as exc:
                if exc.status != 429 and exc.status < 500:
                    raise
                last_error = exc
            if attempt < MAX_ATTEMPTS - 1:
                backoff = RETRY_BACKOFF_S[min(attempt, len(RETRY_BACKOFF_S) - 1)]
                logger.warning("gateway retry %d after %.1fs: %s", attempt + 1, backoff, last_error)
                self.sleep(backoff)
        assert last_error is not None
        raise last_error

    def _provider_payload(self, request: ModelRequest) -> dict[str, Any]:
        messages: list[dict[str, Any]] = [{"role": "system", "content": request.system_prompt}]
        for m in request.messages:
            if m.image is not None:
                messages.append(
                    {
                        "role": m.role,
                        "content": [
                            {"type": "text", "text": m.content},
                            {
                                "type": "image_url",
                                "image_url": {
                                    "url": "data:image/unknown;base64,"
                                    + base64.b64encode(m.image).decode("ascii")
                                },
                            },
                        ],
                    }
                )
            else:
                messages.append({"role": m.role, "content": m.content})
        return {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def _extract_text(self, body: dict[str, Any]) -> str:
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(502, f"malformed completion body: {exc}") from exc

    def _http_transport(self, payload: dict[str, Any]) -> dict[str, Any]:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {self.config.api_key}"} if self.config.api_key else {}
        try:
            response = httpx.post(url, json=payload, headers=headers, timeout=self.config.request_timeout_s)
        except httpx.TimeoutException as exc:
            raise Timeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise ProviderError(599, str(exc)) from exc
        if response.status_code != 200:
            raise ProviderError(response.status_code, response.text[:200])
        return response.json()
