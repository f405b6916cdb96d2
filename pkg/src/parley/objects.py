"""The realia pipeline: cadence trigger, suggestion guardrails, generation.

Every N multi-party turns the suggestion model proposes one tangible noun.
The proposal is parsed under a strict one-token grammar, deduplicated
against what is visible in the scene and what was already suggested, and on
acceptance handed to the asset backend. A failed generation never cancels
the realia turn: the conversation references the object by name.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import httpx

from . import prompts
from .core import (
    GeneratedObject,
    ObjectRegistry,
    ObjectStatus,
    Phase,
    SessionState,
    normalize_noun,
)
from .gateway import GatewayError, CassetteMiss, Message, ModelGateway, ModelRequest

logger = logging.getLogger(__name__)

SUGGESTION_TEMPERATURE = 0.0
SUGGESTION_MAX_TOKENS = 16
CONVERSATION_SLICE_LEN = 8  # one trigger window

_NOUN_RE = re.compile(r"^[a-z]+(?:-[a-z]+)*$")


class SuggestionError(Exception):
    pass


class NonSingleToken(SuggestionError):
    pass


class NonLowercase(SuggestionError):
    pass


class GenerationFailed(Exception):
    pass


class GenerationTimeout(GenerationFailed):
    pass


NONE_TOKEN = "none"


@dataclass(frozen=True)
class Suggestion:
    noun: str | None  # None encodes the explicit "none" token

    @property
    def is_none(self) -> bool:
        return self.noun is None


class RejectReason(str, Enum):
    USED_DUPLICATE = "UsedDuplicate"
    VISIBLE_DUPLICATE = "VisibleDuplicate"


@dataclass(frozen=True)
class DedupeResult:
    accepted: bool
    reason: RejectReason | None = None


def should_trigger(multiparty_turn_index: int, interval: int) -> bool:
    """True on every interval-th multi-party utterance (1-based count)."""
    if multiparty_turn_index < 1:
        raise ValueError("turn index starts at 1")
    return multiparty_turn_index % interval == 0


def parse_suggestion(text: str) -> Suggestion:
    token = text.strip()
    if token.casefold() == NONE_TOKEN:
        return Suggestion(None)
    if len(token.split()) != 1 or not token:
        raise NonSingleToken(f"expected exactly one token, got {text!r}")
    if not _NOUN_RE.match(token):
        raise NonLowercase(f"expected a lowercase alphabetic noun, got {text!r}")
    return Suggestion(token)


def check_dedupe(noun: str, registry: ObjectRegistry) -> DedupeResult:
    key = normalize_noun(noun)
    if key in registry.used_keys():
        return DedupeResult(False, RejectReason.USED_DUPLICATE)
    if key in registry.visible_keys():
        return DedupeResult(False, RejectReason.VISIBLE_DUPLICATE)
    return DedupeResult(True)


@dataclass(frozen=True)
class GenerationResult:
    status: ObjectStatus
    asset_ref: str
    latency_ms: int


class AssetBackend(Protocol):
    def generate(self, noun: str) -> GenerationResult: ...


@dataclass(frozen=True)
class StubAssetBackend:
    """Deterministic stand-in: same noun always yields the same asset ref."""

    simulated_latency_ms: int = 150
    fail_nouns: frozenset[str] = frozenset()

    def generate(self, noun: str) -> GenerationResult:
        if noun in self.fail_nouns:
            raise GenerationFailed(f"stub configured to fail for {noun!r}")
        return GenerationResult(ObjectStatus.READY, f"stub://{noun}", self.simulated_latency_ms)


@dataclass
class LiveAssetBackend:
    """Text-to-3D client: submit the noun, poll until the asset completes."""

    base_url: str
    api_key: str = ""
    poll_interval_s: float = 2.0
    timeout_s: float = 120.0

    def _headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}

    def generate(self, noun: str) -> GenerationResult:
        started = time.monotonic()
        try:
            response = httpx.post(
                self.base_url.rstrip("/") + "/generations",
                json={"prompt": noun},
                headers=self._headers(),
                timeout=30.0,
            )
            response.raise_for_status()
            job_id = response.json()["id"]
            while True:
                if time.monotonic() - started > self.timeout_s:
                    raise GenerationTimeout(f"generation of {noun!r} exceeded {self.timeout_s}s")
                poll = httpx.get(
                    self.base_url.rstrip("/") + f"/generations/{job_id}",
                    headers=self._headers(),
                    timeout=30.0,
                )
                poll.raise_for_status()
                doc = poll.json()
                state = doc.get("state")
                if state == "completed":
                    latency = int((time.monotonic() - started) * 1000)
                    return GenerationResult(ObjectStatus.READY, doc.get("asset_url", ""), latency)
                if state == "failed":
                    raise GenerationFailed(doc.get("failure_reason", "backend reported failure"))
                time.sleep(self.poll_interval_s)
        except httpx.HTTPError as exc:
            raise GenerationFailed(str(exc)) from exc


def suggest_and_generate(
    state: SessionState,
    gateway: ModelGateway,
    asset_backend: AssetBackend,
    model_id: str = "",
) -> GeneratedObject | None:
    """Run one trigger: suggest, dedupe, generate. None when no object lands."""
    registry = state.registry
    user_name = state.user_display_name()
    window = state.multiparty_utterances()[-CONVERSATION_SLICE_LEN:]
    slice_text = prompts.render_conversation_lines(
        [(state.speaker_display_name(u.speaker), u.text) for u in window]
    )
    latest = window[-1] if window else None
    ctx = prompts.PromptContext(
        used_csv=", ".join(registry.used),
        visible_csv=", ".join(registry.visible),
        latest_message=latest.text if latest else "",
        conversation_slice=slice_text,
        user_name=user_name,
    )
    rendered = prompts.render_object_suggestion(ctx)
    state.emit(
        "prompt_rendered", {"template_id": rendered.template_id.value, "content_hash": rendered.content_hash}
    )
    request = ModelRequest(
        kind="chat",
        system_prompt=rendered.text,
        messages=(Message("user", "Output:"),),
        model_id=model_id,
        temperature=SUGGESTION_TEMPERATURE,
        max_tokens=SUGGESTION_MAX_TOKENS,
    )
    try:
        raw = gateway.call(request)
    except CassetteMiss:
        raise
    except GatewayError as exc:
        state.warn("suggestion_gateway_failure", str(exc))
        return None
    state.emit(
        "model_call", {"kind": "chat", "request_key": request.key(), "template_id": rendered.template_id.value}
    )
    try:
        suggestion = parse_suggestion(raw)
    except SuggestionError as exc:
        state.warn("suggestion_grammar", str(exc))
        suggestion = Suggestion(None)
    if suggestion.is_none:
        state.emit("object_rejected", {"noun": None, "reason": "none_token"})
        return None
    noun = suggestion.noun
    assert noun is not None
    verdict = check_dedupe(noun, registry)
    if not verdict.accepted:
        assert verdict.reason is not None
        state.emit("object_rejected", {"noun": noun, "reason": verdict.reason.value})
        return None

    turn_index = len(state.multiparty_utterances())
    requested_at = state.history[-1].seq if state.history else 0
    registry.register_suggested(noun, requested_at)
    state.emit("object_suggested", {"noun": noun, "turn_index": turn_index, "requested_at_seq": requested_at})
    return complete_generation(state, asset_backend, noun)


def complete_generation(
    state: SessionState, asset_backend: AssetBackend, noun: str
) -> GeneratedObject:
    """Run the backend and deliver the completion; failure still schedules realia."""
    requested_at = state.registry.records[noun].requested_at_seq
    try:
        result = asset_backend.generate(noun)
        record = GeneratedObject(noun, result.status, result.asset_ref, requested_at)
        latency_ms = result.latency_ms
    except GenerationFailed as exc:
        logger.warning("asset generation failed for %r: %s", noun, exc)
        record = GeneratedObject(noun, ObjectStatus.FAILED, "", requested_at)
        latency_ms = 0
    state.registry.records[noun] = record
    state.emit(
        "object_generated",
        {
            "noun": noun,
            "status": record.status.value,
            "asset_ref": record.asset_ref,
            "latency_ms": latency_ms,
        },
    )
    if state.phase is Phase.MULTI_PARTY:
        state.pending_realia = noun
    return record
