"""Multi-party turn management.

The supervisor model proposes the next speaker; a deterministic validator
enforces the balance rules (no consecutive speaker, agent runs capped at
three, nobody starved), and a deterministic fallback repairs any directive
that violates them. Forced rules (a starved participant) short-circuit the
model entirely.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

from . import prompts
from .core import SessionConfig, Speaker, Utterance
from .gateway import Message, ModelGateway, ModelRequest

SUPERVISOR_SLICE_LEN = 8
SUPERVISOR_TEMPERATURE = 0.0
SUPERVISOR_MAX_TOKENS = 16


class UnparsableDirective(Exception):
    pass


class DirectiveSource(str, Enum):
    MODEL = "model"
    FALLBACK = "fallback"
    FORCED_USER = "forced_user"
    FORCED_AGENT = "forced_agent"


class ViolationKind(str, Enum):
    CONSECUTIVE_SPEAKER = "ConsecutiveSpeaker"
    AGENT_RUN_CAP_EXCEEDED = "AgentRunCapExceeded"
    USER_STARVATION = "UserStarvation"
    AGENT_STARVATION = "AgentStarvation"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    detail: str


@dataclass(frozen=True)
class TurnDirective:
    next_speaker: Speaker
    source: DirectiveSource
    raw_model_text: str | None = None

    def __post_init__(self) -> None:
        if self.source is DirectiveSource.MODEL and self.raw_model_text is None:
            raise ValueError("model-sourced directive must carry raw_model_text")


@dataclass(frozen=True)
class Participants:
    """Roster in fallback tie-break order: user, then agents as configured."""

    user_name: str
    agent_names: tuple[str, str]

    @classmethod
    def from_config(cls, config: SessionConfig, user_name: str | None = None) -> "Participants":
        return cls(
            user_name=user_name or config.fallback_user_name,
            agent_names=(config.personas[0].name, config.personas[1].name),
        )

    def roster(self) -> tuple[Speaker, ...]:
        return (Speaker.user(), Speaker.agent(self.agent_names[0]), Speaker.agent(self.agent_names[1]))

    def display_name(self, speaker: Speaker) -> str:
        return self.user_name if speaker.is_user else (speaker.name or "")

    def by_name(self, name: str) -> Speaker | None:
        folded = name.casefold()
        if folded == self.user_name.casefold():
            return Speaker.user()
        for agent_name in self.agent_names:
            if folded == agent_name.casefold():
                return Speaker.agent(agent_name)
        return None


def _mentions(text: str, name: str) -> bool:
    return re.search(rf"(?<![A-Za-z0-9]){re.escape(name)}(?![A-Za-z0-9])", text, re.IGNORECASE) is not None


def _present_in_window(window: Sequence[Utterance], speaker: Speaker, name: str) -> bool:
    """Speaker or addressee (literal name mention) within the window."""
    for utt in window:
        if utt.speaker == speaker:
            return True
        if utt.speaker != speaker and _mentions(utt.text, name):
            return True
    return False


def _starved(history: Sequence[Utterance], speaker: Speaker, name: str, limit: int) -> bool:
    if len(history) < limit:
        return False
    return not _present_in_window(history[-limit:], speaker, name)


def _trailing_agent_run(history: Sequence[Utterance]) -> int:
    run = 0
    for utt in reversed(history):
        if utt.speaker.is_agent:
            run += 1
        else:
            break
    return run


def parse_supervisor_output(text: str, participants: Participants) -> Speaker:
    """Strict single-name match, tolerant of surrounding punctuation."""
    trimmed = text.strip().strip(string.punctuation + string.whitespace)
    speaker = participants.by_name(trimmed)
    if speaker is not None:
        return speaker
    names_found = {
        p.encode()
        for p in participants.roster()
        if _mentions(text, participants.display_name(p))
    }
    if len(names_found) > 1:
        raise UnparsableDirective(f"multiple participant names in {text!r}")
    if not names_found:
        raise UnparsableDirective(f"no participant name in {text!r}")
    raise UnparsableDirective(f"extra text around participant name in {text!r}")


def validate_directive(
    directive: TurnDirective,
    history: Sequence[Utterance],
    config: SessionConfig,
    participants: Participants | None = None,
) -> list[Violation]:
    participants = participants or Participants.from_config(config)
    return _validate_speaker(directive.next_speaker, history, config, participants)


def _validate_speaker(
    speaker: Speaker,
    history: Sequence[Utterance],
    config: SessionConfig,
    participants: Participants,
) -> list[Violation]:
    violations: list[Violation] = []
    if history and history[-1].speaker == speaker:
        violations.append(
            Violation(ViolationKind.CONSECUTIVE_SPEAKER, f"{speaker.encode()} spoke the previous turn")
        )
    if speaker.is_agent and _trailing_agent_run(history) >= config.agent_run_cap:
        violations.append(
            Violation(
                ViolationKind.AGENT_RUN_CAP_EXCEEDED,
                f"directive would extend an agent run past {config.agent_run_cap}",
            )
        )
    limit = config.user_starvation_limit
    if not speaker.is_user and _starved(history, Speaker.user(), participants.user_name, limit):
        violations.append(
            Violation(ViolationKind.USER_STARVATION, f"user absent from the last {limit} turns")
        )
    for agent_name in participants.agent_names:
        agent = Speaker.agent(agent_name)
        if speaker != agent and _starved(history, agent, agent_name, limit):
            violations.append(
                Violation(ViolationKind.AGENT_STARVATION, f"{agent_name} absent from the last {limit} turns")
            )
    return violations


def _recency(history: Sequence[Utterance], speaker: Speaker) -> int:
    """Index of the speaker's most recent turn, -1 if never spoke."""
    for idx in range(len(history) - 1, -1, -1):
        if history[idx].speaker == speaker:
            return idx
    return -1


def fallback_policy(
    history: Sequence[Utterance],
    participants: Participants,
    config: SessionConfig,
) -> Speaker:
    """Deterministic repair: oldest-turn eligible participant, roster-order ties.

    Total for arbitrary histories: forced rules dominate, and if no candidate
    satisfies every rule (corrupt input) the policy degrades to non-consecutive
    participants, then to roster order.
    """
    roster = participants.roster()
    if not history:
        return roster[1]  # an agent opens; the user is never forced to start
    limit = config.user_starvation_limit
    if _starved(history, Speaker.user(), participants.user_name, limit):
        return Speaker.user()
    for agent_name in participants.agent_names:
        agent = Speaker.agent(agent_name)
        if _starved(history, agent, agent_name, limit) and history[-1].speaker != agent:
            return agent

    def pick(candidates: list[Speaker]) -> Speaker | None:
        if not candidates:
            return None
        return min(candidates, key=lambda s: (_recency(history, s), roster.index(s)))

    clean = [s for s in roster if not _validate_speaker(s, history, config, participants)]
    choice = pick(clean)
    if choice is None:
        choice = pick([s for s in roster if history[-1].speaker != s])
    return choice if choice is not None else roster[0]


def build_supervisor_request(
    history: Sequence[Utterance],
    participants: Participants,
    model_id: str,
) -> tuple[prompts.RenderedPrompt, ModelRequest]:
    ctx = prompts.PromptContext(
        user_name=participants.user_name,
        cur_agent_name=participants.agent_names[0],
        oth_agent_name=participants.agent_names[1],
    )
    rendered = prompts.render_supervisor(ctx)
    window = history[-SUPERVISOR_SLICE_LEN:]
    lines = prompts.render_conversation_lines(
        [(participants.display_name(u.speaker), u.text) for u in window]
    )
    request = ModelRequest(
        kind="chat",
        system_prompt=rendered.text,
        messages=(Message("user", f"Conversation:\n{lines}\n\nWho speaks next?"),),
        model_id=model_id,
        temperature=SUPERVISOR_TEMPERATURE,
        max_tokens=SUPERVISOR_MAX_TOKENS,
    )
    return rendered, request


def decide_next_speaker(
    history: Sequence[Utterance],
    participants: Participants,
    gateway: ModelGateway,
    config: SessionConfig,
    model_id: str = "",
    emit: Callable[[str, dict], None] | None = None,
) -> TurnDirective:
    """Pick the next speaker; model output is repaired, never trusted.

    Gateway failures propagate so the caller can distinguish transient
    provider errors (fall back) from cassette drift (fatal).
    """
    if not history:
        raise ValueError("decide_next_speaker requires non-empty multi-party history")
    limit = config.user_starvation_limit
    if _starved(history, Speaker.user(), participants.user_name, limit):
        return TurnDirective(Speaker.user(), DirectiveSource.FORCED_USER)
    for agent_name in participants.agent_names:
        agent = Speaker.agent(agent_name)
        if _starved(history, agent, agent_name, limit) and history[-1].speaker != agent:
            return TurnDirective(agent, DirectiveSource.FORCED_AGENT)

    rendered, request = build_supervisor_request(history, participants, model_id)
    if emit:
        emit("prompt_rendered", {"template_id": rendered.template_id.value, "content_hash": rendered.content_hash})
    raw = gateway.call(request)
    if emit:
        emit("model_call", {"kind": "chat", "request_key": request.key(), "template_id": rendered.template_id.value})
    try:
        speaker = parse_supervisor_output(raw, participants)
    except UnparsableDirective:
        return TurnDirective(fallback_policy(history, participants, config), DirectiveSource.FALLBACK, raw)
    if _validate_speaker(speaker, history, config, participants):
        return TurnDirective(fallback_policy(history, participants, config), DirectiveSource.FALLBACK, raw)
    return TurnDirective(speaker, DirectiveSource.MODEL, raw)
