"""The "Getting to Know You" warm-up: assessor turns and profile extraction.

The assessor model asks one question per turn until it utters the
termination phrase or a cap trips. The transcript is then summarized into a
strict NAME/HOBBY/LEVEL/SUMMARY block; parsing is lenient about trailing
chatter but strict about the block grammar, with one repair retry before
falling back to a degraded default profile.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

from . import prompts
from .core import (
    CefrLevel,
    Phase,
    SessionConfig,
    SessionState,
    Speaker,
    Utterance,
    UserProfile,
    append_utterance,
)
from .gateway import Message, ModelGateway, ModelRequest

ASSESSOR_TEMPERATURE = 0.7
ASSESSOR_MAX_TOKENS = 120
PROFILE_TEMPERATURE = 0.0
PROFILE_MAX_TOKENS = 200

DEGRADED_HOBBY = "(unspecified)"
DEGRADED_SUMMARY = "(unavailable)"
DEGRADED_LEVEL = CefrLevel.A2  # beginner-safe default

PROFILE_KEYS = ("NAME", "HOBBY", "LEVEL", "SUMMARY")

_BLOCK_RE = re.compile(r"\[\[PROFILE\]\](.*?)\[\[/PROFILE\]\]", re.DOTALL)
_KEY_LINE_RE = re.compile(r"^([A-Z]+):(.*)$")


class ProfileParseError(Exception):
    pass


class MissingBlock(ProfileParseError):
    def __init__(self) -> None:
        super().__init__("no [[PROFILE]]...[[/PROFILE]] block found")


class MissingKey(ProfileParseError):
    def __init__(self, key: str):
        super().__init__(f"profile block is missing key {key}")
        self.key = key


class InvalidLevel(ProfileParseError):
    def __init__(self, value: str):
        super().__init__(f"LEVEL must be one of A1,A2,B1,B2,C1,C2; got {value!r}")
        self.value = value


def parse_profile_block(text: str, fallback_name: str) -> UserProfile:
    """Parse the strict profile block; trailing text outside it is ignored."""
    match = _BLOCK_RE.search(text)
    if not match:
        raise MissingBlock()
    values: dict[str, str] = {}
    for line in match.group(1).splitlines():
        line = line.strip()
        key_match = _KEY_LINE_RE.match(line)
        if key_match and key_match.group(1) in PROFILE_KEYS:
            key = key_match.group(1)
            if key not in values:  # first occurrence wins
                values[key] = key_match.group(2).strip()
    for key in PROFILE_KEYS:
        if key not in values:
            raise MissingKey(key)
    level_raw = values["LEVEL"].upper()
    try:
        level = CefrLevel(level_raw)
    except ValueError:
        raise InvalidLevel(values["LEVEL"]) from None
    name = values["NAME"] or fallback_name
    return UserProfile(name=name, hobby=values["HOBBY"], level=level, summary=values["SUMMARY"])


def profile_to_block(profile: UserProfile) -> str:
    """Serialize a profile into the exact export skeleton."""
    return (
        "[[PROFILE]]\n"
        f"NAME: {profile.name}\n"
        f"HOBBY: {profile.hobby}\n"
        f"LEVEL: {profile.level.value}\n"
        f"SUMMARY: {profile.summary}\n"
        "[[/PROFILE]]"
    )


def render_gtk_history(transcript: Sequence[Utterance], config: SessionConfig, user_name: str) -> str:
    lines = []
    for utt in transcript:
        name = user_name if utt.speaker.is_user else (utt.speaker.name or "System")
        lines.append(prompts.utterance_line(name, utt.text))
    return "\n".join(lines)


def strip_speaker_prefix(text: str, name: str) -> tuple[str, bool]:
    """Strip a leading "Name:" wire prefix; returns (text, had_prefix)."""
    stripped = text.strip()
    prefix = f"{name}:"
    if stripped.lower().startswith(prefix.lower()):
        return stripped[len(prefix):].strip(), True
    return stripped, False


@dataclass(frozen=True)
class ProfileExtraction:
    profile: UserProfile
    degraded: bool
    attempts: int


def _terminated(state: SessionState, text: str) -> bool:
    if state.config.termination_phrase.casefold() in text.casefold():
        return True
    gtk_count = len(state.phase_utterances(Phase.GETTING_TO_KNOW_YOU))
    if gtk_count >= state.config.assessment_turn_cap:
        return True
    if state.phase_elapsed_ms() >= state.config.assessment_time_cap_s * 1000:
        return True
    return False


def run_assessment_turn(
    state: SessionState,
    gateway: ModelGateway,
    model_id: str = "",
    tick: Callable[[], int] | None = None,
) -> tuple[Utterance, bool]:
    """Produce one assessor utterance; True when the phase should end."""
    assert state.phase is Phase.GETTING_TO_KNOW_YOU
    rendered = prompts.render_assessment()
    state.emit(
        "prompt_rendered", {"template_id": rendered.template_id.value, "content_hash": rendered.content_hash}
    )
    assessor = state.config.assessor
    messages: list[Message] = []
    for utt in state.phase_utterances(Phase.GETTING_TO_KNOW_YOU):
        role = "assistant" if utt.speaker == Speaker.agent(assessor.name) else "user"
        messages.append(Message(role, utt.text))
    if not messages:
        messages.append(Message("user", "(the learner has just joined; greet them and begin)"))
    request = ModelRequest(
        kind="chat",
        system_prompt=rendered.text,
        messages=tuple(messages),
        model_id=model_id,
        temperature=ASSESSOR_TEMPERATURE,
        max_tokens=ASSESSOR_MAX_TOKENS,
    )
    raw = gateway.call(request)
    state.emit(
        "model_call", {"kind": "chat", "request_key": request.key(), "template_id": rendered.template_id.value}
    )
    text, _ = strip_speaker_prefix(raw, assessor.name)
    if not text:
        state.warn("empty_completion", "assessor returned empty text")
        text = "..."
    if text.count("?") > 1:
        state.warn("MultipleQuestions", f"assessor asked {text.count('?')} questions in one turn")
    if tick:
        state.now_ms = tick()
    utterance = Utterance(
        seq=state.next_utterance_seq,
        speaker=Speaker.agent(assessor.name),
        text=text,
        phase=Phase.GETTING_TO_KNOW_YOU,
        ts_ms=state.now_ms,
    )
    append_utterance(state, utterance)
    return utterance, _terminated(state, text)


def extract_profile(
    transcript: Sequence[Utterance],
    gateway: ModelGateway,
    config: SessionConfig,
    model_id: str = "",
    emit: Callable[[str, dict], None] | None = None,
) -> ProfileExtraction:
    """Summarize the warm-up transcript; one repair retry, then defaults."""
    if not transcript:
        raise ValueError("transcript must be non-empty")
    history_text = render_gtk_history(transcript, config, config.fallback_user_name)
    ctx = prompts.PromptContext(gtk_history=history_text, fallback_user_name=config.fallback_user_name)
    rendered = prompts.render_profile_summarizer(ctx)
    if emit:
        emit("prompt_rendered", {"template_id": rendered.template_id.value, "content_hash": rendered.content_hash})
    messages: list[Message] = [Message("user", "Output the profile block now.")]
    last_error: ProfileParseError | None = None
    for attempt in range(2):
        request = ModelRequest(
            kind="chat",
            system_prompt=rendered.text,
            messages=tuple(messages),
            model_id=model_id,
            temperature=PROFILE_TEMPERATURE,
            max_tokens=PROFILE_MAX_TOKENS,
        )
        raw = gateway.call(request)
        if emit:
            emit(
                "model_call",
                {"kind": "chat", "request_key": request.key(), "template_id": rendered.template_id.value},
            )
        try:
            profile = parse_profile_block(raw, config.fallback_user_name)
        except ProfileParseError as exc:
            last_error = exc
            if emit:
                emit("validation_warning", {"code": "profile_parse_error", "detail": str(exc)})
            messages = messages + [
                Message("assistant", raw),
                Message("user", f"Parse error: {exc}. Output exactly the block and nothing else."),
            ]
            continue
        trailing = _BLOCK_RE.split(raw, maxsplit=1)[-1].strip()
        if trailing and emit:
            emit("validation_warning", {"code": "profile_trailing_text", "detail": trailing[:80]})
        return ProfileExtraction(profile=profile, degraded=False, attempts=attempt + 1)
    assert last_error is not None
    profile = UserProfile(
        name=config.fallback_user_name,
        hobby=DEGRADED_HOBBY,
        level=DEGRADED_LEVEL,
        summary=DEGRADED_SUMMARY,
    )
    return ProfileExtraction(profile=profile, degraded=True, attempts=2)
