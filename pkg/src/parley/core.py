"""Domain types and the two-phase session state machine.

A session moves along a fixed phase chain (Init -> GettingToKnowYou ->
SceneCapture -> MultiParty -> Ended) and accumulates an append-only event
log. Every other module mutates a session exclusively through the
operations defined here, so the event log is a complete, replayable record
of the session.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable

TICK_MS = 1000  # logical-clock advance per utterance in deterministic modes


class SessionError(Exception):
    """Base class for session-level failures."""


class IllegalTransition(SessionError):
    pass


class SequenceGap(SessionError):
    pass


class SpeakerNotInPhase(SessionError):
    pass


class SessionEnded(SessionError):
    pass


class NotUsersTurn(SessionError):
    pass


class Phase(str, Enum):
    INIT = "Init"
    GETTING_TO_KNOW_YOU = "GettingToKnowYou"
    SCENE_CAPTURE = "SceneCapture"
    MULTI_PARTY = "MultiParty"
    ENDED = "Ended"


PHASE_CHAIN = (
    Phase.INIT,
    Phase.GETTING_TO_KNOW_YOU,
    Phase.SCENE_CAPTURE,
    Phase.MULTI_PARTY,
    Phase.ENDED,
)


class PhaseTrigger(str, Enum):
    SESSION_STARTED = "session_started"
    TERMINATION_PHRASE = "termination_phrase"
    ASSESSMENT_TIME_CAP = "assessment_time_cap"
    ASSESSMENT_TURN_CAP = "assessment_turn_cap"
    SCENE_INGESTED = "scene_ingested"
    MULTIPARTY_TIME_CAP = "multiparty_time_cap"


# Which triggers may fire in which phase; Ended accepts none (absorbing).
LEGAL_TRIGGERS: dict[Phase, frozenset[PhaseTrigger]] = {
    Phase.INIT: frozenset({PhaseTrigger.SESSION_STARTED}),
    Phase.GETTING_TO_KNOW_YOU: frozenset(
        {
            PhaseTrigger.TERMINATION_PHRASE,
            PhaseTrigger.ASSESSMENT_TIME_CAP,
            PhaseTrigger.ASSESSMENT_TURN_CAP,
        }
    ),
    Phase.SCENE_CAPTURE: frozenset({PhaseTrigger.SCENE_INGESTED}),
    Phase.MULTI_PARTY: frozenset({PhaseTrigger.MULTIPARTY_TIME_CAP}),
    Phase.ENDED: frozenset(),
}


class SpeakerKind(str, Enum):
    USER = "user"
    AGENT = "agent"
    SYSTEM = "system"


@dataclass(frozen=True)
class Speaker:
    kind: SpeakerKind
    name: str | None = None

    @classmethod
    def user(cls) -> "Speaker":
        return cls(SpeakerKind.USER)

    @classmethod
    def system(cls) -> "Speaker":
        return cls(SpeakerKind.SYSTEM)

    @classmethod
    def agent(cls, name: str) -> "Speaker":
        return cls(SpeakerKind.AGENT, name)

    @property
    def is_user(self) -> bool:
        return self.kind is SpeakerKind.USER

    @property
    def is_agent(self) -> bool:
        return self.kind is SpeakerKind.AGENT

    def encode(self) -> str:
        if self.kind is SpeakerKind.AGENT:
            return f"agent:{self.name}"
        return self.kind.value

    @classmethod
    def decode(cls, raw: str) -> "Speaker":
        if raw == "user":
            return cls.user()
        if raw == "system":
            return cls.system()
        if raw.startswith("agent:"):
            return cls.agent(raw.split(":", 1)[1])
        raise ValueError(f"unknown speaker encoding: {raw!r}")


class CefrLevel(str, Enum):
    A1 = "A1"
    A2 = "A2"
    B1 = "B1"
    B2 = "B2"
    C1 = "C1"
    C2 = "C2"


class GatewayMode(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


@dataclass(frozen=True)
class AgentPersona:
    name: str
    personality: str
    voice_id: str = ""

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("persona name must be non-empty")
        if ":" in self.name:
            # ':' is reserved by the "Name: MESSAGE" wire format.
            raise ValueError(f"persona name may not contain ':': {self.name!r}")

    def to_dict(self) -> dict[str, str]:
        return {"name": self.name, "personality": self.personality, "voice_id": self.voice_id}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AgentPersona":
        return cls(name=d["name"], personality=d.get("personality", ""), voice_id=d.get("voice_id", ""))


@dataclass(frozen=True)
class SceneContext:
    objects: tuple[str, ...]
    description: str

    def to_dict(self) -> dict[str, Any]:
        return {"objects": list(self.objects), "description": self.description}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SceneContext":
        return cls(objects=tuple(d.get("objects", ())), description=d.get("description", ""))


def default_personas() -> tuple[AgentPersona, AgentPersona]:
    return (
        AgentPersona("Marta", "warm, curious and encouraging; loves music and cooking", "voice-f1"),
        AgentPersona("Omar", "playful and talkative; fond of travel and gadgets", "voice-m1"),
    )


def default_assessor() -> AgentPersona:
    return AgentPersona("Tutor", "patient, friendly examiner", "voice-n1")


@dataclass(frozen=True)
class SessionConfig:
    target_language: str = "English"
    fallback_user_name: str = "Learner"
    personas: tuple[AgentPersona, AgentPersona] = field(default_factory=default_personas)
    assessor: AgentPersona = field(default_factory=default_assessor)
    assessment_time_cap_s: int = 180
    assessment_turn_cap: int = 20
    multiparty_time_cap_s: int = 1200
    object_trigger_interval: int = 8
    agent_run_cap: int = 3
    user_starvation_limit: int = 3
    response_char_limit: int = 175
    realia_char_limit: int = 200
    termination_phrase: str = "The assessment is finished"
    mode: GatewayMode = GatewayMode.REPLAY
    rng_seed: int = 0
    scene: SceneContext | None = None  # preset scene, ingested when SceneCapture begins
    retry_long_responses: bool = False

    def __post_init__(self) -> None:
        if len(self.personas) != 2:
            raise ValueError("exactly two multi-party personas are required")
        if self.personas[0].name == self.personas[1].name:
            raise ValueError("multi-party persona names must be distinct")
        for cap_name in (
            "assessment_time_cap_s",
            "assessment_turn_cap",
            "multiparty_time_cap_s",
            "object_trigger_interval",
            "agent_run_cap",
            "user_starvation_limit",
            "response_char_limit",
            "realia_char_limit",
        ):
            if getattr(self, cap_name) <= 0:
                raise ValueError(f"{cap_name} must be strictly positive")
        if self.object_trigger_interval < 2:
            raise ValueError("object_trigger_interval must be >= 2")
        if not self.termination_phrase.strip():
            raise ValueError("termination_phrase must be non-empty")

    def to_dict(self, include_mode: bool = True) -> dict[str, Any]:
        # The event log and snapshots omit `mode`: it is gateway wiring, and
        # a recorded session must replay to a byte-identical log.
        d: dict[str, Any] = {
            "target_language": self.target_language,
            "fallback_user_name": self.fallback_user_name,
            "personas": [p.to_dict() for p in self.personas],
            "assessor": self.assessor.to_dict(),
            "assessment_time_cap_s": self.assessment_time_cap_s,
            "assessment_turn_cap": self.assessment_turn_cap,
            "multiparty_time_cap_s": self.multiparty_time_cap_s,
            "object_trigger_interval": self.object_trigger_interval,
            "agent_run_cap": self.agent_run_cap,
            "user_starvation_limit": self.user_starvation_limit,
            "response_char_limit": self.response_char_limit,
            "realia_char_limit": self.realia_char_limit,
            "termination_phrase": self.termination_phrase,
            "mode": self.mode.value,
            "rng_seed": self.rng_seed,
            "scene": self.scene.to_dict() if self.scene else None,
            "retry_long_responses": self.retry_long_responses,
        }
        if not include_mode:
            del d["mode"]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SessionConfig":
        kwargs: dict[str, Any] = dict(d)
        if "personas" in kwargs and kwargs["personas"] is not None:
            kwargs["personas"] = tuple(AgentPersona.from_dict(p) for p in kwargs["personas"])
        if "assessor" in kwargs and kwargs["assessor"] is not None:
            kwargs["assessor"] = AgentPersona.from_dict(kwargs["assessor"])
        if "mode" in kwargs and kwargs["mode"] is not None:
            kwargs["mode"] = GatewayMode(kwargs["mode"])
        if kwargs.get("scene") is not None:
            kwargs["scene"] = SceneContext.from_dict(kwargs["scene"])
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return cls(**kwargs)

    def with_overrides(self, **kwargs: Any) -> "SessionConfig":
        return replace(self, **kwargs)


# Utterance annotations are plain strings; object references carry the noun.
ANNOTATION_FEEDBACK = "feedback_given"
ANNOTATION_REALIA = "realia_intro"


def annotation_object_ref(noun: str) -> str:
    return f"object_ref:{noun}"


@dataclass(frozen=True)
class Utterance:
    seq: int
    speaker: Speaker
    text: str
    phase: Phase
    ts_ms: int
    annotations: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("utterance text must be non-empty")

    def to_payload(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "speaker": self.speaker.encode(),
            "text": self.text,
            "phase": self.phase.value,
            "ts_ms": self.ts_ms,
            "annotations": sorted(self.annotations),
        }

    @classmethod
    def from_payload(cls, d: dict[str, Any]) -> "Utterance":
        return cls(
            seq=d["seq"],
            speaker=Speaker.decode(d["speaker"]),
            text=d["text"],
            phase=Phase(d["phase"]),
            ts_ms=d["ts_ms"],
            annotations=frozenset(d.get("annotations", ())),
        )


@dataclass(frozen=True)
class UserProfile:
    name: str
    hobby: str
    level: CefrLevel
    summary: str

    def to_dict(self) -> dict[str, str]:
        return {"name": self.name, "hobby": self.hobby, "level": self.level.value, "summary": self.summary}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UserProfile":
        return cls(name=d["name"], hobby=d["hobby"], level=CefrLevel(d["level"]), summary=d["summary"])


class ObjectStatus(str, Enum):
    PENDING = "pending"
    READY = "ready"
    FAILED = "failed"


@dataclass(frozen=True)
class GeneratedObject:
    noun: str
    status: ObjectStatus
    asset_ref: str
    requested_at_seq: int

    def __post_init__(self) -> None:
        if self.status is ObjectStatus.READY and not self.asset_ref:
            raise ValueError("ready object must carry an asset_ref")

    def to_dict(self) -> dict[str, Any]:
        return {
            "noun": self.noun,
            "status": self.status.value,
            "asset_ref": self.asset_ref,
            "requested_at_seq": self.requested_at_seq,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GeneratedObject":
        return cls(
            noun=d["noun"],
            status=ObjectStatus(d["status"]),
            asset_ref=d["asset_ref"],
            requested_at_seq=d["requested_at_seq"],
        )


def normalize_noun(noun: str) -> str:
    """Comparison key for dedupe: lowercase, trailing plural suffix stripped."""
    n = noun.strip().lower()
    if len(n) > 3 and n.endswith("es"):
        return n[:-2]
    if len(n) > 2 and n.endswith("s"):
        return n[:-1]
    return n


@dataclass
class ObjectRegistry:
    visible: tuple[str, ...] = ()
    used: list[str] = field(default_factory=list)
    last_suggested: str | None = None
    records: dict[str, GeneratedObject] = field(default_factory=dict)

    def visible_keys(self) -> set[str]:
        return {normalize_noun(n) for n in self.visible}

    def used_keys(self) -> set[str]:
        return {normalize_noun(n) for n in self.used}

    def register_suggested(self, noun: str, requested_at_seq: int) -> GeneratedObject:
        record = GeneratedObject(noun, ObjectStatus.PENDING, "", requested_at_seq)
        self.used.append(noun)
        self.last_suggested = noun
        self.records[noun] = record
        return record

    def check_invariant(self) -> None:
        overlap = self.used_keys() & self.visible_keys()
        if overlap:
            raise ValueError(f"used/visible overlap: {sorted(overlap)}")
        if self.used and self.last_suggested != self.used[-1]:
            raise ValueError("last_suggested must equal the tail of used")

    def to_dict(self) -> dict[str, Any]:
        return {
            "visible": list(self.visible),
            "used": list(self.used),
            "last_suggested": self.last_suggested,
            "records": {k: v.to_dict() for k, v in sorted(self.records.items())},
        }


@dataclass(frozen=True)
class Event:
    seq: int
    ts_ms: int
    type: str
    payload: dict[str, Any]

    def to_json_line(self) -> str:
        # Field order is part of the wire format; payload dicts are built in
        # deterministic construction order so lines are byte-reproducible.
        return json.dumps(
            {"seq": self.seq, "ts_ms": self.ts_ms, "type": self.type, "payload": self.payload},
            ensure_ascii=False,
            separators=(",", ":"),
        )

    @classmethod
    def from_json_line(cls, line: str) -> "Event":
        d = json.loads(line)
        return cls(seq=d["seq"], ts_ms=d["ts_ms"], type=d["type"], payload=d["payload"])


EVENT_TYPES = frozenset(
    {
        "session_created",
        "phase_changed",
        "user_utterance",
        "agent_utterance",
        "supervisor_decision",
        "prompt_rendered",
        "model_call",
        "object_suggested",
        "object_rejected",
        "object_generated",
        "profile_extracted",
        "validation_warning",
    }
)


@dataclass
class SessionState:
    session_id: str
    config: SessionConfig
    phase: Phase = Phase.INIT
    history: list[Utterance] = field(default_factory=list)
    profile: UserProfile | None = None
    scene: SceneContext | None = None
    registry: ObjectRegistry = field(default_factory=ObjectRegistry)
    events: list[Event] = field(default_factory=list)
    now_ms: int = 0
    phase_started_ms: int = 0
    awaiting_user: bool = False
    pending_realia: str | None = None
    strategy_draws: int = 0

    # -- event log -----------------------------------------------------

    def emit(self, type: str, payload: dict[str, Any]) -> Event:
        assert type in EVENT_TYPES, f"unknown event type {type!r}"
        event = Event(seq=len(self.events) + 1, ts_ms=self.now_ms, type=type, payload=payload)
        self.events.append(event)
        return event

    def warn(self, code: str, detail: str) -> Event:
        return self.emit("validation_warning", {"code": code, "detail": detail})

    # -- history helpers -----------------------------------------------

    @property
    def next_utterance_seq(self) -> int:
        return self.history[-1].seq + 1 if self.history else 1

    def phase_utterances(self, phase: Phase) -> list[Utterance]:
        return [u for u in self.history if u.phase is phase]

    def multiparty_utterances(self) -> list[Utterance]:
        return self.phase_utterances(Phase.MULTI_PARTY)

    def user_display_name(self) -> str:
        if self.profile and self.profile.name.strip():
            return self.profile.name
        return self.config.fallback_user_name

    def speaker_display_name(self, speaker: Speaker) -> str:
        if speaker.is_agent:
            return speaker.name or "Agent"
        if speaker.is_user:
            return self.user_display_name()
        return "System"

    def phase_elapsed_ms(self) -> int:
        return self.now_ms - self.phase_started_ms

    def snapshot(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "phase": self.phase.value,
            "config": self.config.to_dict(include_mode=False),
            "history": [u.to_payload() for u in self.history],
            "profile": self.profile.to_dict() if self.profile else None,
            "scene": self.scene.to_dict() if self.scene else None,
            "registry": self.registry.to_dict(),
            "awaiting_user": self.awaiting_user,
            "pending_realia": self.pending_realia,
            "now_ms": self.now_ms,
            "phase_started_ms": self.phase_started_ms,
            "event_count": len(self.events),
            "multiparty_turn_index": len(self.multiparty_utterances()),
        }


def new_session_state(session_id: str, config: SessionConfig) -> SessionState:
    state = SessionState(session_id=session_id, config=config)
    state.emit("session_created", {"session_id": session_id, "config": config.to_dict(include_mode=False)})
    return state


def legal_speakers(config: SessionConfig, phase: Phase) -> frozenset[Speaker]:
    """Who may utter in a given phase. System is allowed in any active phase."""
    if phase is Phase.GETTING_TO_KNOW_YOU:
        return frozenset({Speaker.user(), Speaker.agent(config.assessor.name), Speaker.system()})
    if phase is Phase.MULTI_PARTY:
        return frozenset(
            {Speaker.user(), Speaker.system()} | {Speaker.agent(p.name) for p in config.personas}
        )
    if phase is Phase.SCENE_CAPTURE:
        return frozenset({Speaker.system()})
    return frozenset()


def advance_phase(
    state: SessionState, trigger: PhaseTrigger, extra_payload: dict[str, Any] | None = None
) -> SessionState:
    """Move the session exactly one step along the phase chain."""
    if trigger not in LEGAL_TRIGGERS[state.phase]:
        raise IllegalTransition(f"trigger {trigger.value!r} is illegal in phase {state.phase.value!r}")
    old = state.phase
    new = PHASE_CHAIN[PHASE_CHAIN.index(old) + 1]
    state.phase = new
    state.phase_started_ms = state.now_ms
    payload: dict[str, Any] = {"from": old.value, "to": new.value, "trigger": trigger.value}
    if extra_payload:
        payload.update(extra_payload)
    state.emit("phase_changed", payload)
    return state


def append_utterance(state: SessionState, utterance: Utterance) -> SessionState:
    """Append one utterance, enforcing sequence and speaker legality."""
    expected = state.next_utterance_seq
    if utterance.seq != expected:
        raise SequenceGap(f"expected seq {expected}, got {utterance.seq}")
    if utterance.phase is not state.phase:
        raise SpeakerNotInPhase(
            f"utterance phase {utterance.phase.value!r} does not match session phase {state.phase.value!r}"
        )
    if utterance.speaker not in legal_speakers(state.config, state.phase):
        raise SpeakerNotInPhase(
            f"{utterance.speaker.encode()} may not speak in phase {state.phase.value!r}"
        )
    state.history.append(utterance)
    event_type = "user_utterance" if utterance.speaker.is_user else "agent_utterance"
    state.emit(event_type, utterance.to_payload())
    return state


# -- crash recovery ------------------------------------------------------


def restore_from_events(events: Iterable[Event]) -> SessionState:
    """Rebuild a SessionState by replaying a persisted event log."""
    state: SessionState | None = None
    for ev in events:
        if ev.type == "session_created":
            config = SessionConfig.from_dict(ev.payload["config"])
            state = SessionState(session_id=ev.payload["session_id"], config=config)
        if state is None:
            raise ValueError("event log does not start with session_created")
        state.now_ms = ev.ts_ms
        if ev.type == "phase_changed":
            state.phase = Phase(ev.payload["to"])
            state.phase_started_ms = ev.ts_ms
            state.awaiting_user = False
            if "scene" in ev.payload and ev.payload["scene"] is not None:
                state.scene = SceneContext.from_dict(ev.payload["scene"])
                state.registry.visible = state.scene.objects
        elif ev.type in ("user_utterance", "agent_utterance"):
            utt = Utterance.from_payload(ev.payload)
            state.history.append(utt)
            if utt.speaker.is_user:
                state.awaiting_user = False
            elif utt.phase is Phase.GETTING_TO_KNOW_YOU and utt.speaker.is_agent:
                state.awaiting_user = True
            if ANNOTATION_REALIA in utt.annotations:
                state.pending_realia = None
                state.strategy_draws += 1
        elif ev.type == "supervisor_decision":
            state.awaiting_user = ev.payload["next_speaker"] == "user"
        elif ev.type == "object_suggested":
            state.registry.register_suggested(ev.payload["noun"], ev.payload["requested_at_seq"])
        elif ev.type == "object_generated":
            noun = ev.payload["noun"]
            record = state.registry.records.get(noun)
            requested_at = record.requested_at_seq if record else 0
            state.registry.records[noun] = GeneratedObject(
                noun=noun,
                status=ObjectStatus(ev.payload["status"]),
                asset_ref=ev.payload["asset_ref"],
                requested_at_seq=requested_at,
            )
            state.pending_realia = noun
        elif ev.type == "profile_extracted":
            state.profile = UserProfile.from_dict(ev.payload["profile"])
        state.events.append(ev)
    if state is None:
        raise ValueError("empty event log")
    # A terminal assessment utterance is followed by phase_changed, which
    # clears awaiting_user; mid-assessment logs leave it set correctly.
    if state.phase is Phase.ENDED:
        state.awaiting_user = False
    return state
