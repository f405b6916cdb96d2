"""Session driver: pulls one turn at a time through the phase machine.

The engine is pull-driven: `advance()` performs exactly one assessor turn,
or one supervisor decision plus (if an agent was chosen) one agent turn,
including any due object trigger. Timestamps come from an injected clock so
record/replay sessions are byte-reproducible while live sessions track wall
time.
"""

from __future__ import annotations

import random
import time
import uuid
from typing import Protocol

from . import assessment, objects, prompts, scene, supervisor
from .core import (
    ANNOTATION_FEEDBACK,
    ANNOTATION_REALIA,
    TICK_MS,
    Event,
    GatewayMode,
    NotUsersTurn,
    ObjectStatus,
    Phase,
    PhaseTrigger,
    SceneContext,
    SessionConfig,
    SessionEnded,
    SessionState,
    Speaker,
    Utterance,
    advance_phase,
    annotation_object_ref,
    append_utterance,
    new_session_state,
    restore_from_events,
)
from .gateway import CassetteMiss, GatewayError, Message, ModelGateway, ModelRequest

CONVERSATION_TEMPERATURE = 0.7
CONVERSATION_MAX_TOKENS = 120


class Clock(Protocol):
    def now_ms(self) -> int: ...
    def tick(self) -> int: ...


class LogicalClock:
    """Deterministic clock: advances a fixed amount per utterance."""

    def __init__(self, start_ms: int = 0, tick_ms: int = TICK_MS):
        self._now = start_ms
        self._tick = tick_ms

    def now_ms(self) -> int:
        return self._now

    def tick(self) -> int:
        self._now += self._tick
        return self._now


class WallClock:
    def __init__(self, already_elapsed_ms: int = 0):
        self._origin = time.monotonic() - already_elapsed_ms / 1000.0

    def now_ms(self) -> int:
        return int((time.monotonic() - self._origin) * 1000)

    def tick(self) -> int:
        return self.now_ms()


def clock_for(config: SessionConfig, start_ms: int = 0) -> Clock:
    if config.mode is GatewayMode.LIVE:
        return WallClock(already_elapsed_ms=start_ms)
    return LogicalClock(start_ms=start_ms)


class SessionEngine:
    """Single-session orchestrator; callers serialize access per session."""

    def __init__(
        self,
        state: SessionState,
        gateway: ModelGateway,
        asset_backend: objects.AssetBackend,
        model_id: str = "",
        clock: Clock | None = None,
    ):
        self.state = state
        self.gateway = gateway
        self.assets = asset_backend
        self.model_id = model_id
        self.clock = clock or clock_for(state.config, start_ms=state.now_ms)
        self.rng = random.Random(state.config.rng_seed)
        for _ in range(state.strategy_draws):  # restore RNG position after recovery
            prompts.select_realia_strategy(self.rng)

    # -- construction ----------------------------------------------------

    @classmethod
    def create(
        cls,
        config: SessionConfig,
        gateway: ModelGateway,
        asset_backend: objects.AssetBackend,
        session_id: str | None = None,
        model_id: str = "",
    ) -> "SessionEngine":
        state = new_session_state(session_id or uuid.uuid4().hex, config)
        advance_phase(state, PhaseTrigger.SESSION_STARTED)
        return cls(state, gateway, asset_backend, model_id=model_id)

    @classmethod
    def restore(
        cls,
        events: list[Event],
        gateway: ModelGateway,
        asset_backend: objects.AssetBackend,
        model_id: str = "",
    ) -> "SessionEngine":
        state = restore_from_events(events)
        return cls(state, gateway, asset_backend, model_id=model_id)

    # -- public API --------------------------------------------------------

    def post_user_utterance(self, text: str) -> Utterance:
        s = self.state
        if s.phase is Phase.ENDED:
            raise SessionEnded("session has ended")
        if s.phase not in (Phase.GETTING_TO_KNOW_YOU, Phase.MULTI_PARTY) or not s.awaiting_user:
            raise NotUsersTurn(f"it is not the user's turn (phase {s.phase.value})")
        text = text.strip()
        if not text:
            raise ValueError("user utterance must be non-empty")
        s.now_ms = self.clock.tick()
        utterance = Utterance(
            seq=s.next_utterance_seq,
            speaker=Speaker.user(),
            text=text,
            phase=s.phase,
            ts_ms=s.now_ms,
        )
        append_utterance(s, utterance)
        s.awaiting_user = False
        if s.phase is Phase.MULTI_PARTY:
            self._after_multiparty_utterance()
        return utterance

    def advance(self) -> list[Event]:
        """Drive one engine step; returns the events it produced."""
        s = self.state
        mark = len(s.events)
        s.now_ms = max(s.now_ms, self.clock.now_ms())
        if s.phase is Phase.ENDED:
            raise SessionEnded("session has ended")
        if s.phase is Phase.GETTING_TO_KNOW_YOU:
            self._assessment_step()
        elif s.phase is Phase.SCENE_CAPTURE:
            pass  # waiting for a scene; ingest_scene() drives this phase
        elif s.phase is Phase.MULTI_PARTY:
            self._multiparty_step()
        return s.events[mark:]

    def ingest_scene(self, scene_ctx: SceneContext) -> list[Event]:
        s = self.state
        mark = len(s.events)
        if s.phase is not Phase.SCENE_CAPTURE:
            raise NotUsersTurn(f"scene can only be ingested during SceneCapture (phase {s.phase.value})")
        s.scene = scene_ctx
        s.registry.visible = scene_ctx.objects
        advance_phase(s, PhaseTrigger.SCENE_INGESTED, {"scene": scene_ctx.to_dict()})
        return s.events[mark:]

    def ingest_scene_image(self, image_bytes: bytes) -> list[Event]:
        ctx = scene.ingest_scene_image(
            image_bytes, self.gateway, model_id=self.model_id, emit=self.state.emit
        )
        return self.ingest_scene(ctx)

    # -- assessment phase --------------------------------------------------

    def _assessment_step(self) -> None:
        s = self.state
        if s.awaiting_user:
            return
        gtk_count = len(s.phase_utterances(Phase.GETTING_TO_KNOW_YOU))
        if gtk_count >= s.config.assessment_turn_cap:
            self._finish_assessment(PhaseTrigger.ASSESSMENT_TURN_CAP)
            return
        if s.phase_elapsed_ms() >= s.config.assessment_time_cap_s * 1000:
            self._finish_assessment(PhaseTrigger.ASSESSMENT_TIME_CAP)
            return
        utterance, terminated = assessment.run_assessment_turn(
            s, self.gateway, model_id=self.model_id, tick=self.clock.tick
        )
        if terminated:
            if s.config.termination_phrase.casefold() in utterance.text.casefold():
                trigger = PhaseTrigger.TERMINATION_PHRASE
            elif len(s.phase_utterances(Phase.GETTING_TO_KNOW_YOU)) >= s.config.assessment_turn_cap:
                trigger = PhaseTrigger.ASSESSMENT_TURN_CAP
            else:
                trigger = PhaseTrigger.ASSESSMENT_TIME_CAP
            self._finish_assessment(trigger)
        else:
            s.awaiting_user = True

    def _finish_assessment(self, trigger: PhaseTrigger) -> None:
        s = self.state
        transcript = s.phase_utterances(Phase.GETTING_TO_KNOW_YOU)
        if transcript:
            extraction = assessment.extract_profile(
                transcript, self.gateway, s.config, model_id=self.model_id, emit=s.emit
            )
            s.profile = extraction.profile
            s.emit(
                "profile_extracted",
                {"profile": extraction.profile.to_dict(), "degraded": extraction.degraded},
            )
        s.awaiting_user = False
        advance_phase(s, trigger)
        if s.config.scene is not None:
            self.ingest_scene(s.config.scene)

    # -- multi-party phase ---------------------------------------------------

    def _participants(self) -> supervisor.Participants:
        return supervisor.Participants.from_config(self.state.config, self.state.user_display_name())

    def _multiparty_step(self) -> None:
        s = self.state
        if s.phase_elapsed_ms() >= s.config.multiparty_time_cap_s * 1000:
            advance_phase(s, PhaseTrigger.MULTIPARTY_TIME_CAP)
            return
        self._heal_dangling_generation()
        if s.awaiting_user:
            return
        directive = self._decide()
        s.emit(
            "supervisor_decision",
            {
                "next_speaker": directive.next_speaker.encode(),
                "source": directive.source.value,
                "raw_model_text": directive.raw_model_text,
            },
        )
        if directive.next_speaker.is_user:
            s.awaiting_user = True
            return
        self._agent_turn(directive.next_speaker)

    def _heal_dangling_generation(self) -> None:
        # After a crash between object_suggested and object_generated the
        # registry holds a pending record with no completion; re-dispatch.
        s = self.state
        for noun, record in list(s.registry.records.items()):
            if record.status is ObjectStatus.PENDING:
                objects.complete_generation(s, self.assets, noun)

    def _decide(self) -> supervisor.TurnDirective:
        s = self.state
        participants = self._participants()
        history = s.multiparty_utterances()
        if not history:
            return supervisor.TurnDirective(
                Speaker.agent(participants.agent_names[0]), supervisor.DirectiveSource.FALLBACK
            )
        try:
            return supervisor.decide_next_speaker(
                history, participants, self.gateway, s.config, model_id=self.model_id, emit=s.emit
            )
        except CassetteMiss:
            raise
        except GatewayError as exc:
            s.warn("supervisor_gateway_failure", str(exc))
            return supervisor.TurnDirective(
                supervisor.fallback_policy(history, participants, s.config),
                supervisor.DirectiveSource.FALLBACK,
            )

    def _agent_persona(self, speaker: Speaker):
        for persona in self.state.config.personas:
            if persona.name == speaker.name:
                return persona
        raise ValueError(f"unknown persona {speaker.name!r}")

    def _agent_turn(self, speaker: Speaker) -> None:
        s = self.state
        persona = self._agent_persona(speaker)
        other = next(p for p in s.config.personas if p.name != persona.name)
        realia_noun = s.pending_realia
        annotations: set[str] = set()
        if realia_noun is not None:
            rendered = self._render_realia(persona.name, other.name, realia_noun)
            char_limit = s.config.realia_char_limit
            annotations.update({ANNOTATION_REALIA, annotation_object_ref(realia_noun)})
        else:
            rendered = self._render_base(persona)
            char_limit = s.config.response_char_limit
            annotations.add(ANNOTATION_FEEDBACK)
        s.emit(
            "prompt_rendered", {"template_id": rendered.template_id.value, "content_hash": rendered.content_hash}
        )
        for warning in rendered.warnings:
            s.warn("prompt_default", warning)
        text = self._chat_completion(rendered.text, speaker)
        text, had_prefix = assessment.strip_speaker_prefix(text, persona.name)
        if not had_prefix:
            s.warn("reply_format", f"{persona.name} reply missing 'Name:' prefix")
        if not text:
            s.warn("empty_completion", f"{persona.name} returned empty text")
            text = "..."
        if len(text) > char_limit:
            s.warn("reply_too_long", f"{persona.name} reply is {len(text)} chars (limit {char_limit})")
            if s.config.retry_long_responses:
                text = self._retry_long_reply(rendered.text, speaker, persona.name, char_limit, text)
        s.now_ms = self.clock.tick()
        utterance = Utterance(
            seq=s.next_utterance_seq,
            speaker=speaker,
            text=text,
            phase=Phase.MULTI_PARTY,
            ts_ms=s.now_ms,
            annotations=frozenset(annotations),
        )
        append_utterance(s, utterance)
        if realia_noun is not None:
            s.pending_realia = None
        self._after_multiparty_utterance()

    def _render_base(self, persona) -> prompts.RenderedPrompt:
        s = self.state
        other = next(p for p in s.config.personas if p.name != persona.name)
        profile = s.profile
        ctx = prompts.PromptContext(
            cur_agent_name=persona.name,
            oth_agent_name=other.name,
            user_name=s.user_display_name(),
            language_setting=s.config.target_language,
            level=(profile.level.value if profile else assessment.DEGRADED_LEVEL.value),
            cur_personality=persona.personality,
            hobbies=(profile.hobby,) if profile else (),
            discussion_question=(s.scene.description if s.scene else "(no scene description available)"),
        )
        return prompts.render_base(ctx, include_feedback=True)

    def _render_realia(self, cur_name: str, oth_name: str, noun: str) -> prompts.RenderedPrompt:
        s = self.state
        strategy = prompts.select_realia_strategy(self.rng)
        s.strategy_draws += 1
        last = s.multiparty_utterances()[-1] if s.multiparty_utterances() else None
        last_line = (
            prompts.utterance_line(s.speaker_display_name(last.speaker), last.text) if last else "(start)"
        )
        ctx = prompts.PromptContext(
            cur_agent_name=cur_name,
            oth_agent_name=oth_name,
            user_name=s.user_display_name(),
            last_suggested_object=noun,
            last_turn=last_line,
        )
        return prompts.render_realia(ctx, strategy)

    def _chat_completion(self, system_prompt: str, speaker: Speaker) -> str:
        s = self.state
        messages: list[Message] = []
        for utt in s.multiparty_utterances():
            role = "assistant" if utt.speaker == speaker else "user"
            name = s.speaker_display_name(utt.speaker)
            messages.append(Message(role, prompts.utterance_line(name, utt.text)))
        if not messages:
            messages.append(Message("user", "(the group conversation begins; open it warmly)"))
        request = ModelRequest(
            kind="chat",
            system_prompt=system_prompt,
            messages=tuple(messages),
            model_id=self.model_id,
            temperature=CONVERSATION_TEMPERATURE,
            max_tokens=CONVERSATION_MAX_TOKENS,
        )
        raw = self.gateway.call(request)
        s.emit("model_call", {"kind": "chat", "request_key": request.key(), "template_id": None})
        return raw

    def _retry_long_reply(
        self, system_prompt: str, speaker: Speaker, name: str, char_limit: int, previous: str
    ) -> str:
        s = self.state
        request = ModelRequest(
            kind="chat",
            system_prompt=system_prompt,
            messages=(
                Message("assistant", previous),
                Message("user", f"That reply was too long. Repeat it in at most {char_limit} characters."),
            ),
            model_id=self.model_id,
            temperature=CONVERSATION_TEMPERATURE,
            max_tokens=CONVERSATION_MAX_TOKENS,
        )
        try:
            raw = self.gateway.call(request)
        except CassetteMiss:
            raise
        except GatewayError:
            return previous
        s.emit("model_call", {"kind": "chat", "request_key": request.key(), "template_id": None})
        retried, _ = assessment.strip_speaker_prefix(raw, name)
        return retried if retried and len(retried) <= char_limit else previous

    def _after_multiparty_utterance(self) -> None:
        s = self.state
        turn_index = len(s.multiparty_utterances())
        if not objects.should_trigger(turn_index, s.config.object_trigger_interval):
            return
        if s.pending_realia is not None:
            s.warn("trigger_skipped", "previous realia introduction still pending")
            return
        objects.suggest_and_generate(s, self.gateway, self.assets, model_id=self.model_id)
