"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field

from ..core import AgentPersona, GatewayMode, SceneContext, SessionConfig


class PersonaModel(BaseModel):
    name: str
    personality: str = ""
    voice_id: str = ""

    def to_core(self) -> AgentPersona:
        return AgentPersona(name=self.name, personality=self.personality, voice_id=self.voice_id)


class SceneModel(BaseModel):
    objects: list[str] = Field(default_factory=list)
    description: str

    def to_core(self) -> SceneContext:
        from ..scene import ingest_scene_text

        return ingest_scene_text(self.objects, self.description)


class SessionConfigModel(BaseModel):
    target_language: str | None = None
    fallback_user_name: str | None = None
    personas: list[PersonaModel] | None = None
    assessor: PersonaModel | None = None
    assessment_time_cap_s: int | None = None
    assessment_turn_cap: int | None = None
    multiparty_time_cap_s: int | None = None
    object_trigger_interval: int | None = None
    agent_run_cap: int | None = None
    user_starvation_limit: int | None = None
    response_char_limit: int | None = None
    realia_char_limit: int | None = None
    termination_phrase: str | None = None
    mode: str | None = None
    rng_seed: int | None = None
    scene: SceneModel | None = None
    retry_long_responses: bool | None = None

    def to_core(self) -> SessionConfig:
        overrides: dict[str, Any] = {}
        plain = (
            "target_language",
            "fallback_user_name",
            "assessment_time_cap_s",
            "assessment_turn_cap",
            "multiparty_time_cap_s",
            "object_trigger_interval",
            "agent_run_cap",
            "user_starvation_limit",
            "response_char_limit",
            "realia_char_limit",
            "termination_phrase",
            "rng_seed",
            "retry_long_responses",
        )
        for name in plain:
            value = getattr(self, name)
            if value is not None:
                overrides[name] = value
        if self.personas is not None:
            overrides["personas"] = tuple(p.to_core() for p in self.personas)
        if self.assessor is not None:
            overrides["assessor"] = self.assessor.to_core()
        if self.mode is not None:
            overrides["mode"] = GatewayMode(self.mode)
        if self.scene is not None:
            overrides["scene"] = self.scene.to_core()
        return SessionConfig().with_overrides(**overrides)


class CreateSessionRequest(BaseModel):
    config: SessionConfigModel | None = None


class CreateSessionResponse(BaseModel):
    session_id: str
    snapshot: dict[str, Any]


class UtteranceRequest(BaseModel):
    text: str


class UtteranceAck(BaseModel):
    seq: int
    ts_ms: int


class AdvanceResponse(BaseModel):
    events: list[dict[str, Any]]
    awaiting_user: bool
    phase: str


class StateResponse(BaseModel):
    snapshot: dict[str, Any]


class SceneIngestResponse(BaseModel):
    events: list[dict[str, Any]]
    phase: str


class ErrorBody(BaseModel):
    error: str
    detail: str
