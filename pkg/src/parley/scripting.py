"""Scripted-learner driver for simulations and deterministic replays.

A learner script is a JSON list of steps {"await": <condition>, "reply":
<text>}. Conditions:

  "agent:<Name>"     an utterance by that agent since the previous reply
  "user_turn"        simply the next time it is the user's turn
  "phase:<Phase>"    the session has reached that phase
  "<event_type>"     any event of that type since the previous reply

The runner advances the engine until the condition holds and the engine is
waiting on the user, then posts the reply. Waiting on object_generated
before replying mirrors a learner reacting to a prop appearing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .core import Event, Phase
from .engine import SessionEngine

MAX_ADVANCES = 10_000


class ScriptError(Exception):
    pass


class ScriptDrift(ScriptError):
    """The session stopped matching the script (or cassette)."""


@dataclass(frozen=True)
class ScriptStep:
    await_condition: str
    reply: str


def load_script(path: str | Path) -> list[ScriptStep]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScriptError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise ScriptError(f"{path}: script must be a JSON list of steps")
    steps = []
    for idx, raw in enumerate(doc):
        if not isinstance(raw, dict) or "reply" not in raw:
            raise ScriptError(f"{path}: step {idx}: each step needs \"await\" and \"reply\"")
        steps.append(ScriptStep(await_condition=raw.get("await", "user_turn"), reply=raw["reply"]))
    return steps


def _condition_met(condition: str, window: list[Event], engine: SessionEngine) -> bool:
    if condition == "user_turn":
        return True
    if condition.startswith("phase:"):
        return engine.state.phase.value == condition.split(":", 1)[1]
    if condition.startswith("agent:"):
        name = condition.split(":", 1)[1]
        return any(
            ev.type == "agent_utterance" and ev.payload.get("speaker") == f"agent:{name}" for ev in window
        )
    return any(ev.type == condition for ev in window)


def run_script(engine: SessionEngine, steps: list[ScriptStep]) -> list[Event]:
    """Drive a full session from a learner script; returns all events."""
    baseline = 0
    advances = 0
    for idx, step in enumerate(steps):
        while True:
            window = engine.state.events[baseline:]
            if engine.state.awaiting_user and _condition_met(step.await_condition, window, engine):
                engine.post_user_utterance(step.reply)
                baseline = len(engine.state.events)
                break
            if engine.state.phase is Phase.ENDED:
                return engine.state.events  # session ended under the script
            produced = engine.advance()
            advances += 1
            if advances > MAX_ADVANCES:
                raise ScriptDrift(f"step {idx}: advance budget exceeded awaiting {step.await_condition!r}")
            if not produced:
                if engine.state.awaiting_user and not _condition_met(step.await_condition, window, engine):
                    raise ScriptDrift(
                        f"step {idx}: session awaits the user but {step.await_condition!r} never happened"
                    )
                if engine.state.phase is Phase.SCENE_CAPTURE:
                    raise ScriptDrift(
                        f"step {idx}: session is stuck in SceneCapture; provide config.scene or ingest one"
                    )
    # Let the agents respond to the final reply, then stop at the next user turn.
    while engine.state.phase is not Phase.ENDED and not engine.state.awaiting_user:
        if not engine.advance():
            break
        advances += 1
        if advances > MAX_ADVANCES:
            break
    return engine.state.events
