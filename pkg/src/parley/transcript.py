"""Event-log invariants: the checks behind `parley validate`.

A transcript is the persisted JSONL event log. Checks cover the phase
chain, sequence integrity, and the multi-party balance rules (adjacent
repeats, agent-run cap, starvation windows).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .core import Event, Phase, SessionConfig, Utterance

PHASE_ORDER = ("GettingToKnowYou", "SceneCapture", "MultiParty", "Ended")


@dataclass(frozen=True)
class TranscriptViolation:
    kind: str
    seq: int  # event seq the violation anchors to (0 = log-level)
    detail: str

    def __str__(self) -> str:
        return f"{self.kind} at seq {self.seq}: {self.detail}"


class TranscriptParseError(Exception):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def load_events(path: str | Path) -> list[Event]:
    events: list[Event] = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            events.append(Event.from_json_line(line))
        except (json.JSONDecodeError, KeyError) as exc:
            raise TranscriptParseError(line_no, f"bad event record: {exc}") from exc
    return events


def _mentions(text: str, name: str) -> bool:
    return re.search(rf"(?<![A-Za-z0-9]){re.escape(name)}(?![A-Za-z0-9])", text, re.IGNORECASE) is not None


def validate_events(events: list[Event]) -> list[TranscriptViolation]:
    violations: list[TranscriptViolation] = []
    if not events:
        return [TranscriptViolation("EmptyLog", 0, "no events")]

    # Event seq integrity: exactly 1..M.
    for idx, ev in enumerate(events, start=1):
        if ev.seq != idx:
            violations.append(
                TranscriptViolation("EventSequenceGap", ev.seq, f"expected event seq {idx}, got {ev.seq}")
            )
            break

    if events[0].type != "session_created":
        violations.append(TranscriptViolation("MissingSessionCreated", events[0].seq, "log must open with session_created"))
        return violations
    config = SessionConfig.from_dict(events[0].payload["config"])

    # Phase chain must be a prefix of the legal chain.
    phase_targets = [ev.payload["to"] for ev in events if ev.type == "phase_changed"]
    if tuple(phase_targets) != PHASE_ORDER[: len(phase_targets)]:
        violations.append(
            TranscriptViolation("PhaseChain", 0, f"phase_changed sequence {phase_targets} is not a prefix of {list(PHASE_ORDER)}")
        )

    # Utterance seq integrity: exactly 1..N.
    utterance_events = [ev for ev in events if ev.type in ("user_utterance", "agent_utterance")]
    for idx, ev in enumerate(utterance_events, start=1):
        if ev.payload["seq"] != idx:
            violations.append(
                TranscriptViolation("UtteranceSequenceGap", ev.seq, f"expected utterance seq {idx}, got {ev.payload['seq']}")
            )
            break

    profile_name = config.fallback_user_name
    for ev in events:
        if ev.type == "profile_extracted":
            profile_name = ev.payload["profile"].get("name") or profile_name
            break

    mp = [
        (ev.seq, Utterance.from_payload(ev.payload))
        for ev in utterance_events
        if ev.payload["phase"] == Phase.MULTI_PARTY.value
    ]
    violations.extend(_validate_multiparty(mp, config, profile_name, events))
    return violations


def _speaker_label(utt: Utterance, user_name: str) -> str:
    return user_name if utt.speaker.is_user else (utt.speaker.name or "system")


def _validate_multiparty(
    mp: list[tuple[int, Utterance]],
    config: SessionConfig,
    user_name: str,
    events: list[Event],
) -> list[TranscriptViolation]:
    violations: list[TranscriptViolation] = []
    limit = config.user_starvation_limit

    run = 0
    for idx, (seq, utt) in enumerate(mp):
        if idx > 0 and mp[idx - 1][1].speaker == utt.speaker:
            violations.append(
                TranscriptViolation("ConsecutiveSpeaker", seq, f"{_speaker_label(utt, user_name)} spoke twice in a row")
            )
        if utt.speaker.is_agent:
            run += 1
            if run > config.agent_run_cap:
                violations.append(
                    TranscriptViolation("AgentRunCapExceeded", seq, f"agent run of length {run} exceeds {config.agent_run_cap}")
                )
        else:
            run = 0
        if idx >= limit and not utt.speaker.is_user:
            window = [u for _, u in mp[idx - limit : idx]]
            spoke = any(u.speaker.is_user for u in window)
            addressed = any(not u.speaker.is_user and _mentions(u.text, user_name) for u in window)
            if not spoke and not addressed:
                violations.append(
                    TranscriptViolation("UserStarvation", seq, f"user neither spoke nor was addressed in the previous {limit} turns")
                )

    # Long user-silence gaps must contain a forced_user directive.
    user_positions = [idx for idx, (_, u) in enumerate(mp) if u.speaker.is_user]
    forced_seqs = [
        ev.seq for ev in events if ev.type == "supervisor_decision" and ev.payload.get("source") == "forced_user"
    ]
    for first, second in zip(user_positions, user_positions[1:]):
        if second - first - 1 > limit:
            gap_lo, gap_hi = mp[first][0], mp[second][0]
            if not any(gap_lo < fs < gap_hi for fs in forced_seqs):
                violations.append(
                    TranscriptViolation(
                        "MissingForcedUser",
                        gap_hi,
                        f"{second - first - 1} agent turns between user utterances without a forced_user directive",
                    )
                )
    return violations


def events_to_transcript_lines(events: list[Event]) -> list[str]:
    """Human-readable "Name: text" lines, one per utterance."""
    config: SessionConfig | None = None
    user_name = "Learner"
    lines = []
    for ev in events:
        if ev.type == "session_created":
            config = SessionConfig.from_dict(ev.payload["config"])
            user_name = config.fallback_user_name
        elif ev.type == "profile_extracted":
            user_name = ev.payload["profile"].get("name") or user_name
        elif ev.type in ("user_utterance", "agent_utterance"):
            utt = Utterance.from_payload(ev.payload)
            name = user_name if utt.speaker.is_user else (utt.speaker.name or "System")
            lines.append(f"{name}: {utt.text}")
    return lines
