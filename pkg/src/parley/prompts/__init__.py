"""Deterministic prompt composition from external template resources.

Templates live as UTF-8 text files next to this module, with a manifest
naming the placeholders each one requires. Rendering is a pure function of
(template, context, strategy): the same inputs always produce the same text
and content hash, which is what the golden-file tests pin down.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources


class PromptError(Exception):
    pass


class MissingPlaceholder(PromptError):
    def __init__(self, name: str):
        super().__init__(f"missing placeholder value: {name}")
        self.name = name


class DistinctPersona(PromptError):
    def __init__(self, name: str):
        super().__init__(f"current and other persona must differ, both are {name!r}")
        self.name = name


class TemplateId(str, Enum):
    BASE = "Base"
    BASE_WITH_REALIA = "BaseWithRealia"
    OBJECT_SUGGESTION = "ObjectSuggestion"
    ASSESSMENT = "Assessment"
    PROFILE_SUMMARIZER = "ProfileSummarizer"
    SUPERVISOR = "Supervisor"


class StrategyCategory(str, Enum):
    OBSERVATION_NOTICING = "ObservationNoticing"
    PRIOR_KNOWLEDGE = "PriorKnowledge"
    FUNCTION_CONCEPT = "FunctionConcept"
    DEEPER_THINKING = "DeeperThinking"
    CREATIVE_APPLIED_USE = "CreativeAppliedUse"
    PERSONAL_EMOTIONAL = "PersonalEmotional"


@dataclass(frozen=True)
class RealiaStrategy:
    category: StrategyCategory
    heading: str
    question_templates: tuple[str, str, str]

    def render_block(self) -> str:
        """The full category block injected as {chosenStrategy}."""
        return self.heading + "\n" + "\n".join(f"- {q}" for q in self.question_templates)


@dataclass(frozen=True)
class RenderedPrompt:
    template_id: TemplateId
    text: str
    content_hash: str
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class PromptContext:
    """One field per appendix placeholder; see the template manifest."""

    cur_agent_name: str | None = None
    oth_agent_name: str | None = None
    user_name: str | None = None
    language_setting: str | None = None
    level: str | None = None
    cur_personality: str | None = None
    hobbies: tuple[str, ...] = ()
    discussion_question: str | None = None
    last_suggested_object: str | None = None
    last_turn: str | None = None
    chosen_strategy: str | None = None
    used_csv: str | None = None
    visible_csv: str | None = None
    latest_message: str | None = None
    conversation_slice: str | None = None
    fallback_user_name: str | None = None
    gtk_history: str | None = None


# Placeholder symbol -> PromptContext attribute. Audited for completeness
# against the manifest by the test suite.
SYMBOL_TO_FIELD = {
    "curAgentName": "cur_agent_name",
    "othAgentName": "oth_agent_name",
    "userName": "user_name",
    "languageSetting": "language_setting",
    "level": "level",
    "curPersonality": "cur_personality",
    "hobbies": "hobbies",
    "discussionQuestion": "discussion_question",
    "lastSuggestedObject": "last_suggested_object",
    "lastTurn": "last_turn",
    "chosenStrategy": "chosen_strategy",
    "usedCsv": "used_csv",
    "visibleCsv": "visible_csv",
    "latestMessage": "latest_message",
    "conversationSlice": "conversation_slice",
    "fallbackUserName": "fallback_user_name",
    "Getting_to_Know_You_Convo_History": "gtk_history",
}

# Symbols where an empty string is a legal value (empty CSV, empty slice).
EMPTY_OK = {"usedCsv", "visibleCsv", "conversationSlice"}

HOBBIES_DEFAULT = "(unspecified)"

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _read_resource(name: str) -> str:
    return resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8")


def load_template(filename: str) -> str:
    return _read_resource(filename).rstrip("\n")


def load_manifest() -> dict[str, dict]:
    return json.loads(_read_resource("manifest.json"))


def load_strategies() -> tuple[RealiaStrategy, ...]:
    raw = json.loads(_read_resource("strategies.json"))
    strategies = []
    for category in StrategyCategory:
        entry = raw[category.value]
        questions = tuple(entry["questions"])
        if len(questions) != 3:
            raise PromptError(f"strategy {category.value} must have exactly 3 question templates")
        strategies.append(RealiaStrategy(category, entry["heading"], questions))
    return tuple(strategies)


STRATEGIES: tuple[RealiaStrategy, ...] = load_strategies()
_STRATEGY_BY_CATEGORY = {s.category: s for s in STRATEGIES}


def strategy_for(category: StrategyCategory) -> RealiaStrategy:
    return _STRATEGY_BY_CATEGORY[category]


def select_realia_strategy(rng: random.Random) -> RealiaStrategy:
    """Uniform draw over the six categories."""
    return STRATEGIES[rng.randrange(len(STRATEGIES))]


def _context_value(ctx: PromptContext, symbol: str, warnings: list[str]) -> str:
    if symbol == "hobbies":
        if not ctx.hobbies:
            warnings.append("hobbies missing; substituted default")
            return HOBBIES_DEFAULT
        return ", ".join(ctx.hobbies)
    value = getattr(ctx, SYMBOL_TO_FIELD[symbol])
    if value is None:
        raise MissingPlaceholder(symbol)
    if value == "" and symbol not in EMPTY_OK:
        raise MissingPlaceholder(symbol)
    return value


def _fill(template_id: TemplateId, text: str, ctx: PromptContext, warnings: list[str]) -> RenderedPrompt:
    def substitute(match: re.Match[str]) -> str:
        symbol = match.group(1)
        if symbol not in SYMBOL_TO_FIELD:
            raise MissingPlaceholder(symbol)
        return _context_value(ctx, symbol, warnings)

    # A single pass resolves every template placeholder (unknown symbols
    # raise); braces inside substituted user text stay literal.
    rendered = _PLACEHOLDER_RE.sub(substitute, text)
    digest = hashlib.sha256(rendered.encode("utf-8")).hexdigest()
    return RenderedPrompt(template_id, rendered, digest, tuple(warnings))


def render_base(ctx: PromptContext, include_feedback: bool = True) -> RenderedPrompt:
    if ctx.cur_agent_name is not None and ctx.cur_agent_name == ctx.oth_agent_name:
        raise DistinctPersona(ctx.cur_agent_name)
    text = load_template("base.txt")
    if include_feedback:
        text = text + "\n\n" + load_template("feedback.txt")
    return _fill(TemplateId.BASE, text, ctx, [])


def render_realia(ctx: PromptContext, strategy: RealiaStrategy) -> RenderedPrompt:
    if ctx.cur_agent_name is not None and ctx.cur_agent_name == ctx.oth_agent_name:
        raise DistinctPersona(ctx.cur_agent_name)
    text = load_template("realia.txt")
    # Inject the strategy block first; its own {lastSuggestedObject}
    # placeholders are resolved by the ordinary fill pass below.
    text = text.replace("{chosenStrategy}", strategy.render_block())
    return _fill(TemplateId.BASE_WITH_REALIA, text, ctx, [])


def render_object_suggestion(ctx: PromptContext) -> RenderedPrompt:
    return _fill(TemplateId.OBJECT_SUGGESTION, load_template("object_suggestion.txt"), ctx, [])


def render_assessment() -> RenderedPrompt:
    return _fill(TemplateId.ASSESSMENT, load_template("assessment.txt"), PromptContext(), [])


def render_profile_summarizer(ctx: PromptContext) -> RenderedPrompt:
    return _fill(TemplateId.PROFILE_SUMMARIZER, load_template("profile_summarizer.txt"), ctx, [])


def render_supervisor(ctx: PromptContext) -> RenderedPrompt:
    return _fill(TemplateId.SUPERVISOR, load_template("supervisor.txt"), ctx, [])


def utterance_line(name: str, text: str) -> str:
    return f"{name}: {text}"


def render_conversation_lines(lines: list[tuple[str, str]]) -> str:
    """Join (speaker name, text) pairs into a transcript block."""
    return "\n".join(utterance_line(name, text) for name, text in lines)
