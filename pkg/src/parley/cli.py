"""Operator and developer entry point.

Subcommands: run (interactive terminal chat), simulate (scripted learner),
replay (simulate pinned to replay mode), render (print a prompt and its
hash), validate (transcript invariants), serve (HTTP service).
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import prompts, scripting, transcript as transcript_mod
from .core import GatewayMode, SessionConfig, Phase, SessionEnded
from .engine import SessionEngine
from .gateway import CassetteMiss, Gateway, GatewayConfig
from .objects import StubAssetBackend
from .scene import ingest_scene_text


def load_config_file(path: str | Path | None) -> tuple[SessionConfig, GatewayConfig]:
    """Config file: SessionConfig fields plus an optional "gateway" section."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise click.ClickException(f"{path}: line {exc.lineno}: {exc.msg}")
    gw_section = doc.pop("gateway", {})
    try:
        session_config = SessionConfig.from_dict(doc)
    except (ValueError, KeyError, TypeError) as exc:
        raise click.ClickException(f"{path}: bad session config: {exc}")
    gw_config = GatewayConfig.from_env()
    gw_config.mode = session_config.mode
    if "base_url" in gw_section:
        gw_config.base_url = gw_section["base_url"]
    if "model_id" in gw_section:
        gw_config.model_id = gw_section["model_id"]
    if "cassette_path" in gw_section:
        gw_config.cassette_path = gw_section["cassette_path"]
    if "api_key_env" in gw_section:
        gw_config.api_key = os.environ.get(gw_section["api_key_env"], "")
    return session_config, gw_config


def _build_engine(
    config: SessionConfig,
    gw_config: GatewayConfig,
    cassette: str | None,
    seed: int | None,
    force_mode: GatewayMode | None = None,
) -> SessionEngine:
    if seed is not None:
        config = config.with_overrides(rng_seed=seed)
    if force_mode is not None:
        config = config.with_overrides(mode=force_mode)
        gw_config.mode = force_mode
    if cassette is not None:
        gw_config.cassette_path = cassette
    gw_config.mode = config.mode
    gateway = Gateway(gw_config)
    return SessionEngine.create(config, gateway, StubAssetBackend(), model_id=gw_config.model_id)


def _write_outputs(engine: SessionEngine, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    events_path = out_dir / "events.jsonl"
    with open(events_path, "w", encoding="utf-8") as fh:
        for ev in engine.state.events:
            fh.write(ev.to_json_line())
            fh.write("\n")
    lines = transcript_mod.events_to_transcript_lines(engine.state.events)
    (out_dir / "transcript.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return events_path


@click.group()
def main() -> None:
    """Group-conversation practice engine."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="Session config JSON.")
@click.option("--cassette", type=click.Path(), default=None, help="Cassette path for record/replay.")
@click.option("--seed", type=int, default=None, help="Override the session RNG seed.")
def run(config_path: str | None, cassette: str | None, seed: int | None) -> None:
    """Interactive terminal session."""
    config, gw_config = load_config_file(config_path)
    engine = _build_engine(config, gw_config, cassette, seed)
    click.echo(f"[session {engine.state.session_id}] phase: {engine.state.phase.value}")
    try:
        while engine.state.phase is not Phase.ENDED:
            if engine.state.phase is Phase.SCENE_CAPTURE and engine.state.scene is None:
                description = click.prompt("Describe your surroundings")
                nouns = click.prompt("Visible objects (comma-separated)", default="")
                objects = [n.strip() for n in nouns.split(",") if n.strip()]
                engine.ingest_scene(ingest_scene_text(objects, description))
                click.echo(f"[phase: {engine.state.phase.value}]")
                continue
            if engine.state.awaiting_user:
                reply = click.prompt("You")
                engine.post_user_utterance(reply)
                continue
            produced = engine.advance()
            for ev in produced:
                _echo_event(ev)
            if not produced and not engine.state.awaiting_user:
                break
    except (EOFError, KeyboardInterrupt, click.Abort):
        click.echo("\n[bye]")
    except SessionEnded:
        pass
    click.echo(f"[session over: {len(engine.state.history)} utterances]")


def _echo_event(ev) -> None:
    if ev.type in ("agent_utterance", "user_utterance"):
        speaker = ev.payload["speaker"]
        name = speaker.split(":", 1)[1] if ":" in speaker else speaker
        click.echo(f"{name}: {ev.payload['text']}")
    elif ev.type == "phase_changed":
        click.echo(f"[phase: {ev.payload['to']}]")
    elif ev.type == "object_generated":
        click.echo(f"[object {ev.payload['noun']}: {ev.payload['status']} {ev.payload['asset_ref']}]")
    elif ev.type == "profile_extracted":
        click.echo(f"[profile: {ev.payload['profile']}]")


def _simulate(
    config_path: str,
    script_path: str,
    cassette: str | None,
    seed: int | None,
    out: str,
    force_mode: GatewayMode | None,
) -> None:
    config, gw_config = load_config_file(config_path)
    try:
        steps = scripting.load_script(script_path)
    except scripting.ScriptError as exc:
        raise click.ClickException(str(exc))
    engine = _build_engine(config, gw_config, cassette, seed, force_mode=force_mode)
    try:
        scripting.run_script(engine, steps)
    except scripting.ScriptDrift as exc:
        _write_outputs(engine, Path(out))
        raise click.ClickException(f"script drift: {exc}")
    except CassetteMiss as exc:
        _write_outputs(engine, Path(out))
        raise click.ClickException(f"cassette drift: {exc}")
    events_path = _write_outputs(engine, Path(out))
    click.echo(f"wrote {events_path} ({len(engine.state.events)} events, {len(engine.state.history)} utterances)")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--script", "script_path", type=click.Path(exists=True), required=True)
@click.option("--cassette", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default="out", help="Output directory.")
def simulate(config_path: str, script_path: str, cassette: str | None, seed: int | None, out: str) -> None:
    """Drive a full session from a scripted learner file."""
    _simulate(config_path, script_path, cassette, seed, out, force_mode=None)


@main.command()
@click.option("--cassette", type=click.Path(exists=True), required=True)
@click.option("--script", "script_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default="out")
def replay(cassette: str, script_path: str, config_path: str, seed: int | None, out: str) -> None:
    """Deterministic end-to-end rerun from a cassette (never touches the network)."""
    _simulate(config_path, script_path, cassette, seed, out, force_mode=GatewayMode.REPLAY)


@main.command()
@click.argument("template_id")
@click.option("--context", "context_path", type=click.Path(exists=True), default=None, help="PromptContext JSON.")
@click.option("--feedback/--no-feedback", default=True, help="Base prompt: include the corrective-feedback block.")
@click.option("--strategy", default=None, help="Realia strategy category name.")
def render(template_id: str, context_path: str | None, feedback: bool, strategy: str | None) -> None:
    """Print a rendered prompt and its content hash."""
    ctx_fields = {}
    if context_path:
        ctx_fields = json.loads(Path(context_path).read_text(encoding="utf-8"))
        if "hobbies" in ctx_fields and isinstance(ctx_fields["hobbies"], list):
            ctx_fields["hobbies"] = tuple(ctx_fields["hobbies"])
    try:
        ctx = prompts.PromptContext(**ctx_fields)
    except TypeError as exc:
        raise click.ClickException(f"bad context file: {exc}")
    try:
        tid = prompts.TemplateId(template_id)
    except ValueError:
        raise click.ClickException(
            f"unknown template {template_id!r}; expected one of {[t.value for t in prompts.TemplateId]}"
        )
    try:
        if tid is prompts.TemplateId.BASE:
            rendered = prompts.render_base(ctx, include_feedback=feedback)
        elif tid is prompts.TemplateId.BASE_WITH_REALIA:
            category = prompts.StrategyCategory(strategy or prompts.StrategyCategory.OBSERVATION_NOTICING.value)
            rendered = prompts.render_realia(ctx, prompts.strategy_for(category))
        elif tid is prompts.TemplateId.OBJECT_SUGGESTION:
            rendered = prompts.render_object_suggestion(ctx)
        elif tid is prompts.TemplateId.ASSESSMENT:
            rendered = prompts.render_assessment()
        elif tid is prompts.TemplateId.PROFILE_SUMMARIZER:
            rendered = prompts.render_profile_summarizer(ctx)
        else:
            rendered = prompts.render_supervisor(ctx)
    except prompts.PromptError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"# template: {rendered.template_id.value}")
    click.echo(f"# sha256: {rendered.content_hash}")
    for warning in rendered.warnings:
        click.echo(f"# warning: {warning}")
    click.echo(rendered.text)


@main.command()
@click.argument("transcript_file", type=click.Path(exists=True))
def validate(transcript_file: str) -> None:
    """Check transcript invariants; exit nonzero on any violation."""
    try:
        events = transcript_mod.load_events(transcript_file)
    except transcript_mod.TranscriptParseError as exc:
        raise click.ClickException(str(exc))
    violations = transcript_mod.validate_events(events)
    for violation in violations:
        click.echo(str(violation))
    if violations:
        sys.exit(1)
    click.echo(f"ok: {len(events)} events, no violations")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@click.option("--data-dir", default="data", type=click.Path())
@click.option("--frontend", default=None, type=click.Path(), help="Static directory to serve at /ui.")
def serve(host: str, port: int, data_dir: str, frontend: str | None) -> None:
    """Run the HTTP session service."""
    import uvicorn

    from .service import SessionStore, create_app

    app = create_app(store=SessionStore(data_dir), frontend_dir=frontend)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
