"""Scene ingestion: structured text/JSON, or an image via a vision model.

The vision path asks for a strict JSON object {"objects": [...],
"description": "..."}; a malformed reply gets one repair retry, after which
the session proceeds with an empty, degraded scene rather than stalling.
"""

from __future__ import annotations

import json
from typing import Callable

from .core import SceneContext
from .gateway import Message, ModelGateway, ModelRequest

VISION_TEMPERATURE = 0.0
VISION_MAX_TOKENS = 400

VISION_PROMPT = (
    "You are a scene-understanding assistant for a language-practice app. "
    "Look at the image of the user's surroundings and return a JSON object, and nothing else, "
    'of the form {"objects": ["<lowercase noun>", ...], "description": "<one concise paragraph>"}. '
    "List the prominent, tangible objects you can see and describe the overall environment."
)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
JPEG_MAGIC = b"\xff\xd8\xff"

DEGRADED_DESCRIPTION = "(unavailable)"


class EmptyDescription(ValueError):
    pass


class UnsupportedImage(ValueError):
    pass


class MalformedVisionOutput(ValueError):
    pass


def ingest_scene_text(objects: list[str], description: str) -> SceneContext:
    """Normalize a structured scene: lowercase nouns, case-insensitive dedupe."""
    if not description.strip():
        raise EmptyDescription("scene description must be non-empty")
    seen: set[str] = set()
    normalized: list[str] = []
    for noun in objects:
        lowered = noun.strip().lower()
        if lowered and lowered not in seen:
            seen.add(lowered)
            normalized.append(lowered)
    return SceneContext(objects=tuple(normalized), description=description.strip())


def load_scene_file(text: str) -> SceneContext:
    """Scene file format: JSON {"objects": [string], "description": string}."""
    doc = json.loads(text)
    if not isinstance(doc, dict) or "description" not in doc:
        raise ValueError('scene file must be a JSON object with "objects" and "description"')
    return ingest_scene_text(list(doc.get("objects", [])), doc["description"])


def _parse_vision_reply(raw: str) -> tuple[list[str], str]:
    try:
        doc = json.loads(raw.strip())
    except json.JSONDecodeError as exc:
        raise MalformedVisionOutput(f"not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedVisionOutput("top level is not an object")
    objects = doc.get("objects")
    description = doc.get("description")
    if not isinstance(objects, list) or not all(isinstance(o, str) for o in objects):
        raise MalformedVisionOutput('"objects" must be a list of strings')
    if not isinstance(description, str) or not description.strip():
        raise MalformedVisionOutput('"description" must be a non-empty string')
    return objects, description


def ingest_scene_image(
    image_bytes: bytes,
    gateway: ModelGateway,
    model_id: str = "",
    emit: Callable[[str, dict], None] | None = None,
) -> SceneContext:
    """Run the vision prompt on a PNG/JPEG snapshot and ingest the result."""
    if not (image_bytes.startswith(PNG_MAGIC) or image_bytes.startswith(JPEG_MAGIC)):
        raise UnsupportedImage("image must be PNG or JPEG (checked by magic bytes)")
    messages: list[Message] = [Message("user", "Describe this scene.", image=image_bytes)]
    last_error: MalformedVisionOutput | None = None
    for attempt in range(2):
        request = ModelRequest(
            kind="vision",
            system_prompt=VISION_PROMPT,
            messages=tuple(messages),
            model_id=model_id,
            temperature=VISION_TEMPERATURE,
            max_tokens=VISION_MAX_TOKENS,
        )
        raw = gateway.call(request)
        if emit:
            emit("model_call", {"kind": "vision", "request_key": request.key(), "template_id": None})
        try:
            objects, description = _parse_vision_reply(raw)
        except MalformedVisionOutput as exc:
            last_error = exc
            if emit:
                emit("validation_warning", {"code": "vision_parse_error", "detail": str(exc)})
            messages = messages + [
                Message("assistant", raw),
                Message("user", f"Parse error: {exc}. Return only the JSON object."),
            ]
            continue
        return ingest_scene_text(objects, description)
    assert last_error is not None
    if emit:
        emit("validation_warning", {"code": "vision_degraded", "detail": "falling back to empty scene"})
    return SceneContext(objects=(), description=DEGRADED_DESCRIPTION)
