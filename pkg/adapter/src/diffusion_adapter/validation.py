"""Request validation: JSON Schema first, then cross-field semantic checks.

Every rejection carries a JSON path into the offending part of the
request body, so clients can repair designs mechanically.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Any, Mapping

import jsonschema


def _load_schema(name: str) -> dict[str, Any]:
    text = resources.files("diffusion_adapter").joinpath(f"schemas/{name}").read_text("utf-8")
    return json.loads(text)


DESIGN_SCHEMA = _load_schema("design.schema.json")
RESPONSE_SCHEMA = _load_schema("response.schema.json")
_DESIGN_VALIDATOR = jsonschema.Draft202012Validator(DESIGN_SCHEMA)
_RESPONSE_VALIDATOR = jsonschema.Draft202012Validator(RESPONSE_SCHEMA)


@dataclass(frozen=True)
class Violation:
    message: str
    path: str

    def detail(self) -> str:
        return f"{self.path}: {self.message}"


def _schema_violation(payload: Any, validator: jsonschema.Draft202012Validator) -> Violation | None:
    error = jsonschema.exceptions.best_match(validator.iter_errors(payload))
    if error is None:
        return None
    return Violation(message=error.message, path=error.json_path)


def validate_design(payload: Any) -> Violation | None:
    """First schema violation or semantic inconsistency, None when valid."""
    violation = _schema_violation(payload, _DESIGN_VALIDATOR)
    if violation is not None:
        return violation
    return _semantic_violation(payload)


def validate_response(payload: Any) -> Violation | None:
    return _schema_violation(payload, _RESPONSE_VALIDATOR)


def _semantic_violation(design: Mapping[str, Any]) -> Violation | None:
    width = design["canvas"]["width"]
    height = design["canvas"]["height"]
    total = design["total_frames"]
    keyframes = design["keyframes"]
    if total < len(keyframes):
        return Violation(
            f"total_frames={total} smaller than keyframe count {len(keyframes)}",
            "$.total_frames",
        )
    names: dict[int, str] = {}
    previous = 0
    for i, kf in enumerate(keyframes):
        frame = kf["frame"]
        if frame <= previous:
            return Violation(
                f"keyframe indices must be strictly increasing, frame {frame} follows {previous}",
                f"$.keyframes[{i}].frame",
            )
        previous = frame
        if frame > total:
            return Violation(
                f"frame {frame} beyond total_frames={total}",
                f"$.keyframes[{i}].frame",
            )
        seen: set[int] = set()
        for j, obj in enumerate(kf["objects"]):
            oid = obj["id"]
            if oid in seen:
                return Violation(
                    f"frame {frame}: object id {oid} appears twice",
                    f"$.keyframes[{i}].objects[{j}].id",
                )
            seen.add(oid)
            if names.setdefault(oid, obj["name"]) != obj["name"]:
                return Violation(
                    f"object id {oid} renamed across keyframes: "
                    f"{names[oid]!r} vs {obj['name']!r}",
                    f"$.keyframes[{i}].objects[{j}].name",
                )
            x, y, w, h = obj["box"]
            if x + w > width or y + h > height:
                return Violation(
                    f"frame {frame}, id {oid}: box {[x, y, w, h]} exceeds canvas {width}x{height}",
                    f"$.keyframes[{i}].objects[{j}].box",
                )
    scales = design.get("guidance_scales", {})
    for oid in names:
        if str(oid) not in scales:
            return Violation(
                f"object id {oid} has no guidance scale entry",
                "$.guidance_scales",
            )
    return None
