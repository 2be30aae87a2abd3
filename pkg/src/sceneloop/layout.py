"""Scene layout data model: keyframed bounding boxes and their text/JSON forms.

A structured design is the machine-readable plan for one video: a handful of
keyframes, each holding per-object bounding boxes, plus a background keyword,
the (possibly revised) text prompt, a list of object ids flagged for emphasis,
and a per-object guidance scale.

Two serialized representations are supported and round-trip losslessly:

* a transcript text block, the format planner/structuring agents emit::

      Frame 1: [{'id': 0, 'name': 'car', 'box': [400, 350, 100, 50]}]
      Frame 2: [{'id': 0, 'name': 'car', 'box': [320, 350, 100, 50]}]
      Background keyword: moon
      Generation suggestion: emphasize id 0
      New prompt: A car driving right to left on the moon.

* canonical JSON (sorted keys, compact separators) for persistence::

      {"background_keyword": "moon", "canvas": {"height": 512, "width": 512}, ...}

Object lists are accepted with single-quoted (transcript style) or
double-quoted (strict JSON) keys.  All types are immutable after construction
and all operations are pure functions.
"""
from __future__ import annotations

import ast
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, NamedTuple

__all__ = [
    "DEFAULT_CANVAS",
    "DEFAULT_TOTAL_FRAMES",
    "BoundingBox",
    "BoxOutOfCanvas",
    "Canvas",
    "DesignDiff",
    "DuplicateId",
    "FrameOutOfRange",
    "KeyframeLayout",
    "LayoutError",
    "MalformedFrameLine",
    "ObjectSpec",
    "SerializedDesign",
    "StructuredDesign",
    "canonical_json",
    "design_from_json",
    "diff_designs",
    "interpolate_layout",
    "parse_design_text",
    "serialize_design",
]


class LayoutError(ValueError):
    """Base class for layout parsing/validation failures."""


class MalformedFrameLine(LayoutError):
    """A ``Frame N:`` line exists but its object list cannot be parsed."""


class DuplicateId(LayoutError):
    """The same object id appears twice within one keyframe."""


class BoxOutOfCanvas(LayoutError):
    """A bounding box extends outside the canvas. Reports frame and id."""


class FrameOutOfRange(LayoutError):
    """Interpolation query outside ``[1, total_frames]``."""


@dataclass(frozen=True)
class Canvas:
    """Pixel dimensions of the video frame."""

    width: int = 512
    height: int = 512

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise LayoutError(f"canvas dimensions must be positive, got {self.width}x{self.height}")


DEFAULT_CANVAS = Canvas(512, 512)
DEFAULT_TOTAL_FRAMES = 65


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in integer pixels: left, top, width, height."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise LayoutError(f"box width/height must be positive, got {self.as_list()}")
        if self.x < 0 or self.y < 0:
            raise LayoutError(f"box origin must be non-negative, got {self.as_list()}")

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def within(self, canvas: Canvas) -> bool:
        return self.x + self.w <= canvas.width and self.y + self.h <= canvas.height

    @classmethod
    def from_list(cls, coords: Iterable[Any]) -> "BoundingBox":
        vals = list(coords)
        if len(vals) != 4:
            raise LayoutError(f"box needs exactly 4 coordinates, got {vals!r}")
        out = []
        for v in vals:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise LayoutError(f"box coordinate is not a number: {v!r}")
            if isinstance(v, float):
                if not v.is_integer():
                    raise LayoutError(f"box coordinates must be integer pixels, got {v!r}")
                v = int(v)
            out.append(v)
        return cls(*out)


@dataclass(frozen=True)
class ObjectSpec:
    """One object instance in a keyframe."""

    id: int
    name: str
    box: BoundingBox

    def __post_init__(self) -> None:
        if self.id < 0:
            raise LayoutError(f"object id must be non-negative, got {self.id}")
        if not self.name:
            raise LayoutError(f"object {self.id} has an empty name")


@dataclass(frozen=True)
class KeyframeLayout:
    """All objects of one keyframe. ``frame_index`` is 1-based."""

    frame_index: int
    objects: tuple[ObjectSpec, ...]

    def __post_init__(self) -> None:
        if self.frame_index < 1:
            raise LayoutError(f"frame index must be >= 1, got {self.frame_index}")
        object.__setattr__(self, "objects", tuple(self.objects))
        seen: set[int] = set()
        for obj in self.objects:
            if obj.id in seen:
                raise DuplicateId(f"frame {self.frame_index}: object id {obj.id} appears twice")
            seen.add(obj.id)

    def object_ids(self) -> set[int]:
        return {o.id for o in self.objects}

    def get(self, object_id: int) -> ObjectSpec | None:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        return None


@dataclass(frozen=True)
class StructuredDesign:
    """The full plan handed to the generator.

    ``guidance_scales`` maps every object id appearing in any keyframe to its
    per-object guidance scale (>= 1.0).  ``emphasis`` lists ids the latest
    redesign flagged for emphasis; translating emphasis into scale increments
    is the workflow's job, not this type's.
    """

    keyframes: tuple[KeyframeLayout, ...]
    canvas: Canvas = DEFAULT_CANVAS
    total_frames: int = DEFAULT_TOTAL_FRAMES
    background_keyword: str = ""
    prompt: str = ""
    emphasis: tuple[int, ...] = ()
    guidance_scales: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "keyframes", tuple(self.keyframes))
        object.__setattr__(self, "emphasis", tuple(self.emphasis))
        object.__setattr__(self, "guidance_scales", dict(self.guidance_scales))
        if not self.keyframes:
            raise LayoutError("a design needs at least one keyframe")
        if self.total_frames < len(self.keyframes):
            raise LayoutError(
                f"total_frames={self.total_frames} smaller than keyframe count {len(self.keyframes)}"
            )
        indices = [kf.frame_index for kf in self.keyframes]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise LayoutError(f"keyframe indices must be strictly increasing, got {indices}")
        names: dict[int, str] = {}
        for kf in self.keyframes:
            for obj in kf.objects:
                if not obj.box.within(self.canvas):
                    raise BoxOutOfCanvas(
                        f"frame {kf.frame_index}, id {obj.id}: box {obj.box.as_list()} "
                        f"exceeds canvas {self.canvas.width}x{self.canvas.height}"
                    )
                if names.setdefault(obj.id, obj.name) != obj.name:
                    raise LayoutError(
                        f"object id {obj.id} renamed across keyframes: "
                        f"{names[obj.id]!r} vs {obj.name!r}"
                    )
        for oid in names:
            if oid not in self.guidance_scales:
                raise LayoutError(f"object id {oid} has no guidance scale entry")
        for oid, beta in self.guidance_scales.items():
            if beta < 1.0:
                raise LayoutError(f"guidance scale for id {oid} is {beta}, below the 1.0 floor")

    def object_ids(self) -> set[int]:
        ids: set[int] = set()
        for kf in self.keyframes:
            ids |= kf.object_ids()
        return ids

    def object_names(self) -> dict[int, str]:
        names: dict[int, str] = {}
        for kf in self.keyframes:
            for obj in kf.objects:
                names.setdefault(obj.id, obj.name)
        return names


@dataclass(frozen=True)
class DesignDiff:
    """What changed between two consecutive designs.

    ``prompt_changed`` ignores whitespace-only differences; a pair of designs
    differing only in prompt whitespace therefore reports no change.
    """

    layout_changed: bool
    guidance_changed: bool
    prompt_changed: bool
    detail: tuple[dict[str, Any], ...] = ()

    @property
    def any_changed(self) -> bool:
        return self.layout_changed or self.guidance_changed or self.prompt_changed

    def flags(self) -> set[str]:
        """Names of the change kinds this diff carries."""
        names = set()
        if self.layout_changed:
            names.add("layout")
        if self.guidance_changed:
            names.add("guidance_scale")
        if self.prompt_changed:
            names.add("prompt")
        return names


class SerializedDesign(NamedTuple):
    """Both serialized forms of one design."""

    text: str
    json: str


# --- transcript text parsing ------------------------------------------------

_FRAME_RE = re.compile(r"^\W{0,6}frame\s+(\d+)\s*:?\**\s*:?\s*(\[.*)$", re.IGNORECASE)
_LABEL_RE = re.compile(
    r"^\W{0,6}(background keyword|generation suggestion|new prompt|canvas|total frames|guidance scales)\s*:\s*(.*)$",
    re.IGNORECASE,
)
_EMPHASIS_RE = re.compile(r"emphasi[zs]e\s+(?:the\s+)?id\s+(\d+)", re.IGNORECASE)
_CANVAS_RE = re.compile(r"(\d+)\s*[x,]\s*(\d+)")


def _parse_object_list(raw: str, frame: int) -> list[ObjectSpec]:
    """Parse the bracketed object list of one ``Frame N:`` line."""
    start = raw.find("[")
    end = raw.rfind("]")
    if start < 0 or end <= start:
        raise MalformedFrameLine(f"frame {frame}: no bracketed object list in {raw!r}")
    snippet = raw[start : end + 1]
    try:
        data = ast.literal_eval(snippet)
    except (ValueError, SyntaxError):
        try:
            data = json.loads(snippet)
        except json.JSONDecodeError as exc:
            raise MalformedFrameLine(f"frame {frame}: cannot parse object list: {exc}") from None
    if not isinstance(data, list):
        raise MalformedFrameLine(f"frame {frame}: expected a list, got {type(data).__name__}")
    objects = []
    for item in data:
        if not isinstance(item, dict) or not {"id", "name", "box"} <= set(item):
            raise MalformedFrameLine(f"frame {frame}: object entry {item!r} lacks id/name/box")
        try:
            box = BoundingBox.from_list(item["box"])
        except LayoutError as exc:
            raise MalformedFrameLine(f"frame {frame}: {exc}") from None
        objects.append(ObjectSpec(id=int(item["id"]), name=str(item["name"]), box=box))
    return objects


def _parse_scales(raw: str) -> dict[int, float]:
    try:
        data = ast.literal_eval(raw.strip())
    except (ValueError, SyntaxError) as exc:
        raise MalformedFrameLine(f"cannot parse guidance scales line: {exc}") from None
    if not isinstance(data, dict):
        raise MalformedFrameLine(f"guidance scales line must hold a mapping, got {raw!r}")
    return {int(k): float(v) for k, v in data.items()}


def parse_design_text(
    text: str,
    *,
    canvas: Canvas = DEFAULT_CANVAS,
    total_frames: int = DEFAULT_TOTAL_FRAMES,
    prior_scales: Mapping[int, float] | None = None,
) -> StructuredDesign:
    """Parse a transcript design block into a :class:`StructuredDesign`.

    Free-text reasoning lines pass through unparsed.  Guidance scales default
    to 1.0 for ids without an entry in ``prior_scales``.  Raises
    :class:`MalformedFrameLine`, :class:`DuplicateId` or
    :class:`BoxOutOfCanvas` on the first offending line.
    """
    frames: dict[int, list[ObjectSpec]] = {}
    background = ""
    prompt = ""
    emphasis: list[int] = []
    scales: dict[int, float] = dict(prior_scales or {})
    explicit_scales: dict[int, float] = {}

    for line in text.splitlines():
        m = _FRAME_RE.match(line)
        if m:
            idx = int(m.group(1))
            if idx in frames:
                raise MalformedFrameLine(f"frame {idx} listed twice")
            frames[idx] = _parse_object_list(m.group(2), idx)
            continue
        m = _LABEL_RE.match(line)
        if not m:
            continue
        label = m.group(1).lower()
        value = m.group(2).strip()
        if label == "background keyword":
            background = value.rstrip(".")
        elif label == "generation suggestion":
            emphasis.extend(int(g) for g in _EMPHASIS_RE.findall(value))
        elif label == "new prompt":
            prompt = value
        elif label == "canvas":
            cm = _CANVAS_RE.search(value)
            if not cm:
                raise MalformedFrameLine(f"cannot parse canvas line {value!r}")
            canvas = Canvas(int(cm.group(1)), int(cm.group(2)))
        elif label == "total frames":
            total_frames = int(value.rstrip("."))
        elif label == "guidance scales":
            explicit_scales = _parse_scales(value)

    if not frames:
        raise MalformedFrameLine("no 'Frame N:' lines found in design text")

    keyframes = tuple(
        KeyframeLayout(frame_index=idx, objects=tuple(frames[idx])) for idx in sorted(frames)
    )
    ids = {o.id for kf in keyframes for o in kf.objects}
    merged = {oid: scales.get(oid, 1.0) for oid in ids}
    merged.update({oid: beta for oid, beta in explicit_scales.items() if oid in ids})
    return StructuredDesign(
        keyframes=keyframes,
        canvas=canvas,
        total_frames=total_frames,
        background_keyword=background,
        prompt=prompt,
        emphasis=tuple(dict.fromkeys(emphasis)),
        guidance_scales=merged,
    )


# --- serialization ----------------------------------------------------------

def _object_literal(obj: ObjectSpec) -> str:
    return f"{{'id': {obj.id}, 'name': '{obj.name}', 'box': {obj.box.as_list()}}}"


def design_to_text(design: StructuredDesign) -> str:
    """Render the transcript text form. Re-parsing it recovers the design."""
    lines = []
    for kf in design.keyframes:
        inner = ", ".join(_object_literal(o) for o in kf.objects)
        lines.append(f"Frame {kf.frame_index}: [{inner}]")
    if design.background_keyword:
        lines.append(f"Background keyword: {design.background_keyword}")
    if design.emphasis:
        lines.append(
            "Generation suggestion: " + ", ".join(f"emphasize id {i}" for i in design.emphasis)
        )
    else:
        lines.append("Generation suggestion: None")
    if design.prompt:
        lines.append(f"New prompt: {design.prompt}")
    lines.append(f"Canvas: {design.canvas.width}x{design.canvas.height}")
    lines.append(f"Total frames: {design.total_frames}")
    scales = {oid: design.guidance_scales[oid] for oid in sorted(design.guidance_scales)}
    if any(beta != 1.0 for beta in scales.values()):
        lines.append("Guidance scales: " + repr(scales))
    return "\n".join(lines) + "\n"


def design_to_dict(design: StructuredDesign) -> dict[str, Any]:
    return {
        "canvas": {"width": design.canvas.width, "height": design.canvas.height},
        "total_frames": design.total_frames,
        "keyframes": [
            {
                "frame": kf.frame_index,
                "objects": [
                    {"id": o.id, "name": o.name, "box": o.box.as_list()} for o in kf.objects
                ],
            }
            for kf in design.keyframes
        ],
        "background_keyword": design.background_keyword,
        "prompt": design.prompt,
        "emphasis": list(design.emphasis),
        "guidance_scales": {str(k): float(v) for k, v in sorted(design.guidance_scales.items())},
    }


def canonical_json(payload: Any) -> str:
    """Deterministic JSON: sorted keys, compact separators, shortest floats."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def design_from_dict(data: Mapping[str, Any]) -> StructuredDesign:
    try:
        canvas = Canvas(int(data["canvas"]["width"]), int(data["canvas"]["height"]))
        keyframes = tuple(
            KeyframeLayout(
                frame_index=int(kf["frame"]),
                objects=tuple(
                    ObjectSpec(
                        id=int(o["id"]),
                        name=str(o["name"]),
                        box=BoundingBox.from_list(o["box"]),
                    )
                    for o in kf["objects"]
                ),
            )
            for kf in data["keyframes"]
        )
        return StructuredDesign(
            keyframes=keyframes,
            canvas=canvas,
            total_frames=int(data["total_frames"]),
            background_keyword=str(data.get("background_keyword", "")),
            prompt=str(data.get("prompt", "")),
            emphasis=tuple(int(i) for i in data.get("emphasis", [])),
            guidance_scales={int(k): float(v) for k, v in data.get("guidance_scales", {}).items()},
        )
    except (KeyError, TypeError) as exc:
        raise LayoutError(f"design JSON missing or malformed field: {exc}") from None


def design_from_json(text: str) -> StructuredDesign:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutError(f"design JSON does not parse: {exc}") from None
    return design_from_dict(data)


def serialize_design(design: StructuredDesign) -> SerializedDesign:
    """Serialize to both forms. Deterministic: equal designs give equal bytes."""
    return SerializedDesign(text=design_to_text(design), json=canonical_json(design_to_dict(design)))


# --- interpolation ----------------------------------------------------------

def _round_px(v: float) -> int:
    # round-half-up keeps interpolation monotone and platform-stable
    return int(math.floor(v + 0.5))


def anchor_positions(keyframe_count: int, total_frames: int) -> list[float]:
    """Evenly spaced anchor frames over ``[1, total_frames]``, one per keyframe."""
    if keyframe_count == 1:
        return [1.0]
    span = total_frames - 1
    return [1.0 + m * span / (keyframe_count - 1) for m in range(keyframe_count)]


def interpolate_layout(design: StructuredDesign, frame: int) -> list[ObjectSpec]:
    """Per-object boxes at an arbitrary frame, linearly interpolated.

    Keyframes sit on evenly spaced anchors over ``[1, total_frames]``; between
    two anchors each box coordinate is interpolated independently and rounded
    to the nearest pixel.  An object present in only one of the surrounding
    anchors holds that anchor's box; an object in neither is absent.
    """
    if not 1 <= frame <= design.total_frames:
        raise FrameOutOfRange(f"frame {frame} outside [1, {design.total_frames}]")
    kfs = design.keyframes
    anchors = anchor_positions(len(kfs), design.total_frames)
    f = float(frame)

    for pos, kf in zip(anchors, kfs):
        if f == pos:
            return list(kf.objects)
    if len(kfs) == 1:
        return list(kfs[0].objects)

    seg = max(i for i, pos in enumerate(anchors[:-1]) if pos <= f)
    lo_kf, hi_kf = kfs[seg], kfs[seg + 1]
    t = (f - anchors[seg]) / (anchors[seg + 1] - anchors[seg])

    out: list[ObjectSpec] = []
    hi_by_id = {o.id: o for o in hi_kf.objects}
    for obj in lo_kf.objects:
        other = hi_by_id.pop(obj.id, None)
        if other is None:
            out.append(obj)
            continue
        a, b = obj.box, other.box
        box = BoundingBox(
            x=_round_px(a.x + t * (b.x - a.x)),
            y=_round_px(a.y + t * (b.y - a.y)),
            w=_round_px(a.w + t * (b.w - a.w)),
            h=_round_px(a.h + t * (b.h - a.h)),
        )
        out.append(ObjectSpec(id=obj.id, name=obj.name, box=box))
    out.extend(hi_by_id[oid] for oid in sorted(hi_by_id))
    return out


# --- diffing ----------------------------------------------------------------

def _norm_ws(text: str) -> str:
    return " ".join(text.split())


def diff_designs(prev: StructuredDesign, next: StructuredDesign) -> DesignDiff:
    """Classify what a redesign touched: layout, guidance scales, or prompt.

    Canvas, frame-count and background changes count as layout changes, so the
    three flags jointly cover every field except prompt whitespace.
    """
    detail: list[dict[str, Any]] = []

    prev_names, next_names = prev.object_names(), next.object_names()
    for oid in sorted(set(next_names) - set(prev_names)):
        detail.append({"id": oid, "change": "added", "name": next_names[oid]})
    for oid in sorted(set(prev_names) - set(next_names)):
        detail.append({"id": oid, "change": "removed", "name": prev_names[oid]})

    layout_changed = (
        prev.keyframes != next.keyframes
        or prev.canvas != next.canvas
        or prev.total_frames != next.total_frames
        or prev.background_keyword != next.background_keyword
    )
    if prev.keyframes != next.keyframes:
        moved = set()
        prev_kf = {kf.frame_index: kf for kf in prev.keyframes}
        for kf in next.keyframes:
            old = prev_kf.get(kf.frame_index)
            for obj in kf.objects:
                prior = old.get(obj.id) if old else None
                if prior is not None and prior.box != obj.box and obj.id not in moved:
                    moved.add(obj.id)
                    detail.append({"id": obj.id, "change": "box"})

    guidance_changed = (
        dict(prev.guidance_scales) != dict(next.guidance_scales) or prev.emphasis != next.emphasis
    )
    for oid in sorted(set(prev.guidance_scales) & set(next.guidance_scales)):
        a, b = prev.guidance_scales[oid], next.guidance_scales[oid]
        if a != b:
            detail.append({"id": oid, "change": "scale", "from": a, "to": b})

    prompt_changed = _norm_ws(prev.prompt) != _norm_ws(next.prompt)
    if prompt_changed:
        detail.append({"change": "prompt"})

    return DesignDiff(
        layout_changed=layout_changed,
        guidance_changed=guidance_changed,
        prompt_changed=prompt_changed,
        detail=tuple(detail),
    )
