"""Rule-based agents that verify and correct designs from a scene trace.

This suite plays the same five roles as the chat-backed agents (design,
verify, suggest, correct, structure) but grounds every judgement in the
symbolic ``scene_trace`` a simulated generator attaches to its videos,
checked against a declarative :class:`IntentSpec`.  That makes closed-loop
behavior exactly reproducible: no vision, no language model, no sampling.

Verification covers four checks per intent:

* existence: each required object name appears in at least one frame;
* quantity: the peak per-frame count of matching instances equals the
  required count;
* motion: the sign of the box-center displacement between the first and
  last frame where the object is visible matches the required direction;
* relations: both endpoints of a required relation are visible somewhere.

Correction pins counts, inserts default boxes for absent objects,
re-anchors motion paths, and always emphasizes the ids each issue names,
so guidance scales ratchet upward until the generator's failure
thresholds are cleared.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .agents import (
    CorrectionDraft,
    Issue,
    Route,
    SuggestionBundle,
    VerificationReport,
)
from .generation import SimScenario, TraceObject, VideoArtifact
from .layout import (
    BoundingBox,
    Canvas,
    KeyframeLayout,
    ObjectSpec,
    StructuredDesign,
    design_to_text,
    parse_design_text,
)

DIRECTIONS = ("left", "right", "up", "down", "static")


class OracleError(RuntimeError):
    """Base class for rule-based agent failures."""


class MissingTrace(OracleError):
    """The video carries no scene trace, so nothing can be verified."""


class NoIssues(OracleError):
    """A correction step was requested for an aligned report."""


@dataclass(frozen=True)
class RequiredObject:
    name: str
    count: int = 1

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("required object name must be non-empty")
        if self.count < 1:
            raise ValueError(f"required count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class RequiredMotion:
    object: str
    direction: str

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValueError(
                f"direction must be one of {DIRECTIONS}, got {self.direction!r}"
            )


@dataclass(frozen=True)
class RequiredRelation:
    subject: str
    relation: str
    object: str


@dataclass(frozen=True)
class IntentSpec:
    """Declarative ground truth for one prompt: what must appear and move."""

    objects: tuple[RequiredObject, ...]
    motion: tuple[RequiredMotion, ...] = ()
    relations: tuple[RequiredRelation, ...] = ()
    background: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "motion", tuple(self.motion))
        object.__setattr__(self, "relations", tuple(self.relations))
        if not self.objects:
            raise ValueError("intent must require at least one object")
        names = [o.name for o in self.objects]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate required object names: {names}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IntentSpec":
        return cls(
            objects=tuple(
                RequiredObject(name=o["name"], count=int(o.get("count", 1)))
                for o in data.get("objects", [])
            ),
            motion=tuple(
                RequiredMotion(object=m["object"], direction=m["direction"])
                for m in data.get("motion", [])
            ),
            relations=tuple(
                RequiredRelation(
                    subject=r["subject"], relation=r["relation"], object=r["object"]
                )
                for r in data.get("relations", [])
            ),
            background=str(data.get("background", "")),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "objects": [{"name": o.name, "count": o.count} for o in self.objects],
            "motion": [
                {"object": m.object, "direction": m.direction} for m in self.motion
            ],
            "relations": [
                {"subject": r.subject, "relation": r.relation, "object": r.object}
                for r in self.relations
            ],
            "background": self.background,
        }


def load_scenario(path: str | Path) -> SimScenario:
    """Read a scenario JSON file, parsing its intent into an IntentSpec."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    intent = IntentSpec.from_dict(data["intent"]) if data.get("intent") else None
    return SimScenario.from_dict(data, intent=intent)


def _matches(entry_name: str, required_name: str) -> bool:
    return required_name.lower() in entry_name.lower()


def _present_entries(
    trace: Sequence[Sequence[TraceObject]], name: str
) -> list[tuple[int, TraceObject]]:
    out = []
    for frame_index, frame in enumerate(trace):
        for entry in frame:
            if entry.present and _matches(entry.name, name):
                out.append((frame_index, entry))
    return out


def _ids_for(trace: Sequence[Sequence[TraceObject]], name: str) -> tuple[int, ...]:
    seen: list[int] = []
    for frame in trace:
        for entry in frame:
            if _matches(entry.name, name) and entry.id not in seen:
                seen.append(entry.id)
    return tuple(seen)


def _center(box: tuple[int, int, int, int]) -> tuple[float, float]:
    x, y, w, h = box
    return (x + w / 2.0, y + h / 2.0)


_STATIC_TOLERANCE_PX = 2.0


def _motion_issue(
    trace: Sequence[Sequence[TraceObject]], requirement: RequiredMotion
) -> Issue | None:
    hits = _present_entries(trace, requirement.object)
    if not hits:
        return None  # existence check already covers a fully absent object
    first_frame = min(frame for frame, _ in hits)
    last_frame = max(frame for frame, _ in hits)
    if first_frame == last_frame:
        span = (0.0, 0.0)
    else:
        start = next(e for f, e in hits if f == first_frame)
        end = next(e for f, e in hits if f == last_frame)
        sx, sy = _center(start.box)
        ex, ey = _center(end.box)
        span = (ex - sx, ey - sy)
    dx, dy = span
    ok = {
        "left": dx < 0,
        "right": dx > 0,
        "up": dy < 0,
        "down": dy > 0,
        "static": abs(dx) <= _STATIC_TOLERANCE_PX and abs(dy) <= _STATIC_TOLERANCE_PX,
    }[requirement.direction]
    if ok:
        return None
    return Issue(
        aspect="motion_direction",
        description=(
            f"'{requirement.object}' should move {requirement.direction} but its "
            f"center displacement is ({dx:+.0f}, {dy:+.0f})"
        ),
        object_ids=_ids_for(trace, requirement.object),
    )


def oracle_verify(
    trace: Sequence[Sequence[TraceObject]] | None, intent: IntentSpec
) -> VerificationReport:
    """Check a scene trace against an intent; aligned iff no check fails."""
    if trace is None:
        raise MissingTrace("video has no scene trace; only simulator output works")
    issues: list[Issue] = []
    for req in intent.objects:
        per_frame = [
            sum(1 for e in frame if e.present and _matches(e.name, req.name))
            for frame in trace
        ]
        peak = max(per_frame, default=0)
        if peak == 0:
            issues.append(
                Issue(
                    aspect="existence",
                    description=f"required object '{req.name}' never appears",
                    object_ids=_ids_for(trace, req.name),
                )
            )
        elif peak != req.count:
            issues.append(
                Issue(
                    aspect="quantity",
                    description=(
                        f"found {peak} instance(s) of '{req.name}' "
                        f"instead of {req.count}"
                    ),
                    object_ids=_ids_for(trace, req.name),
                )
            )
    for requirement in intent.motion:
        issue = _motion_issue(trace, requirement)
        if issue is not None:
            issues.append(issue)
    for rel in intent.relations:
        missing = [
            name
            for name in (rel.subject, rel.object)
            if not _present_entries(trace, name)
        ]
        if missing:
            issues.append(
                Issue(
                    aspect="relation_interaction",
                    description=(
                        f"relation '{rel.subject} {rel.relation} {rel.object}' "
                        "cannot hold: "
                        + ", ".join(f"'{name}' not visible" for name in missing)
                    ),
                    object_ids=sum((_ids_for(trace, n) for n in missing), ()),
                )
            )
    aligned = not issues
    lines = ["The video aligns with the prompt. No issues."] if aligned else [
        "The alignment check reveals the following issues:",
        *(f"- {issue.description}" for issue in issues),
    ]
    return VerificationReport(
        aligned=aligned, issues=tuple(issues), raw_text="\n".join(lines)
    )


def oracle_suggest(report: VerificationReport) -> SuggestionBundle:
    """Route a failing report and restate each issue as a directive."""
    if report.aligned or not report.issues:
        raise NoIssues("suggestion requested for a report with no issues")
    aspects = report.aspects()
    if "motion_direction" in aspects:
        route = Route.SPATIAL_DYNAMICS
    elif "attribute" in aspects:
        route = Route.TEMPORAL_DYNAMICS
    else:
        route = Route.CONSISTENCY
    corrections = tuple(f"Fix: {issue.description}" for issue in report.issues)
    lines = [
        "1. Suggest corrections for the bounding boxes:",
        *(f"- {c}" for c in corrections),
        f"2. Choose the suitable correction agent: {route.value}",
    ]
    return SuggestionBundle(
        corrections=corrections, route=route, raw_text="\n".join(lines)
    )


def _default_box(canvas: Canvas, taken: Sequence[BoundingBox]) -> BoundingBox:
    """A canvas-appropriate box placed at the first free anchor point."""
    side_w = max(16, min(100, canvas.width // 4))
    side_h = max(16, min(100, canvas.height // 4))
    anchors = [
        (canvas.width // 2, canvas.height // 2),
        (canvas.width // 4, canvas.height // 4),
        (3 * canvas.width // 4, canvas.height // 4),
        (canvas.width // 4, 3 * canvas.height // 4),
        (3 * canvas.width // 4, 3 * canvas.height // 4),
    ]

    def overlaps(a: BoundingBox, b: BoundingBox) -> bool:
        return (
            a.x < b.x + b.w and b.x < a.x + a.w and a.y < b.y + b.h and b.y < a.y + a.h
        )

    for cx, cy in anchors:
        x = min(max(0, cx - side_w // 2), canvas.width - side_w)
        y = min(max(0, cy - side_h // 2), canvas.height - side_h)
        candidate = BoundingBox(x, y, side_w, side_h)
        if not any(overlaps(candidate, box) for box in taken):
            return candidate
    return BoundingBox(0, 0, side_w, side_h)


def _motion_anchor_boxes(
    base: BoundingBox, direction: str, canvas: Canvas, count: int
) -> list[BoundingBox]:
    """Constant-velocity keyframe boxes sweeping the canvas in a direction."""
    if count == 1 or direction == "static":
        return [base] * count
    if direction in ("left", "right"):
        lo, hi = 0, canvas.width - base.w
        start, end = (hi, lo) if direction == "left" else (lo, hi)
        xs = [round(start + (end - start) * i / (count - 1)) for i in range(count)]
        return [BoundingBox(x, base.y, base.w, base.h) for x in xs]
    lo, hi = 0, canvas.height - base.h
    start, end = (hi, lo) if direction == "up" else (lo, hi)
    ys = [round(start + (end - start) * i / (count - 1)) for i in range(count)]
    return [BoundingBox(base.x, y, base.w, base.h) for y in ys]


def _design_names(design: StructuredDesign) -> dict[int, str]:
    names: dict[int, str] = {}
    for kf in design.keyframes:
        for obj in kf.objects:
            names.setdefault(obj.id, obj.name)
    return names


def _trace_id_to_design_id(trace_id: int, design_ids: Iterable[int]) -> int | None:
    ids = set(design_ids)
    if trace_id in ids:
        return trace_id
    # Simulator ghosts shadow an original id offset by 1000.
    if trace_id >= 1000 and (trace_id - 1000) in ids:
        return trace_id - 1000
    return None


def oracle_correct_and_structure(
    report: VerificationReport,
    prev_design: StructuredDesign,
    intent: IntentSpec,
) -> StructuredDesign:
    """Apply deterministic layout fixes for every reported issue.

    An empty report returns the design unchanged.  Fixes never touch
    guidance scales directly; they only mark ids for emphasis and let the
    caller's bookkeeping raise the scales.
    """
    if not report.issues:
        return prev_design

    names = _design_names(prev_design)
    keyframes = [
        {obj.id: obj for obj in kf.objects} for kf in prev_design.keyframes
    ]
    scales = dict(prev_design.guidance_scales)
    emphasis: list[int] = []
    added_names: list[str] = []

    def emphasize(ids: Iterable[int]) -> None:
        for trace_id in ids:
            mapped = _trace_id_to_design_id(trace_id, names)
            if mapped is not None and mapped not in emphasis:
                emphasis.append(mapped)

    def add_object(name: str) -> int:
        new_id = max(names, default=-1) + 1
        taken = [obj.box for obj in keyframes[0].values()]
        box = _default_box(prev_design.canvas, taken)
        for frame in keyframes:
            frame[new_id] = ObjectSpec(id=new_id, name=name, box=box)
        names[new_id] = name
        scales[new_id] = 1.0
        added_names.append(name)
        return new_id

    def ids_matching(name: str) -> list[int]:
        return [oid for oid, oname in names.items() if _matches(oname, name)]

    def required_for(issue_description: str) -> RequiredObject | None:
        for req in intent.objects:
            if f"'{req.name}'" in issue_description:
                return req
        return None

    for issue in report.issues:
        if issue.aspect == "existence":
            req = required_for(issue.description)
            if req is None:
                emphasize(issue.object_ids)
                continue
            have = ids_matching(req.name)
            for _ in range(max(0, req.count - len(have))):
                have.append(add_object(req.name))
            emphasize(issue.object_ids)
            emphasis.extend(i for i in have if i not in emphasis)
        elif issue.aspect == "quantity":
            req = required_for(issue.description)
            if req is not None:
                have = sorted(ids_matching(req.name))
                for extra_id in have[req.count :]:
                    for frame in keyframes:
                        frame.pop(extra_id, None)
                    names.pop(extra_id, None)
                    scales.pop(extra_id, None)
                for _ in range(max(0, req.count - len(have))):
                    add_object(req.name)
            emphasize(issue.object_ids)
        elif issue.aspect == "motion_direction":
            for requirement in intent.motion:
                if f"'{requirement.object}'" not in issue.description:
                    continue
                for oid in ids_matching(requirement.object):
                    base = next(
                        (frame[oid].box for frame in keyframes if oid in frame), None
                    )
                    if base is None:
                        continue
                    path = _motion_anchor_boxes(
                        base, requirement.direction, prev_design.canvas, len(keyframes)
                    )
                    for frame, box in zip(keyframes, path):
                        if oid in frame:
                            frame[oid] = dataclasses.replace(frame[oid], box=box)
            emphasize(issue.object_ids)
        elif issue.aspect == "relation_interaction":
            for rel in intent.relations:
                for endpoint in (rel.subject, rel.object):
                    if f"'{endpoint}' not visible" not in issue.description:
                        continue
                    req = next(
                        (r for r in intent.objects if r.name == endpoint),
                        RequiredObject(name=endpoint, count=1),
                    )
                    have = ids_matching(endpoint)
                    for _ in range(max(0, req.count - len(have))):
                        have.append(add_object(endpoint))
                    emphasis.extend(i for i in have if i not in emphasis)
            emphasize(issue.object_ids)
        else:
            emphasize(issue.object_ids)

    new_keyframes = tuple(
        KeyframeLayout(
            frame_index=kf.frame_index,
            objects=tuple(frame[oid] for oid in sorted(frame)),
        )
        for kf, frame in zip(prev_design.keyframes, keyframes)
    )
    prompt = prev_design.prompt
    if added_names:
        extras = ", ".join(added_names)
        prompt = f"{prev_design.prompt.rstrip('.')} with {extras}."
    return dataclasses.replace(
        prev_design,
        keyframes=new_keyframes,
        guidance_scales=scales,
        emphasis=tuple(emphasis),
        prompt=prompt,
    )


def design_from_intent(
    intent: IntentSpec,
    prompt: str,
    canvas: Canvas | None = None,
    total_frames: int = 65,
    keyframe_count: int = 6,
) -> StructuredDesign:
    """Lay out every required object on evenly spaced keyframes."""
    canvas = canvas or Canvas()
    count = min(keyframe_count, total_frames)
    instances: list[tuple[int, str, RequiredObject]] = []
    next_id = 0
    for req in intent.objects:
        for _ in range(req.count):
            instances.append((next_id, req.name, req))
            next_id += 1

    side_w = max(16, min(100, canvas.width // 4))
    side_h = max(16, min(100, canvas.height // 4))
    n = len(instances)
    static_boxes = {}
    for slot, (oid, _, _) in enumerate(instances):
        cx = (slot + 1) * canvas.width // (n + 1)
        x = min(max(0, cx - side_w // 2), canvas.width - side_w)
        y = min(max(0, canvas.height // 2 - side_h // 2), canvas.height - side_h)
        static_boxes[oid] = BoundingBox(x, y, side_w, side_h)

    motion_by_name = {m.object: m.direction for m in intent.motion}
    paths: dict[int, list[BoundingBox]] = {}
    for oid, name, _ in instances:
        direction = next(
            (d for req_name, d in motion_by_name.items() if _matches(name, req_name)),
            "static",
        )
        paths[oid] = _motion_anchor_boxes(static_boxes[oid], direction, canvas, count)

    frame_indices = [
        1 + round(i * (total_frames - 1) / (count - 1)) if count > 1 else 1
        for i in range(count)
    ]
    keyframes = tuple(
        KeyframeLayout(
            frame_index=frame_indices[k],
            objects=tuple(
                ObjectSpec(id=oid, name=name, box=paths[oid][k])
                for oid, name, _ in instances
            ),
        )
        for k in range(count)
    )
    return StructuredDesign(
        keyframes=keyframes,
        canvas=canvas,
        total_frames=total_frames,
        background_keyword=intent.background,
        prompt=prompt,
        emphasis=(),
        guidance_scales={oid: 1.0 for oid, _, _ in instances},
    )


@dataclass
class OracleAgentSuite:
    """Drop-in agent suite backed by the rules above instead of a chat model."""

    intent: IntentSpec
    canvas: Canvas = field(default_factory=Canvas)
    total_frames: int = 65

    def design(
        self,
        prompt: str,
        canvas: Canvas | None = None,
        total_frames: int | None = None,
    ) -> StructuredDesign:
        return design_from_intent(
            self.intent,
            prompt,
            canvas=canvas or self.canvas,
            total_frames=total_frames or self.total_frames,
        )

    def verify(
        self, video: VideoArtifact, prompt: str, design: StructuredDesign
    ) -> VerificationReport:
        return oracle_verify(video.scene_trace, self.intent)

    def suggest(
        self, video: VideoArtifact, report: VerificationReport
    ) -> SuggestionBundle:
        return oracle_suggest(report)

    def correct(
        self,
        video: VideoArtifact,
        suggestion: SuggestionBundle,
        prev_design: StructuredDesign,
        report: VerificationReport | None = None,
    ) -> CorrectionDraft:
        if report is None:
            raise NoIssues("rule-based correction needs the verification report")
        corrected = oracle_correct_and_structure(report, prev_design, self.intent)
        return CorrectionDraft(raw_text=design_to_text(corrected))

    def structure(
        self,
        video: VideoArtifact,
        draft: CorrectionDraft,
        prev_design: StructuredDesign,
    ) -> StructuredDesign:
        return parse_design_text(
            draft.raw_text,
            canvas=prev_design.canvas,
            total_frames=prev_design.total_frames,
            prior_scales=prev_design.guidance_scales,
        )
