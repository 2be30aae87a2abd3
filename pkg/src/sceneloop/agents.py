"""The planner and the four redesign roles, as template + chat-call + parse pipelines.

One refinement iteration runs four agents in a fixed order, each consuming
only what earlier ones produced plus the previous structured plan:

1. verification: reads the video and prompt, reports aspect-tagged issues;
2. suggestion: turns issues into correction directives and routes them to
   one of three correction experts (consistency / spatial dynamics /
   temporal dynamics);
3. correction: the routed expert rewrites boxes and emphasis directives,
   with the previous plan in context;
4. output structuring: normalizes the draft back into a structured design.

Parsing is deliberately tolerant of prose: replies are scanned for the
labeled lines the roles are instructed to emit, and anything else passes
through opaquely.  On a parse failure each agent re-prompts once with a
format reminder appended, then raises with the offending text attached.

Route labels: ``A`` means consistency, ``B1`` spatial dynamics, ``B2``
temporal dynamics; when a reply spells out an expert name, the full name
wins over any letter label.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .chat import ChatBackend, ChatMessage, ChatRequest
from .generation import VideoArtifact
from .layout import (
    LayoutError,
    StructuredDesign,
    design_to_text,
    parse_design_text,
)

__all__ = [
    "ASPECTS",
    "AgentError",
    "ChatAgentSuite",
    "CorrectionDraft",
    "Issue",
    "ParseFailure",
    "RolePromptSet",
    "Route",
    "RouteUnparseable",
    "SuggestionBundle",
    "VerificationReport",
    "parse_route",
    "parse_suggestion",
    "parse_verification",
]

ASPECTS = ("existence", "quantity", "attribute", "relation_interaction", "motion_direction")


class AgentError(RuntimeError):
    """Base class for agent pipeline failures."""


class ParseFailure(AgentError):
    """An agent reply could not be parsed; carries the raw text."""

    def __init__(self, message: str, raw_text: str = "") -> None:
        super().__init__(message)
        self.raw_text = raw_text


class RouteUnparseable(ParseFailure):
    """No recognizable correction-expert label or name in the reply."""


class Route(enum.Enum):
    CONSISTENCY = "Consistency"
    TEMPORAL_DYNAMICS = "TemporalDynamics"
    SPATIAL_DYNAMICS = "SpatialDynamics"

    def __str__(self) -> str:
        return self.value


_LETTER_ROUTES = {
    "A": Route.CONSISTENCY,
    "B1": Route.SPATIAL_DYNAMICS,
    "B2": Route.TEMPORAL_DYNAMICS,
}
_NAME_ROUTES = {
    "consistency": Route.CONSISTENCY,
    "spatialdynamics": Route.SPATIAL_DYNAMICS,
    "temporaldynamics": Route.TEMPORAL_DYNAMICS,
}


@dataclass(frozen=True)
class Issue:
    aspect: str
    description: str
    object_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.aspect not in ASPECTS:
            raise ValueError(f"unknown aspect {self.aspect!r}")
        if not self.description:
            raise ValueError("issue description must be non-empty")
        object.__setattr__(self, "object_ids", tuple(self.object_ids))


@dataclass(frozen=True)
class VerificationReport:
    aligned: bool
    issues: tuple[Issue, ...]
    raw_text: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "issues", tuple(self.issues))
        if self.aligned and self.issues:
            raise ValueError("an aligned report cannot list issues")

    def aspects(self) -> set[str]:
        return {issue.aspect for issue in self.issues}


@dataclass(frozen=True)
class SuggestionBundle:
    corrections: tuple[str, ...]
    route: Route
    raw_text: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "corrections", tuple(self.corrections))


@dataclass(frozen=True)
class CorrectionDraft:
    raw_text: str

    def __post_init__(self) -> None:
        if not self.raw_text.strip():
            raise ValueError("correction draft must be non-empty")


# --- reply parsing -----------------------------------------------------------

_NEGATIVE_MARKERS = (
    "instead of",
    " not ",
    "n't",
    "missing",
    "lacks",
    "lack of",
    "absent",
    "incorrect",
    "wrong",
    "opposite",
    "mismatch",
    "misaligned",
    "misalignment",
    "issue",
    "no visible",
    "without any",
    "fails",
    "does not",
    "do not",
)
_AFFIRMATIONS = (
    "aligns with the prompt",
    "aligns well with the prompt",
    "fully aligns",
    "is aligned",
    "no issues",
    "no misalignment",
    "matches the prompt",
)
_MISALIGNMENT_STATEMENTS = (
    "does not align",
    "not align",
    "misalign",
    "mismatch",
    "does not fully align",
    "issues",
)
# ordered: when several aspects match one sentence, existence only counts
# if nothing more specific did (phrases like "the action ... is missing"
# describe a relation fault, not a missing object)
_ASPECT_KEYWORDS = (
    ("relation_interaction", ("relationship", "relationships", "relation", "interaction",
                              "interact", "action", "actions", "directing", "directs")),
    ("motion_direction", ("motion", "direction", "movement", "moving", "moves",
                           "right to left", "left to right")),
    ("attribute", ("attribute", "attributes", "color", "colour", "uniform", "badge",
                    "appearance", "wearing", "dressed", "depicted as", "texture")),
    ("quantity", ("quantity", "number of", "count", "duplicate", "extra", "instead of one",
                   "more than one", "two ")),
    ("existence", ("missing", "absent", "not present", "does not appear", "not visible",
                    "cannot be seen", "not shown", "exist")),
)
_ID_RE = re.compile(r"\bid\s+(\d+)", re.IGNORECASE)
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?;])\s+|\n")


def _sentence_aspects(sentence: str) -> list[str]:
    found = [aspect for aspect, keys in _ASPECT_KEYWORDS if any(k in sentence for k in keys)]
    if len(found) > 1 and "existence" in found:
        found.remove("existence")
    return found


def parse_verification(raw_text: str) -> VerificationReport:
    """Extract aspect-tagged issues from a free-text verification reply.

    A sentence contributes an issue when it both signals a problem and names
    an aspect.  The report is aligned only when an affirmation is present
    and no issue was extracted; a reply with neither fails to parse.
    """
    text = raw_text.strip()
    if not text:
        raise ParseFailure("empty verification reply", raw_text)
    issues: list[Issue] = []
    seen: set[str] = set()
    for sentence in _SENTENCE_SPLIT.split(text):
        plain = sentence.strip()
        if not plain:
            continue
        lowered = " " + plain.lower().replace("*", "") + " "
        if not any(marker in lowered for marker in _NEGATIVE_MARKERS):
            continue
        ids = tuple(int(m) for m in _ID_RE.findall(plain))
        for aspect in _sentence_aspects(lowered):
            if aspect in seen:
                continue
            seen.add(aspect)
            issues.append(Issue(aspect=aspect, description=plain, object_ids=ids))
    if issues:
        return VerificationReport(aligned=False, issues=tuple(issues), raw_text=raw_text)
    lowered_all = text.lower()
    if any(phrase in lowered_all for phrase in _AFFIRMATIONS):
        return VerificationReport(aligned=True, issues=(), raw_text=raw_text)
    if any(phrase in lowered_all for phrase in _MISALIGNMENT_STATEMENTS):
        return VerificationReport(aligned=False, issues=(), raw_text=raw_text)
    raise ParseFailure("verification reply neither affirms alignment nor lists issues", raw_text)


def parse_route(raw_text: str) -> Route:
    """Pick the correction expert a suggestion reply selects.

    Scoped to lines that mention choosing a correction agent when such lines
    exist, falling back to the whole reply.  A spelled-out expert name beats
    any letter label; ambiguity (several distinct names) fails to parse.
    """
    lines = [
        line
        for line in raw_text.splitlines()
        if re.search(r"correction agent", line, re.IGNORECASE)
    ]
    for scope in (lines, [raw_text]) if lines else ([raw_text],):
        # squeeze spaces so "SpatialDynamics" and "Spatial Dynamics" both hit
        blob = re.sub(r"\s+", "", " ".join(scope).lower())
        names = {route for key, route in _NAME_ROUTES.items() if key in blob}
        if len(names) == 1:
            return names.pop()
        if len(names) > 1:
            raise RouteUnparseable(
                f"reply names several correction experts: {sorted(r.value for r in names)}",
                raw_text,
            )
        letters = re.findall(r"\b(B1|B2|A)\b[.):,]?", " ".join(scope))
        routes = {_LETTER_ROUTES[letter] for letter in letters}
        if len(routes) == 1:
            return routes.pop()
        if len(routes) > 1:
            raise RouteUnparseable(
                f"reply carries conflicting labels: {sorted(letters)}", raw_text
            )
    raise RouteUnparseable("no correction-expert label or name found", raw_text)


_BULLET_RE = re.compile(r"^\s*(?:[-*]|\(?\d+[.)])\s+(.*\S)\s*$")
_DIRECTIVE_HEADER_RE = re.compile(
    r"suggest\s+corrections?\s+for\s+the\s+bounding\s+boxes\W*(.*)", re.IGNORECASE
)


def parse_suggestion(raw_text: str, *, report_has_issues: bool = True) -> SuggestionBundle:
    """Split a suggestion reply into correction directives plus a route."""
    route = parse_route(raw_text)
    corrections = []
    for line in raw_text.splitlines():
        m = _BULLET_RE.match(line)
        if not m:
            continue
        item = m.group(1)
        if re.search(r"correction agent", item, re.IGNORECASE):
            continue
        header = _DIRECTIVE_HEADER_RE.search(item)
        if header:
            # Keep a directive that rides the header line; drop a bare header.
            item = header.group(1).strip()
            if not item:
                continue
        corrections.append(item)
    if not corrections and report_has_issues:
        corrections = [raw_text.strip()]
    return SuggestionBundle(corrections=tuple(corrections), route=route, raw_text=raw_text)


# --- role templates ----------------------------------------------------------

_ROLE_FILES = {
    "design": "design.txt",
    "verification": "verification.txt",
    "suggestion": "suggestion.txt",
    "correction_consistency": "correction_consistency.txt",
    "correction_spatial": "correction_spatial.txt",
    "correction_temporal": "correction_temporal.txt",
    "output_structuring": "output_structuring.txt",
}
_REQUIRED_SLOTS = {
    "design": ("{prompt}",),
    "verification": ("{prompt}",),
    "suggestion": ("{report}",),
    "correction_consistency": ("{suggestion}", "{prior_design}"),
    "correction_spatial": ("{suggestion}", "{prior_design}"),
    "correction_temporal": ("{suggestion}", "{prior_design}"),
    "output_structuring": ("{draft}",),
}


@dataclass(frozen=True)
class RolePromptSet:
    """One prompt template per role, with named placeholder slots."""

    design: str
    verification: str
    suggestion: str
    correction_consistency: str
    correction_spatial: str
    correction_temporal: str
    output_structuring: str

    def __post_init__(self) -> None:
        for role, slots in _REQUIRED_SLOTS.items():
            template = getattr(self, role)
            for slot in slots:
                if slot not in template:
                    raise ValueError(f"{role} template lacks the {slot} placeholder")

    def for_route(self, route: Route) -> str:
        return {
            Route.CONSISTENCY: self.correction_consistency,
            Route.SPATIAL_DYNAMICS: self.correction_spatial,
            Route.TEMPORAL_DYNAMICS: self.correction_temporal,
        }[route]

    @classmethod
    def default(cls) -> "RolePromptSet":
        pkg = resources.files(__package__) / "templates"
        return cls(**{
            role: (pkg / filename).read_text(encoding="utf-8")
            for role, filename in _ROLE_FILES.items()
        })

    @classmethod
    def from_dir(cls, directory: str | Path) -> "RolePromptSet":
        directory = Path(directory)
        values = {}
        for role, filename in _ROLE_FILES.items():
            path = directory / filename
            if not path.is_file():
                raise FileNotFoundError(f"missing role template {path}")
            values[role] = path.read_text(encoding="utf-8")
        return cls(**values)


# --- the chat-driven suite -----------------------------------------------------


class _Missing(dict):
    def __missing__(self, key: str) -> str:
        return "{" + key + "}"


_FORMAT_REMINDER = (
    "\n\nReminder: reply in the exact requested format, including one "
    "'Frame N: [...]' line per keyframe with integer pixel boxes."
)


@dataclass
class ChatAgentSuite:
    """Runs the planner and the four redesign roles over a chat backend."""

    backend: ChatBackend
    prompts: RolePromptSet = field(default_factory=RolePromptSet.default)
    model: str = "default"
    temperature: float = 0.0
    max_frames: int = 6

    def _fill(self, template: str, **values: str) -> str:
        return template.format_map(_Missing(**values))

    def _attachments(self, video: VideoArtifact | None) -> tuple[str, ...]:
        import base64

        if video is None:
            return ()
        return tuple(
            base64.b64encode(png).decode("ascii")
            for png in video.sample_frames(self.max_frames)
        )

    def _ask(self, text: str, video: VideoArtifact | None = None) -> str:
        request = ChatRequest(
            messages=(
                ChatMessage(role="user", text=text, attachments=self._attachments(video)),
            ),
            model=self.model,
            temperature=self.temperature,
        )
        return self.backend.complete(request).text

    def _ask_parsed(self, text: str, video: VideoArtifact | None, parser, describe: str):
        """One call plus a single format-reminder retry on parse failure."""
        raw = self._ask(text, video)
        try:
            return parser(raw)
        except (ParseFailure, LayoutError) as first:
            from .chat import ScriptExhausted

            try:
                raw2 = self._ask(text + _FORMAT_REMINDER, video)
            except ScriptExhausted:
                raise ParseFailure(f"{describe}: {first}", raw) from first
            try:
                return parser(raw2)
            except (ParseFailure, LayoutError) as second:
                raise ParseFailure(f"{describe} after re-prompt: {second}", raw2) from second

    # the five entry points, in pipeline order

    def design(self, prompt: str, *, canvas=None, total_frames: int | None = None):
        from .layout import DEFAULT_CANVAS, DEFAULT_TOTAL_FRAMES

        canvas = canvas or DEFAULT_CANVAS
        total = total_frames or DEFAULT_TOTAL_FRAMES
        text = self._fill(
            self.prompts.design,
            prompt=prompt,
            width=str(canvas.width),
            height=str(canvas.height),
        )
        return self._ask_parsed(
            text,
            None,
            lambda raw: parse_design_text(raw, canvas=canvas, total_frames=total),
            "design reply has no parseable plan",
        )

    def verify(self, video: VideoArtifact, prompt: str, design: StructuredDesign):
        if video.frame_count < 1:
            raise AgentError("verification needs at least one frame")
        text = self._fill(self.prompts.verification, prompt=prompt)
        return self._ask_parsed(text, video, parse_verification, "verification reply unparseable")

    def suggest(self, video: VideoArtifact, report: VerificationReport) -> SuggestionBundle:
        text = self._fill(self.prompts.suggestion, report=report.raw_text)
        return self._ask_parsed(
            text,
            video,
            lambda raw: parse_suggestion(raw, report_has_issues=bool(report.issues)),
            "suggestion reply unparseable",
        )

    def correct(
        self,
        video: VideoArtifact,
        suggestion: SuggestionBundle,
        prev_design: StructuredDesign,
        report: VerificationReport | None = None,
    ) -> CorrectionDraft:
        # report is accepted for suite-interface symmetry; the chat-backed
        # corrector works from the suggestion text alone.
        template = self.prompts.for_route(suggestion.route)
        text = self._fill(
            template,
            suggestion=suggestion.raw_text,
            prior_design=design_to_text(prev_design),
        )
        return CorrectionDraft(raw_text=self._ask(text, video))

    def structure(
        self,
        video: VideoArtifact,
        draft: CorrectionDraft,
        prev_design: StructuredDesign,
    ) -> StructuredDesign:
        text = self._fill(self.prompts.output_structuring, draft=draft.raw_text)
        return self._ask_parsed(
            text,
            video,
            lambda raw: parse_design_text(
                raw,
                canvas=prev_design.canvas,
                total_frames=prev_design.total_frames,
                prior_scales=prev_design.guidance_scales,
            ),
            "structuring reply has no parseable plan",
        )
