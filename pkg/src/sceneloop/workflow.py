"""Orchestrates the design / generate / redesign loop and logs every run.

One run proceeds as: plan an initial design from the prompt, then iterate
``generate -> verify``; an aligned verification ends the run before any
correction call, otherwise the full redesign chain runs (suggest a fix and
a correction expert, draft the correction, structure it back into a
design) and emphasis marks are folded into per-object guidance scales.
The loop stops at alignment or at the iteration cap.

Per-object guidance scales only ratchet upward across iterations: the
structured design's parsed scales are clamped to at least their previous
values, then each emphasized id gains one scale step.

Every iteration is appended to a JSONL run log before the next begins, so
a crash leaves a parseable prefix.  Interleaved ``chat`` lines audit every
backend call.  A determinism hash over the log ignores the volatile
fields (timestamps, timings, latencies), so two runs with identical
inputs can be compared byte-for-byte-equivalently.
"""
from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

from . import __version__
from .agents import (
    AgentError,
    ChatAgentSuite,
    CorrectionDraft,
    Issue,
    ParseFailure,
    SuggestionBundle,
    VerificationReport,
)
from .chat import AuditingBackend, ChatBackendError
from .generation import GenerationError, VideoArtifact, save_video
from .guidance import BETA_INIT, BETA_STEP, GuidanceError, bump_scale
from .layout import (
    DesignDiff,
    LayoutError,
    StructuredDesign,
    design_from_dict,
    design_to_dict,
    diff_designs,
)
from .oracle import OracleError

__all__ = [
    "AgentSuite",
    "BatchJob",
    "ExitStatus",
    "IterationRecord",
    "PipelineConfig",
    "RunLog",
    "RunLogCorrupt",
    "RunLogWriter",
    "UnknownId",
    "WorkflowError",
    "apply_emphasis",
    "determinism_hash",
    "load_runlog",
    "run_batch",
    "run_pipeline",
    "should_exit",
]


class WorkflowError(RuntimeError):
    """Base class for orchestration failures."""


class UnknownId(WorkflowError):
    """An emphasis list names an object id absent from the design."""


class RunLogCorrupt(WorkflowError):
    """A run-log file failed structural validation; names file and line."""


class ExitStatus(Enum):
    ALIGNED = "Aligned"
    MAX_ITERATIONS = "MaxIterations"
    ERROR = "Error"


class AgentSuite(Protocol):
    """The five pipeline roles; satisfied by chat-backed and rule-based suites."""

    def design(self, prompt: str, **kwargs: Any) -> StructuredDesign: ...

    def verify(
        self, video: VideoArtifact, prompt: str, design: StructuredDesign
    ) -> VerificationReport: ...

    def suggest(
        self, video: VideoArtifact, report: VerificationReport
    ) -> SuggestionBundle: ...

    def correct(
        self,
        video: VideoArtifact,
        suggestion: SuggestionBundle,
        prev_design: StructuredDesign,
        report: VerificationReport | None = None,
    ) -> CorrectionDraft: ...

    def structure(
        self,
        video: VideoArtifact,
        draft: CorrectionDraft,
        prev_design: StructuredDesign,
    ) -> StructuredDesign: ...


class Generator(Protocol):
    def generate(self, design: StructuredDesign) -> VideoArtifact: ...


@dataclass(frozen=True)
class PipelineConfig:
    max_iterations: int = 9
    beta_init: float = BETA_INIT
    beta_step: float = BETA_STEP
    seed: int = 0
    model: str = "default"

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise WorkflowError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if self.beta_step <= 0:
            raise WorkflowError(f"beta_step must be positive, got {self.beta_step}")
        if self.beta_init < 1.0:
            raise WorkflowError(f"beta_init must be >= 1.0, got {self.beta_init}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class IterationRecord:
    """Everything one loop iteration produced.

    ``design`` is the structured design this iteration handed to the next
    generation call; on an aligned iteration it equals the design that was
    just verified.  ``timings`` is wall-clock only and excluded from the
    determinism hash.
    """

    index: int
    aligned: bool
    verification_text: str
    issues: tuple[Issue, ...]
    design: StructuredDesign
    suggestion_text: str | None = None
    route: str | None = None
    correction_text: str | None = None
    diff: DesignDiff | None = None
    video_hash: str = ""
    video_path: str = ""
    degraded: bool = False
    timings: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.index < 1:
            raise WorkflowError(f"iteration index must be >= 1, got {self.index}")
        if self.aligned and (self.suggestion_text or self.correction_text):
            raise WorkflowError("an aligned iteration cannot carry corrections")

    def diff_flags(self) -> set[str]:
        return self.diff.flags() if self.diff is not None else set()

    def to_dict(self) -> dict[str, Any]:
        diff = None
        if self.diff is not None:
            diff = {
                "layout_changed": self.diff.layout_changed,
                "guidance_changed": self.diff.guidance_changed,
                "prompt_changed": self.diff.prompt_changed,
                "flags": sorted(self.diff.flags()),
                "detail": list(self.diff.detail),
            }
        return {
            "type": "iteration",
            "index": self.index,
            "aligned": self.aligned,
            "agent_texts": {
                "verification": self.verification_text,
                "suggestion": self.suggestion_text,
                "correction": self.correction_text,
            },
            "issues": [
                {
                    "aspect": issue.aspect,
                    "description": issue.description,
                    "object_ids": list(issue.object_ids),
                }
                for issue in self.issues
            ],
            "route": self.route,
            "design": design_to_dict(self.design),
            "diff": diff,
            "video": {"hash": self.video_hash, "path": self.video_path},
            "degraded": self.degraded,
            "timings": dict(self.timings),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IterationRecord":
        diff_data = data.get("diff")
        diff = None
        if diff_data is not None:
            diff = DesignDiff(
                layout_changed=bool(diff_data["layout_changed"]),
                guidance_changed=bool(diff_data["guidance_changed"]),
                prompt_changed=bool(diff_data["prompt_changed"]),
                detail=tuple(diff_data.get("detail", ())),
            )
        texts = data.get("agent_texts", {})
        return cls(
            index=int(data["index"]),
            aligned=bool(data["aligned"]),
            verification_text=str(texts.get("verification", "")),
            issues=tuple(
                Issue(
                    aspect=i["aspect"],
                    description=i["description"],
                    object_ids=tuple(i.get("object_ids", ())),
                )
                for i in data.get("issues", ())
            ),
            design=design_from_dict(data["design"]),
            suggestion_text=texts.get("suggestion"),
            route=data.get("route"),
            correction_text=texts.get("correction"),
            diff=diff,
            video_hash=str(data.get("video", {}).get("hash", "")),
            video_path=str(data.get("video", {}).get("path", "")),
            degraded=bool(data.get("degraded", False)),
            timings=dict(data.get("timings", {})),
        )


@dataclass
class RunLog:
    prompt: str
    config: PipelineConfig
    initial_design: StructuredDesign | None
    records: list[IterationRecord]
    exit_status: ExitStatus | None
    exit_reason: str = ""
    run_id: str = ""
    label: str = ""
    chat_audits: list[dict[str, Any]] = field(default_factory=list)
    path: Path | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def check_invariants(self) -> None:
        indices = [record.index for record in self.records]
        if indices != list(range(1, len(indices) + 1)):
            raise RunLogCorrupt(f"iteration indices not contiguous from 1: {indices}")
        if len(self.records) > self.config.max_iterations:
            raise RunLogCorrupt(
                f"{len(self.records)} records exceed max_iterations="
                f"{self.config.max_iterations}"
            )
        if self.exit_status is ExitStatus.ALIGNED:
            if not self.records or not self.records[-1].aligned:
                raise RunLogCorrupt("exit=Aligned but final verification disagrees")
        if self.records and self.records[-1].aligned:
            if self.exit_status not in (None, ExitStatus.ALIGNED):
                raise RunLogCorrupt("final verification aligned but exit disagrees")

    def aligned_at(self) -> int | None:
        """Iteration index at which the run exited aligned, if it did."""
        if self.exit_status is ExitStatus.ALIGNED and self.records:
            return self.records[-1].index
        return None


class RunLogWriter:
    """Appends one JSON object per line; every line is flushed immediately."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w", encoding="utf-8")

    def _emit(self, payload: Mapping[str, Any]) -> None:
        self._handle.write(json.dumps(payload, ensure_ascii=False) + "\n")
        self._handle.flush()

    def write_header(
        self,
        prompt: str,
        config: PipelineConfig,
        *,
        run_id: str,
        label: str = "",
        backend: str = "",
        generator: str = "",
    ) -> None:
        self._emit(
            {
                "type": "header",
                "version": __version__,
                "run_id": run_id,
                "label": label,
                "prompt": prompt,
                "config": config.to_dict(),
                "backend": backend,
                "generator": generator,
                "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            }
        )

    def write_design(self, design: StructuredDesign) -> None:
        self._emit({"type": "design", "design": design_to_dict(design)})

    def write_chat(self, audit: Mapping[str, Any]) -> None:
        self._emit({"type": "chat", **audit})

    def write_iteration(self, record: IterationRecord) -> None:
        self._emit(record.to_dict())

    def write_exit(self, status: ExitStatus, iterations: int, reason: str = "") -> None:
        payload: dict[str, Any] = {
            "type": "exit",
            "status": status.value,
            "iterations": iterations,
        }
        if reason:
            payload["reason"] = reason
        self._emit(payload)

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "RunLogWriter":
        return self

    def __exit__(self, *_exc: Any) -> None:
        self.close()


def load_runlog(path: str | Path) -> RunLog:
    """Parse a run-log file; tolerates a missing exit line (crash prefix)."""
    path = Path(path)
    header: dict[str, Any] | None = None
    initial_design_data: Mapping[str, Any] | None = None
    records: list[IterationRecord] = []
    chat: list[dict[str, Any]] = []
    exit_status: ExitStatus | None = None
    exit_reason = ""
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RunLogCorrupt(f"{path}:{lineno}: not valid JSON ({exc.msg})") from None
        kind = data.get("type")
        if kind == "header":
            if header is not None:
                raise RunLogCorrupt(f"{path}:{lineno}: second header line")
            header = data
        elif header is None:
            raise RunLogCorrupt(f"{path}:{lineno}: first line must be the header")
        elif kind == "design":
            if initial_design_data is not None:
                raise RunLogCorrupt(f"{path}:{lineno}: second design line")
            initial_design_data = data.get("design")
        elif kind == "chat":
            chat.append(data)
        elif kind == "iteration":
            if exit_status is not None:
                raise RunLogCorrupt(f"{path}:{lineno}: iteration after exit line")
            try:
                records.append(IterationRecord.from_dict(data))
            except (KeyError, TypeError, LayoutError, WorkflowError) as exc:
                raise RunLogCorrupt(f"{path}:{lineno}: bad iteration record: {exc}") from None
        elif kind == "exit":
            if exit_status is not None:
                raise RunLogCorrupt(f"{path}:{lineno}: second exit line")
            try:
                exit_status = ExitStatus(data["status"])
            except (KeyError, ValueError) as exc:
                raise RunLogCorrupt(f"{path}:{lineno}: bad exit line: {exc}") from None
            exit_reason = str(data.get("reason", ""))
        else:
            raise RunLogCorrupt(f"{path}:{lineno}: unknown record type {kind!r}")
    if header is None:
        raise RunLogCorrupt(f"{path}:1: empty file, no header")
    try:
        config = PipelineConfig(**header.get("config", {}))
        initial = (
            design_from_dict(initial_design_data)
            if initial_design_data is not None
            else None
        )
    except (TypeError, LayoutError, WorkflowError) as exc:
        raise RunLogCorrupt(f"{path}:1: bad header: {exc}") from None
    log = RunLog(
        prompt=str(header.get("prompt", "")),
        config=config,
        initial_design=initial,
        records=records,
        exit_status=exit_status,
        exit_reason=exit_reason,
        run_id=str(header.get("run_id", "")),
        label=str(header.get("label", "")),
        chat_audits=chat,
        path=path,
    )
    log.check_invariants()
    return log


_VOLATILE_KEYS = {"created_at", "timings", "latency"}


def _strip_volatile(value: Any) -> Any:
    if isinstance(value, dict):
        return {
            k: _strip_volatile(v) for k, v in value.items() if k not in _VOLATILE_KEYS
        }
    if isinstance(value, list):
        return [_strip_volatile(v) for v in value]
    return value


def determinism_hash(path: str | Path) -> str:
    """SHA-256 over the log's lines with volatile fields removed.

    Two runs over identical inputs hash equal even though their wall-clock
    fields differ.
    """
    digest = hashlib.sha256()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RunLogCorrupt(f"{path}: not valid JSONL ({exc.msg})") from None
        stripped = _strip_volatile(data)
        digest.update(
            json.dumps(stripped, sort_keys=True, separators=(",", ":")).encode("utf-8")
        )
        digest.update(b"\n")
    return digest.hexdigest()


def apply_emphasis(design: StructuredDesign, step: float = BETA_STEP) -> StructuredDesign:
    """Fold emphasis marks into guidance scales and clear the marks."""
    if not design.emphasis:
        return design
    scales = dict(design.guidance_scales)
    for oid in design.emphasis:
        if oid not in scales:
            raise UnknownId(f"emphasis names id {oid}, not in design")
        scales[oid] = bump_scale(scales[oid], 1, step)
    return dataclasses.replace(design, guidance_scales=scales, emphasis=())


def should_exit(
    report: VerificationReport, iteration: int, config: PipelineConfig
) -> ExitStatus | None:
    """Aligned wins; the iteration cap exits otherwise; else continue."""
    if report.aligned:
        return ExitStatus.ALIGNED
    if iteration >= config.max_iterations:
        return ExitStatus.MAX_ITERATIONS
    return None


def _clamp_scales_monotone(
    prev: StructuredDesign, new: StructuredDesign, beta_init: float
) -> StructuredDesign:
    """Per-object scales never decrease across a redesign."""
    clamped = {
        oid: max(scale, prev.guidance_scales.get(oid, beta_init))
        for oid, scale in new.guidance_scales.items()
    }
    if clamped == dict(new.guidance_scales):
        return new
    return dataclasses.replace(new, guidance_scales=clamped)


def _flagged_ids(report: VerificationReport, design: StructuredDesign) -> tuple[int, ...]:
    known = set(design.guidance_scales)
    out: list[int] = []
    for issue in report.issues:
        for oid in issue.object_ids:
            mapped = oid if oid in known else (oid - 1000 if oid - 1000 in known else None)
            if mapped is not None and mapped not in out:
                out.append(mapped)
    if not out:
        out = sorted(known)
    return tuple(out)


_PIPELINE_ERRORS = (
    AgentError,
    ChatBackendError,
    GenerationError,
    GuidanceError,
    LayoutError,
    OracleError,
    WorkflowError,
)


def run_pipeline(
    prompt: str,
    config: PipelineConfig,
    suite: AgentSuite,
    generator: Generator,
    *,
    out_dir: str | Path | None = None,
    run_id: str = "run",
    label: str = "",
) -> RunLog:
    """Execute one full refinement run and return its log.

    Domain errors (backend, generator, agents, layout) end the run with
    ``exit=Error`` instead of raising; anything else propagates.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    writer: RunLogWriter | None = None
    log = RunLog(
        prompt=prompt,
        config=config,
        initial_design=None,
        records=[],
        exit_status=None,
        run_id=run_id,
        label=label,
    )

    def finish(status: ExitStatus, reason: str = "") -> RunLog:
        log.exit_status = status
        log.exit_reason = reason
        if writer is not None:
            writer.write_exit(status, len(log.records), reason)
            writer.close()
            log.path = writer.path
        return log

    if out_path is not None:
        writer = RunLogWriter(out_path / "runlog.jsonl")
        writer.write_header(
            prompt,
            config,
            run_id=run_id,
            label=label,
            backend=type(getattr(suite, "backend", suite)).__name__,
            generator=type(generator).__name__,
        )
        if isinstance(suite, ChatAgentSuite):
            suite = dataclasses.replace(
                suite, backend=AuditingBackend(suite.backend, writer.write_chat)
            )

    try:
        design = suite.design(prompt)
    except _PIPELINE_ERRORS as exc:
        return finish(ExitStatus.ERROR, f"design stage failed: {exc}")

    log.initial_design = design
    if writer is not None:
        writer.write_design(design)

    for iteration in range(1, config.max_iterations + 1):
        timings: dict[str, float] = {}
        try:
            t0 = time.perf_counter()
            video = generator.generate(design)
            timings["generate"] = time.perf_counter() - t0

            video_path = ""
            if out_path is not None:
                relative = f"videos/iter_{iteration:02d}.zip"
                save_video(video, out_path / relative)
                video_path = relative

            t0 = time.perf_counter()
            report = suite.verify(video, prompt, design)
            timings["verify"] = time.perf_counter() - t0
        except _PIPELINE_ERRORS as exc:
            return finish(ExitStatus.ERROR, f"iteration {iteration}: {exc}")

        if report.aligned:
            record = IterationRecord(
                index=iteration,
                aligned=True,
                verification_text=report.raw_text,
                issues=report.issues,
                design=design,
                video_hash=video.artifact_hash(),
                video_path=video_path,
                timings=timings,
            )
            log.records.append(record)
            if writer is not None:
                writer.write_iteration(record)
            return finish(ExitStatus.ALIGNED)

        suggestion_text: str | None = None
        route: str | None = None
        correction_text: str | None = None
        degraded = False
        try:
            t0 = time.perf_counter()
            bundle = suite.suggest(video, report)
            suggestion_text = bundle.raw_text
            route = bundle.route.value
            draft = suite.correct(video, bundle, design, report=report)
            correction_text = draft.raw_text
            structured = suite.structure(video, draft, design)
            structured = _clamp_scales_monotone(design, structured, config.beta_init)
            new_design = apply_emphasis(structured, config.beta_step)
            timings["redesign"] = time.perf_counter() - t0
        except ParseFailure:
            # Degrade gracefully: keep the previous layout and raise the
            # scales of every object the verification flagged.
            flagged = _flagged_ids(report, design)
            fallback = dataclasses.replace(design, emphasis=flagged)
            new_design = apply_emphasis(fallback, config.beta_step)
            degraded = True
            timings["redesign"] = time.perf_counter() - t0
        except _PIPELINE_ERRORS as exc:
            return finish(ExitStatus.ERROR, f"iteration {iteration}: {exc}")

        record = IterationRecord(
            index=iteration,
            aligned=False,
            verification_text=report.raw_text,
            issues=report.issues,
            design=new_design,
            suggestion_text=suggestion_text,
            route=route,
            correction_text=correction_text,
            diff=diff_designs(design, new_design),
            video_hash=video.artifact_hash(),
            video_path=video_path,
            degraded=degraded,
            timings=timings,
        )
        log.records.append(record)
        if writer is not None:
            writer.write_iteration(record)
        design = new_design

    return finish(ExitStatus.MAX_ITERATIONS)


@dataclass(frozen=True)
class BatchJob:
    """One batch entry: a prompt plus factories for fresh suite/generator state."""

    name: str
    prompt: str
    suite_factory: Callable[[], AgentSuite]
    generator_factory: Callable[[], Generator]
    label: str = ""


def run_batch(
    jobs: Sequence[BatchJob],
    config: PipelineConfig,
    out_root: str | Path,
    *,
    workers: int = 1,
) -> list[RunLog]:
    """Run independent pipelines, each in its own directory, and a manifest.

    A failing run is isolated: its log closes with ``exit=Error`` and the
    rest of the batch continues.
    """
    if not jobs:
        raise WorkflowError("batch needs at least one job")
    names = [job.name for job in jobs]
    if len(set(names)) != len(names):
        raise WorkflowError(f"duplicate job names in batch: {names}")
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)

    def one(job: BatchJob) -> RunLog:
        run_dir = out_root / job.name
        try:
            return run_pipeline(
                job.prompt,
                config,
                job.suite_factory(),
                job.generator_factory(),
                out_dir=run_dir,
                run_id=job.name,
                label=job.label,
            )
        except Exception as exc:  # noqa: BLE001 - isolation is the contract
            return RunLog(
                prompt=job.prompt,
                config=config,
                initial_design=None,
                records=[],
                exit_status=ExitStatus.ERROR,
                exit_reason=f"unhandled: {exc!r}",
                run_id=job.name,
                label=job.label,
            )

    if workers <= 1:
        logs = [one(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(one, jobs))

    manifest = {
        "runs": [
            {
                "name": job.name,
                "label": job.label,
                "dir": job.name,
                "status": log.exit_status.value if log.exit_status else None,
                "iterations": log.iterations,
                "reason": log.exit_reason,
            }
            for job, log in zip(jobs, logs)
        ]
    }
    manifest_path = out_root / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return logs
