"""Loop metrics over run logs: corrected ratios and correction-type counts.

``corrected_ratio`` measures how much of a batch has exited aligned by a
given iteration.  ``correction_counts`` tallies which design fields each
iteration's redesign touched (layout, guidance scale, prompt), with the
whole first iteration attributed to layout because the initial plan is
purely a layout artifact.  ``emit_report`` renders both as stable CSV
tables plus a per-run summary.

CSV schemas (all values deterministic given the same logs):

* ``corrected_ratio.csv``: ``iteration`` then one column per run label,
  each cell the cumulative aligned fraction for that subset.
* ``correction_counts.csv``: ``iteration,layout,guidance_scale,prompt``
  counts followed by ``layout_pct,guidance_scale_pct,prompt_pct``, the
  share of that iteration's corrections per type (0 when no corrections).
* ``runs.csv``: ``label,run_id,status,iterations,aligned_at`` sorted by
  label then run id.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

from .workflow import ExitStatus, RunLog, load_runlog

__all__ = [
    "AnalysisError",
    "CORRECTION_KINDS",
    "EmptyInput",
    "IoFailure",
    "collect_logs",
    "corrected_ratio",
    "correction_counts",
    "emit_report",
]

CORRECTION_KINDS = ("layout", "guidance_scale", "prompt")


class AnalysisError(RuntimeError):
    """Base class for analysis failures."""


class EmptyInput(AnalysisError):
    """No run logs to analyze."""


class IoFailure(AnalysisError):
    """Reading logs or writing report files failed."""


def corrected_ratio(logs: Sequence[RunLog], iteration: int) -> float:
    """Fraction of runs that exited aligned at or before ``iteration``.

    Runs that ended at the iteration cap or in error never count, no
    matter how large ``iteration`` grows.
    """
    if not logs:
        raise EmptyInput("corrected_ratio needs at least one run log")
    if iteration < 1:
        raise AnalysisError(f"iteration must be >= 1, got {iteration}")
    aligned = 0
    for log in logs:
        at = log.aligned_at()
        if at is not None and at <= iteration:
            aligned += 1
    return aligned / len(logs)


def correction_counts(logs: Sequence[RunLog], iteration: int) -> dict[str, int]:
    """How many runs' redesign at ``iteration`` touched each design field.

    Iteration 1 is attributed entirely to layout: the initial planning
    stage only supplies a structured layout, so every run with a first
    iteration counts once under ``layout`` and nowhere else.  From
    iteration 2 on, a run counts under every field its recorded diff
    flags, so one run may contribute to several columns.
    """
    if iteration < 1:
        raise AnalysisError(f"iteration must be >= 1, got {iteration}")
    counts = dict.fromkeys(CORRECTION_KINDS, 0)
    for log in logs:
        record = next((r for r in log.records if r.index == iteration), None)
        if record is None:
            continue
        if iteration == 1:
            counts["layout"] += 1
            continue
        for kind in record.diff_flags():
            counts[kind] += 1
    return counts


def _horizon(logs: Sequence[RunLog]) -> int:
    return max(log.config.max_iterations for log in logs)


def _subsets(logs: Sequence[RunLog]) -> dict[str, list[RunLog]]:
    grouped: dict[str, list[RunLog]] = {}
    for log in logs:
        grouped.setdefault(log.label or "all", []).append(log)
    return dict(sorted(grouped.items()))


def _ratio_table(logs: Sequence[RunLog]) -> str:
    grouped = _subsets(logs)
    horizon = _horizon(logs)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["iteration", *grouped.keys()])
    for i in range(1, horizon + 1):
        writer.writerow(
            [i, *(repr(corrected_ratio(subset, i)) for subset in grouped.values())]
        )
    return buffer.getvalue()


def _counts_table(logs: Sequence[RunLog]) -> str:
    horizon = _horizon(logs)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["iteration", *CORRECTION_KINDS, *(f"{kind}_pct" for kind in CORRECTION_KINDS)]
    )
    for i in range(1, horizon + 1):
        counts = correction_counts(logs, i)
        total = sum(counts.values())
        shares = [
            f"{100.0 * counts[kind] / total:.2f}" if total else "0.00"
            for kind in CORRECTION_KINDS
        ]
        writer.writerow([i, *(counts[kind] for kind in CORRECTION_KINDS), *shares])
    return buffer.getvalue()


def _runs_table(logs: Sequence[RunLog]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["label", "run_id", "status", "iterations", "aligned_at"])
    rows = sorted(logs, key=lambda log: (log.label, log.run_id))
    for log in rows:
        status = log.exit_status.value if log.exit_status else "Incomplete"
        at = log.aligned_at()
        writer.writerow(
            [log.label or "all", log.run_id, status, log.iterations, "" if at is None else at]
        )
    return buffer.getvalue()


def _summary_text(logs: Sequence[RunLog]) -> str:
    horizon = _horizon(logs)
    aligned = sum(1 for log in logs if log.exit_status is ExitStatus.ALIGNED)
    capped = sum(1 for log in logs if log.exit_status is ExitStatus.MAX_ITERATIONS)
    errored = sum(1 for log in logs if log.exit_status is ExitStatus.ERROR)
    lines = [
        f"runs: {len(logs)}",
        f"aligned: {aligned}",
        f"max_iterations: {capped}",
        f"error: {errored}",
        f"final corrected ratio (iteration {horizon}): "
        f"{corrected_ratio(logs, horizon)!r}",
    ]
    return "\n".join(lines) + "\n"


def emit_report(logs: Sequence[RunLog], out_dir: str | Path) -> dict[str, Path]:
    """Write the ratio, counts and per-run CSVs plus a text summary.

    Returns the written paths keyed by artifact name.  Re-running over the
    same logs produces byte-identical files.
    """
    if not logs:
        raise EmptyInput("emit_report needs at least one run log")
    out = Path(out_dir)
    artifacts = {
        "corrected_ratio": (out / "corrected_ratio.csv", _ratio_table(logs)),
        "correction_counts": (out / "correction_counts.csv", _counts_table(logs)),
        "runs": (out / "runs.csv", _runs_table(logs)),
        "summary": (out / "summary.txt", _summary_text(logs)),
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        for path, payload in artifacts.values():
            path.write_text(payload, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out}: {exc}") from exc
    return {name: path for name, (path, _) in artifacts.items()}


def collect_logs(directories: Iterable[str | Path]) -> list[RunLog]:
    """Load every ``runlog.jsonl`` found under the given directories.

    Paths are searched recursively and loaded in sorted order so repeated
    invocations see the same sequence.
    """
    paths: list[Path] = []
    for directory in directories:
        root = Path(directory)
        if not root.exists():
            raise IoFailure(f"log directory does not exist: {root}")
        if root.is_file():
            paths.append(root)
            continue
        paths.extend(sorted(root.rglob("runlog.jsonl")))
    if not paths:
        raise EmptyInput("no runlog.jsonl files found")
    return [load_runlog(path) for path in paths]
