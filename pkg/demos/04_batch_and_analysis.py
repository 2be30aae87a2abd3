"""Batch execution and aggregate analysis.

Runs a labeled batch of closed-loop jobs at two difficulty levels, then
aggregates the run logs the way the reporting CLI does: the cumulative
corrected ratio per iteration, the breakdown of what later corrections
actually changed (layout, guidance scale, prompt), and the CSV/summary
bundle emit_report writes for plotting.

Run:  python3 demos/04_batch_and_analysis.py
"""
from __future__ import annotations

import tempfile
from pathlib import Path

from sceneloop.analysis import (
    CORRECTION_KINDS,
    collect_logs,
    corrected_ratio,
    correction_counts,
    emit_report,
)
from sceneloop.generation import SimScenario, SimulatedGenerator
from sceneloop.layout import Canvas
from sceneloop.oracle import IntentSpec, OracleAgentSuite, RequiredMotion, RequiredObject
from sceneloop.workflow import BatchJob, PipelineConfig, run_batch

CANVAS = Canvas(256, 256)


def job(name: str, label: str, theta: float, flip: float | None) -> BatchJob:
    intent = IntentSpec(
        objects=(RequiredObject("car", 1),),
        motion=(RequiredMotion("car", "left"),),
        background="moon",
    )
    scenario = SimScenario(
        name=name,
        thetas={"car": theta} if theta > 1.0 else {},
        motion_flip={"car": flip} if flip else {},
    )
    return BatchJob(
        name=name,
        prompt="a car driving on the moon",
        suite_factory=lambda: OracleAgentSuite(intent, canvas=CANVAS, total_frames=12),
        generator_factory=lambda: SimulatedGenerator(scenario),
        label=label,
    )


def section(title: str) -> None:
    print(f"\n=== {title} ===")


jobs = [
    job("easy-1", "easy", 1.05, None),
    job("easy-2", "easy", 1.10, None),
    job("hard-1", "hard", 1.25, 1.15),
    job("hard-2", "hard", 1.40, None),
]

with tempfile.TemporaryDirectory() as tmp:
    out_root = Path(tmp) / "batch"
    logs = run_batch(jobs, PipelineConfig(max_iterations=9), out_root, workers=2)

    section("1. batch results")
    for log in logs:
        print(f"{log.run_id:<8} [{log.label}] "
              f"{log.exit_status.name} at iteration {log.aligned_at()}")
    print(f"manifest: {out_root / 'manifest.json'}")

    section("2. corrected ratio per iteration")
    collected = collect_logs([out_root])
    for i in range(1, 10):
        ratio = corrected_ratio(collected, i)
        bar = "#" * int(ratio * 24)
        print(f"iter {i}: {ratio:5.2f} {bar}")

    section("3. what corrections changed")
    for i in (1, 2, 3):
        counts = correction_counts(collected, i)
        shown = {k: counts[k] for k in CORRECTION_KINDS}
        print(f"iteration {i}: {shown}")

    section("4. report bundle")
    paths = emit_report(collected, Path(tmp) / "report")
    for kind, path in sorted(paths.items()):
        print(f"\n--- {path.name} ---")
        body = path.read_text().splitlines()
        for line in body[:6]:
            print(f"  {line}")
        if len(body) > 6:
            print(f"  ... ({len(body) - 6} more lines)")
