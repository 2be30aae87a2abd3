"""Replaying a recorded agent transcript through the full loop.

A scripted chat backend feeds the pipeline verbatim replies from a
recorded session: one design, then a verification that flags a missing
car, a suggestion routed to the consistency expert, a correction, a
restructured design with the car's guidance scale raised, and finally a
clean verification. The loop aligns on iteration 2 and the demo walks
the run log it left behind: per-iteration records, what changed between
designs, the per-object guidance-scale trace, and the determinism hash.

Run:  python3 demos/02_scripted_replay.py
"""
from __future__ import annotations

import tempfile
from pathlib import Path

from sceneloop.agents import ChatAgentSuite
from sceneloop.chat import load_script
from sceneloop.generation import SimulatedGenerator
from sceneloop.oracle import load_scenario
from sceneloop.workflow import PipelineConfig, determinism_hash, load_runlog, run_pipeline

REPO = Path(__file__).resolve().parents[1]
SCRIPT = REPO / "tests" / "fixtures" / "moon_car_session.jsonl"
SCENARIO = REPO / "tests" / "fixtures" / "moon_car.json"


def section(title: str) -> None:
    print(f"\n=== {title} ===")


with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "replay"
    suite = ChatAgentSuite(backend=load_script(SCRIPT))
    log = run_pipeline(
        "a car driving on the moon",
        PipelineConfig(max_iterations=9),
        suite,
        SimulatedGenerator(load_scenario(SCENARIO)),
        out_dir=out,
        run_id="replay-demo",
    )

    section("1. how the run ended")
    print(f"exit: {log.exit_status.name} after {len(log.records)} iterations")
    print(f"script fully consumed: {suite.backend.remaining == 0}")

    section("2. per-iteration records")
    for rec in log.records:
        if rec.aligned:
            print(f"iter {rec.index}: aligned, no correction round")
            continue
        issues = ", ".join(f"{i.aspect}{list(i.object_ids)}" for i in rec.issues)
        print(f"iter {rec.index}: issues [{issues}] -> route {rec.route}")
        print(f"         design changed in: {sorted(rec.diff.flags())}")

    section("3. guidance-scale trace")
    for rec in log.records:
        scales = {k: v for k, v in sorted(rec.design.guidance_scales.items())}
        print(f"after iter {rec.index}: {scales}")

    section("4. artifacts on disk")
    for path in sorted(out.rglob("*")):
        if path.is_file():
            print(f"  {path.relative_to(out)}")

    reloaded = load_runlog(out / "runlog.jsonl")
    reloaded.check_invariants()
    print(f"\nreloaded log matches: aligned_at={reloaded.aligned_at()}, "
          f"determinism hash {determinism_hash(out / 'runlog.jsonl')[:16]}...")
