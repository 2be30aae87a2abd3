"""Closing the loop: oracle agents against the simulated generator.

No transcripts here. A rule-based agent suite verifies rendered scene
traces against a declarative intent, routes each issue to a correction
expert, and re-emits designs with raised guidance scales. The simulator
misrenders on purpose, one failure per difficulty threshold, and every
failure clears once the object's scale reaches its threshold. Because
scales rise by a fixed step each round, the iteration count is bounded
by round((theta_max - 1.0) / step) + 1; the demo sweeps thresholds and
shows the bound holding.

Run:  python3 demos/03_closed_loop.py
"""
from __future__ import annotations

from sceneloop.generation import SimScenario, SimulatedGenerator
from sceneloop.layout import Canvas
from sceneloop.oracle import (
    IntentSpec,
    OracleAgentSuite,
    RequiredMotion,
    RequiredObject,
)
from sceneloop.workflow import ExitStatus, PipelineConfig, run_pipeline

CANVAS = Canvas(256, 256)
INTENT = IntentSpec(
    objects=(RequiredObject("car", 1),),
    motion=(RequiredMotion("car", "left"),),
    background="moon",
)


def run_once(scenario: SimScenario) -> tuple[ExitStatus, int]:
    log = run_pipeline(
        "a car driving on the moon",
        PipelineConfig(max_iterations=9),
        OracleAgentSuite(INTENT, canvas=CANVAS, total_frames=12),
        SimulatedGenerator(scenario),
        out_dir=None,
    )
    return log.exit_status, len(log.records)


def section(title: str) -> None:
    print(f"\n=== {title} ===")


section("1. one hard scenario, iteration by iteration")
scenario = SimScenario(
    name="demo",
    thetas={"car": 1.15},
    motion_flip={"car": 1.10},
    duplicate=("car",),
)
log = run_pipeline(
    "a car driving on the moon",
    PipelineConfig(max_iterations=9),
    OracleAgentSuite(INTENT, canvas=CANVAS, total_frames=12),
    SimulatedGenerator(scenario),
    out_dir=None,
)
for rec in log.records:
    if rec.aligned:
        print(f"iter {rec.index}: aligned")
    else:
        aspects = sorted({i.aspect for i in rec.issues})
        beta = rec.design.guidance_scales[0]
        print(f"iter {rec.index}: {aspects} -> route {rec.route}, scale now {beta}")
bound = round((scenario.max_threshold - 1.0) / 0.05) + 1
print(f"exit {log.exit_status.name} in {len(log.records)} iterations (bound {bound})")

section("2. threshold sweep vs the convergence bound")
print(f"{'theta':>6} {'bound':>6} {'iters':>6}  exit")
for theta in (1.0, 1.05, 1.10, 1.20, 1.30, 1.40):
    thetas = {} if theta == 1.0 else {"car": theta}
    sc = SimScenario(name=f"theta-{theta}", thetas=thetas)
    status, iters = run_once(sc)
    b = round((sc.max_threshold - 1.0) / 0.05) + 1
    flag = "ok" if iters <= b and status is ExitStatus.ALIGNED else "VIOLATED"
    print(f"{theta:>6} {b:>6} {iters:>6}  {status.name} ({flag})")
    assert status is ExitStatus.ALIGNED and iters <= b
