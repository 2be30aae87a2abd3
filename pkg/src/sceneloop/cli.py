"""Command-line entry point: run, batch, sandbox, and analyze.

Exit codes: 0 when the command completed (including runs that hit the
iteration cap), 1 for usage or configuration mistakes, 2 for runtime
failures (a run that exited with an error, an unreachable service, a
corrupt log).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .analysis import AnalysisError, EmptyInput, collect_logs, emit_report
from .agents import ChatAgentSuite
from .chat import HttpChatBackend, load_script
from .config import AppConfig, ConfigInvalid, load_config
from .generation import RemoteGenerator, SimulatedGenerator
from .guidance import (
    GuidanceSchedule,
    ToyAttentionModel,
    build_mask,
    latent_step,
    run_guidance_window,
    trajectory_csv,
)
from .layout import BoundingBox, Canvas
from .oracle import IntentSpec, OracleAgentSuite, load_scenario
from .workflow import (
    BatchJob,
    ExitStatus,
    RunLog,
    WorkflowError,
    run_batch,
    run_pipeline,
)

__all__ = ["main"]

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class ManifestInvalid(ConfigInvalid):
    """The batch manifest is missing, empty, or malformed."""


class _Parser(argparse.ArgumentParser):
    # usage mistakes exit with code 1, not argparse's default 2
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sceneloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--backend", choices=["http", "scripted", "oracle"])
        p.add_argument("--script", help="JSONL reply script for the scripted backend")
        p.add_argument("--generator", choices=["sim", "remote"])
        p.add_argument("--scenario", help="scenario JSON for the simulator")
        p.add_argument("--intent", help="intent JSON for the rule-based agents")
        p.add_argument("--endpoint", help="remote generator URL")
        p.add_argument("--max-iters", type=int, dest="max_iters")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    run = sub.add_parser("run", help="one prompt through the refinement loop")
    run.add_argument("--prompt", required=True)
    shared(run)

    batch = sub.add_parser("batch", help="many prompts, isolated run directories")
    batch.add_argument("--manifest", required=True, help="JSON list of run entries")
    batch.add_argument("--workers", type=int, default=None)
    shared(batch)

    sandbox = sub.add_parser(
        "sandbox", help="guided-descent playground: energy trajectories + grad check"
    )
    sandbox.add_argument("--seeds", type=int, default=5)
    sandbox.add_argument("--steps", type=int, default=20)
    sandbox.add_argument("--alpha", type=float, default=1e-2)
    sandbox.add_argument("--resolution", type=int, default=16)
    sandbox.add_argument("--out", default="sandbox")

    analyze = sub.add_parser("analyze", help="metrics CSVs from run-log directories")
    analyze.add_argument("log_dirs", nargs="+", help="directories holding runlog.jsonl files")
    analyze.add_argument("--out", default="report")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "backend": getattr(args, "backend", None),
        "script": getattr(args, "script", None),
        "generator": getattr(args, "generator", None),
        "scenario": getattr(args, "scenario", None),
        "generator_endpoint": getattr(args, "endpoint", None),
        "max_iterations": getattr(args, "max_iters", None),
        "seed": getattr(args, "seed", None),
        "out": getattr(args, "out", None),
        "workers": getattr(args, "workers", None),
    }


def _load_intent(config: AppConfig, intent_path: str | None) -> IntentSpec | None:
    if intent_path:
        data = json.loads(Path(intent_path).read_text(encoding="utf-8"))
        return IntentSpec.from_dict(data)
    if config.scenario:
        scenario = load_scenario(config.scenario)
        return scenario.intent
    return None


def _make_suite_factory(
    config: AppConfig, intent_path: str | None
) -> Callable[[], Any]:
    """A factory returning a fresh agent suite per run (fresh script cursors)."""
    if config.backend == "scripted":
        if not config.script:
            raise ConfigInvalid("chat.script: the scripted backend needs --script")
        if not Path(config.script).is_file():
            raise ConfigInvalid(f"chat.script: script file not found: {config.script}")
        script_path = config.script

        def factory() -> ChatAgentSuite:
            return ChatAgentSuite(backend=load_script(script_path), model=config.model)

        return factory
    if config.backend == "http":
        credential = config.require_credential()
        if not config.chat_endpoint:
            raise ConfigInvalid("chat.endpoint: the http backend needs an endpoint URL")

        def factory() -> ChatAgentSuite:
            return ChatAgentSuite(
                backend=HttpChatBackend(config.chat_endpoint, credential=credential),
                model=config.model,
            )

        return factory
    intent = _load_intent(config, intent_path)
    if intent is None:
        raise ConfigInvalid(
            "generator.scenario: the oracle backend needs --scenario or --intent "
            "with a machine-checkable intent"
        )

    def factory() -> OracleAgentSuite:
        return OracleAgentSuite(intent=intent)

    return factory


def _make_generator_factory(config: AppConfig) -> Callable[[], Any]:
    if config.generator == "remote":
        if not config.generator_endpoint:
            raise ConfigInvalid("generator.endpoint: the remote generator needs --endpoint")
        return lambda: RemoteGenerator(config.generator_endpoint)
    if not config.scenario:
        raise ConfigInvalid("generator.scenario: the simulator needs --scenario")
    scenario = load_scenario(config.scenario)
    return lambda: SimulatedGenerator(scenario)


def _print_run(log: RunLog) -> None:
    for record in log.records:
        if record.aligned:
            print(f"iteration {record.index}: aligned")
            continue
        aspects = sorted({issue.aspect for issue in record.issues})
        route = record.route or "-"
        flags = ",".join(sorted(record.diff_flags())) or "-"
        print(
            f"iteration {record.index}: issues [{', '.join(aspects)}] "
            f"-> route {route}, changed [{flags}]"
        )
    status = log.exit_status.value if log.exit_status else "Incomplete"
    line = f"exit: {status} after {log.iterations} iteration(s)"
    if log.exit_reason:
        line += f" ({log.exit_reason})"
    print(line)


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    suite = _make_suite_factory(config, args.intent)()
    generator = _make_generator_factory(config)()
    out_dir = Path(config.out) / "run"
    log = run_pipeline(
        args.prompt, config.pipeline, suite, generator, out_dir=out_dir, run_id="run"
    )
    print(f"run directory: {out_dir}")
    _print_run(log)
    return RUNTIME_EXIT if log.exit_status is ExitStatus.ERROR else 0


def _cmd_batch(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    manifest_path = Path(args.manifest)
    if not manifest_path.is_file():
        raise ManifestInvalid(f"manifest not found: {manifest_path}")
    try:
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestInvalid(f"{manifest_path}: not valid JSON: {exc}") from None
    if not isinstance(entries, list) or not entries:
        raise ManifestInvalid(f"{manifest_path}: expected a non-empty JSON list")

    jobs = []
    for position, entry in enumerate(entries):
        if not isinstance(entry, dict) or "prompt" not in entry:
            raise ManifestInvalid(
                f"{manifest_path}: entry {position} needs at least a 'prompt'"
            )
        overrides = _overrides(args)
        for key in ("backend", "script", "generator", "scenario"):
            if entry.get(key) is not None:
                overrides[key] = entry[key]
        entry_config = load_config(args.config, overrides)
        name = str(entry.get("name", f"run_{position:03d}"))
        jobs.append(
            BatchJob(
                name=name,
                prompt=str(entry["prompt"]),
                suite_factory=_make_suite_factory(entry_config, entry.get("intent")),
                generator_factory=_make_generator_factory(entry_config),
                label=str(entry.get("label", "")),
            )
        )
    logs = run_batch(jobs, config.pipeline, config.out, workers=config.workers)
    for job, log in zip(jobs, logs):
        status = log.exit_status.value if log.exit_status else "Incomplete"
        print(f"{job.name}: {status} after {log.iterations} iteration(s)")
    print(f"manifest: {Path(config.out) / 'manifest.json'}")
    return 0


def _cmd_sandbox(args: argparse.Namespace) -> int:
    if args.seeds < 1 or args.steps < 1 or args.resolution < 2:
        raise ConfigInvalid("sandbox: --seeds/--steps >= 1 and --resolution >= 2")
    if args.alpha < 0:
        raise ConfigInvalid(f"sandbox: --alpha must be >= 0, got {args.alpha}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolution = args.resolution
    canvas = Canvas(512, 512)
    box = BoundingBox(128, 128, 256, 256)
    mask = build_mask(box, canvas, resolution)

    descended = 0
    grad_ok = 0
    for seed in range(args.seeds):
        model = ToyAttentionModel.seeded(1, resolution, latent_dim=8, seed=seed)
        rng = np.random.default_rng(seed)
        z0 = rng.normal(size=8)

        if args.alpha > 0:
            schedule = GuidanceSchedule(
                alpha=args.alpha, t_start=args.steps, t_end=1
            )
            trajectory = run_guidance_window(z0, model, [mask], [1.0], schedule)
        else:
            # zero step size: replay the window manually, energies constant
            from .guidance import GuidanceTrajectory

            z = np.asarray(z0, dtype=np.float64)
            energies = []
            timesteps = list(range(args.steps, 0, -1))
            latents = [z]
            for _ in timesteps:
                energies.append(model.energy_and_grad(z, [mask], [1.0])[0])
                z = latent_step(z, model, [mask], [1.0], 0.0)
                latents.append(z)
            energies.append(model.energy_and_grad(z, [mask], [1.0])[0])
            trajectory = GuidanceTrajectory(
                latents=tuple(latents),
                energies=tuple(energies),
                timesteps=tuple(timesteps),
            )
        (out / f"trajectory_seed{seed}.csv").write_text(
            trajectory_csv(trajectory), encoding="utf-8"
        )
        if trajectory.energies[-1] <= trajectory.energies[0] + 1e-12:
            descended += 1

        # central-difference check of the analytic latent gradient
        _, grad = model.energy_and_grad(z0, [mask], [1.0])
        h = 1e-5
        fd = np.zeros_like(z0)
        for i in range(z0.size):
            zp, zm = z0.copy(), z0.copy()
            zp[i] += h
            zm[i] -= h
            fd[i] = (
                model.energy_and_grad(zp, [mask], [1.0])[0]
                - model.energy_and_grad(zm, [mask], [1.0])[0]
            ) / (2 * h)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-8)
        if rel <= 1e-4:
            grad_ok += 1

    report = (
        f"seeds: {args.seeds}\n"
        f"steps per trajectory: {args.steps}\n"
        f"alpha: {args.alpha!r}\n"
        f"non-increasing trajectories: {descended}/{args.seeds}\n"
        f"gradient checks passed (rel err <= 1e-4): {grad_ok}/{args.seeds}\n"
    )
    (out / "gradient_check.txt").write_text(report, encoding="utf-8")
    print(report, end="")
    return 0 if grad_ok == args.seeds else RUNTIME_EXIT


def _cmd_analyze(args: argparse.Namespace) -> int:
    logs = collect_logs(args.log_dirs)
    paths = emit_report(logs, args.out)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits for --help (0) and usage errors (1); callers get a code
        return int(exc.code or 0)
    handlers = {
        "run": _cmd_run,
        "batch": _cmd_batch,
        "sandbox": _cmd_sandbox,
        "analyze": _cmd_analyze,
    }
    try:
        return handlers[args.command](args)
    except (ConfigInvalid, EmptyInput) as exc:
        print(f"sceneloop: config error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (WorkflowError, AnalysisError, OSError) as exc:
        print(f"sceneloop: error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
