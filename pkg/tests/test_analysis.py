"""Batch-metric tests: aligned ratios, correction-type counts, CSV output."""
from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneloop.analysis import (
    AnalysisError,
    CORRECTION_KINDS,
    EmptyInput,
    IoFailure,
    collect_logs,
    corrected_ratio,
    correction_counts,
    emit_report,
)
from sceneloop.chat import load_script
from sceneloop.agents import ChatAgentSuite
from sceneloop.generation import SimulatedGenerator
from sceneloop.layout import (
    BoundingBox,
    DesignDiff,
    KeyframeLayout,
    ObjectSpec,
    StructuredDesign,
    diff_designs,
)
from sceneloop.oracle import load_scenario
from sceneloop.workflow import (
    ExitStatus,
    IterationRecord,
    PipelineConfig,
    RunLog,
    RunLogCorrupt,
    run_pipeline,
)

FIXTURES = Path(__file__).parent / "fixtures"


def _design(x: int = 0, scale: float = 1.0, prompt: str = "p") -> StructuredDesign:
    return StructuredDesign(
        keyframes=(KeyframeLayout(1, (ObjectSpec(0, "car", BoundingBox(x, 0, 10, 10)),)),),
        total_frames=1,
        background_keyword="",
        prompt=prompt,
        guidance_scales={0: scale},
    )


def _record(index: int, aligned: bool, diff: DesignDiff | None = None) -> IterationRecord:
    return IterationRecord(
        index=index,
        aligned=aligned,
        verification_text="v",
        issues=(),
        design=_design(),
        suggestion_text=None if aligned else "s",
        route=None if aligned else "Consistency",
        correction_text=None if aligned else "c",
        diff=diff,
        video_hash="h",
        video_path=None,
        degraded=False,
        timings={},
    )


def _log(aligned_at: int | None, total: int, label: str = "a", run_id: str = "r") -> RunLog:
    """A run that aligns at ``aligned_at`` (None = capped after ``total``)."""
    records = []
    for i in range(1, total + 1):
        is_last_aligned = aligned_at is not None and i == aligned_at
        records.append(_record(i, is_last_aligned))
    status = ExitStatus.ALIGNED if aligned_at is not None else ExitStatus.MAX_ITERATIONS
    return RunLog(
        prompt="p",
        config=PipelineConfig(max_iterations=9),
        initial_design=_design(),
        records=records,
        exit_status=status,
        run_id=run_id,
        label=label,
    )


class TestCorrectedRatio:
    def test_counts_only_runs_aligned_by_iteration(self):
        logs = [_log(1, 1), _log(3, 3), _log(None, 9)]
        assert corrected_ratio(logs, 1) == pytest.approx(1 / 3)
        assert corrected_ratio(logs, 2) == pytest.approx(1 / 3)
        assert corrected_ratio(logs, 3) == pytest.approx(2 / 3)
        assert corrected_ratio(logs, 9) == pytest.approx(2 / 3)

    def test_capped_runs_never_count(self):
        logs = [_log(None, 9)]
        assert corrected_ratio(logs, 100) == 0.0

    def test_error_runs_never_count(self):
        log = _log(2, 2)
        log.exit_status = ExitStatus.ERROR
        assert corrected_ratio([log], 9) == 0.0

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyInput):
            corrected_ratio([], 1)

    def test_bad_iteration_rejected(self):
        with pytest.raises(AnalysisError):
            corrected_ratio([_log(1, 1)], 0)

    @settings(max_examples=50, deadline=None)
    @given(
        aligned=st.lists(
            st.one_of(st.none(), st.integers(min_value=1, max_value=9)),
            min_size=1,
            max_size=8,
        )
    )
    def test_ratio_monotone_in_iteration(self, aligned):
        logs = [_log(a, a if a is not None else 9, run_id=str(i)) for i, a in enumerate(aligned)]
        ratios = [corrected_ratio(logs, i) for i in range(1, 10)]
        assert ratios == sorted(ratios)
        assert ratios[-1] == pytest.approx(
            sum(a is not None for a in aligned) / len(aligned)
        )


class TestCorrectionCounts:
    def test_iteration_one_is_all_layout(self):
        diff = None  # first iteration carries no diff
        logs = [_log(1, 1), _log(2, 2), _log(None, 3)]
        counts = correction_counts(logs, 1)
        assert counts == {"layout": 3, "guidance_scale": 0, "prompt": 0}

    def test_later_iterations_use_diff_flags(self):
        d1 = diff_designs(_design(), _design(x=5, scale=1.05, prompt="q"))
        d2 = diff_designs(_design(), _design(scale=1.05))
        log_a = _log(None, 2)
        log_a.records[1] = _record(2, False, diff=d1)
        log_b = _log(None, 2)
        log_b.records[1] = _record(2, False, diff=d2)
        counts = correction_counts([log_a, log_b], 2)
        assert counts == {"layout": 1, "guidance_scale": 2, "prompt": 1}

    def test_runs_without_that_iteration_skipped(self):
        logs = [_log(1, 1)]
        assert correction_counts(logs, 2) == dict.fromkeys(CORRECTION_KINDS, 0)

    def test_replayed_three_object_run_counts_all_kinds(self, tmp_path):
        suite = ChatAgentSuite(backend=load_script(FIXTURES / "rabbit_street_session_full.jsonl"))
        generator = SimulatedGenerator(load_scenario(FIXTURES / "rabbit_street.json"))
        log = run_pipeline(
            "a rabbit police officer directing traffic at a busy street",
            PipelineConfig(max_iterations=2),
            suite,
            generator,
            out_dir=tmp_path,
        )
        counts = correction_counts([log], 2)
        assert counts == {"layout": 1, "guidance_scale": 1, "prompt": 1}


class TestEmitReport:
    def _runs(self, out_root: Path) -> list[Path]:
        scenario = load_scenario(FIXTURES / "moon_car.json")
        from sceneloop.oracle import OracleAgentSuite

        dirs = []
        for idx, cap in enumerate((9, 9, 1)):
            out = out_root / f"run{idx}"
            run_pipeline(
                "a car driving on the moon",
                PipelineConfig(max_iterations=cap),
                OracleAgentSuite(scenario.intent),
                SimulatedGenerator(scenario),
                out_dir=out,
                run_id=f"run{idx}",
                label="moon",
            )
            dirs.append(out)
        return dirs

    def test_emits_expected_files(self, tmp_path):
        logs = collect_logs(self._runs(tmp_path / "logs"))
        outputs = emit_report(logs, tmp_path / "report")
        assert set(outputs) == {"corrected_ratio", "correction_counts", "runs", "summary"}
        for path in outputs.values():
            assert path.exists()

    def test_ratio_csv_shape(self, tmp_path):
        logs = collect_logs(self._runs(tmp_path / "logs"))
        outputs = emit_report(logs, tmp_path / "report")
        lines = outputs["corrected_ratio"].read_text().splitlines()
        header = lines[0].split(",")
        assert header[0] == "iteration"
        assert "moon" in header
        assert len(lines) >= 2

    def test_counts_csv_has_share_columns(self, tmp_path):
        logs = collect_logs(self._runs(tmp_path / "logs"))
        outputs = emit_report(logs, tmp_path / "report")
        header = outputs["correction_counts"].read_text().splitlines()[0].split(",")
        assert header == [
            "iteration",
            "layout",
            "guidance_scale",
            "prompt",
            "layout_pct",
            "guidance_scale_pct",
            "prompt_pct",
        ]

    def test_runs_csv_rows(self, tmp_path):
        logs = collect_logs(self._runs(tmp_path / "logs"))
        outputs = emit_report(logs, tmp_path / "report")
        lines = outputs["runs"].read_text().splitlines()
        assert lines[0] == "label,run_id,status,iterations,aligned_at"
        assert len(lines) == 4

    def test_re_emission_byte_identical(self, tmp_path):
        logs = collect_logs(self._runs(tmp_path / "logs"))
        first = emit_report(logs, tmp_path / "a")
        second = emit_report(logs, tmp_path / "b")
        for key in first:
            assert first[key].read_bytes() == second[key].read_bytes()

    def test_empty_logs_rejected(self, tmp_path):
        with pytest.raises(EmptyInput):
            emit_report([], tmp_path / "report")


class TestCollectLogs:
    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(IoFailure):
            collect_logs([tmp_path / "absent"])

    def test_no_logs_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(EmptyInput):
            collect_logs([tmp_path / "empty"])

    def test_corrupt_log_names_location(self, tmp_path):
        run = tmp_path / "r"
        run.mkdir()
        bad = run / "runlog.jsonl"
        bad.write_text("{broken\n")
        with pytest.raises(RunLogCorrupt, match=r"runlog\.jsonl:1"):
            collect_logs([tmp_path])

    def test_direct_file_path_accepted(self, tmp_path):
        scenario = load_scenario(FIXTURES / "moon_car.json")
        from sceneloop.oracle import OracleAgentSuite

        log = run_pipeline(
            "a car",
            PipelineConfig(max_iterations=9),
            OracleAgentSuite(scenario.intent),
            SimulatedGenerator(scenario),
            out_dir=tmp_path,
        )
        loaded = collect_logs([log.path])
        assert len(loaded) == 1
