"""conformance_check grades live endpoints fixture by fixture."""
from __future__ import annotations

import base64

import pytest

pytest.importorskip("diffusion_adapter")

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from diffusion_adapter import (
    AdapterConfig,
    SyntheticVideoModel,
    conformance_check,
    load_fixtures,
)
from diffusion_adapter.cli import main


def _stub_app(doctor) -> FastAPI:
    """A service that renders honestly, then lets ``doctor`` corrupt the body."""
    model = SyntheticVideoModel(AdapterConfig())
    app = FastAPI()

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/generate")
    async def generate(body: dict):
        frames = [base64.b64encode(f).decode("ascii") for f in model.generate(body)]
        payload = {
            "frames": frames,
            "frame_count": len(frames),
            "capabilities": model.capabilities,
        }
        return JSONResponse(doctor(payload))

    return app


class TestAgainstRealAdapter:
    def test_all_fixtures_pass(self, adapter_url):
        report = conformance_check(adapter_url)
        assert report.healthy
        assert report.passed
        assert [r.name for r in report.results] == sorted(
            f.name for f in load_fixtures()
        )
        assert all(r.passed for r in report.results)

    def test_capabilities_recorded_per_fixture(self, adapter_url):
        report = conformance_check(adapter_url)
        for result in report.results:
            assert result.capabilities == {
                "layout_guidance": True,
                "per_object_scale": True,
            }

    def test_summary_reads_as_a_report(self, adapter_url):
        summary = conformance_check(adapter_url).summary()
        assert "healthz ok" in summary
        assert summary.count("PASS") == len(load_fixtures())
        assert summary.endswith("3 fixtures: conformant")

    def test_cli_check_exits_zero(self, adapter_url, capsys):
        assert main(["check", "--endpoint", adapter_url]) == 0
        assert "conformant" in capsys.readouterr().out


class TestAgainstBrokenStubs:
    def test_frame_count_mismatch_is_located_with_diff(self, run_server):
        def doctor(payload: dict) -> dict:
            payload["frame_count"] = payload["frame_count"] - 1
            return payload

        with run_server(_stub_app(doctor)) as url:
            report = conformance_check(url)
        assert report.healthy
        assert not report.passed
        for result in report.results:
            assert not result.passed
            joined = "\n".join(result.failures)
            assert "$.frame_count" in joined
            assert "expected" in joined and "got" in joined
        moon = next(r for r in report.results if r.name == "moon_car")
        assert "$.frame_count: expected 65, got 64" in moon.failures

    def test_wrong_frame_size_is_located(self, run_server):
        def doctor(payload: dict) -> dict:
            payload["frames"] = payload["frames"][:1] * len(payload["frames"])
            return payload

        def shrink(body: dict) -> dict:
            body = dict(body)
            body["canvas"] = {"width": 64, "height": 64}
            return body

        # Render at the wrong size by doctoring the request before the model.
        model = SyntheticVideoModel(AdapterConfig())
        app = FastAPI()

        @app.get("/healthz")
        async def healthz():
            return {"status": "ok"}

        @app.post("/generate")
        async def generate(body: dict):
            import base64 as b64

            scaled = shrink(body)
            scaled["keyframes"] = [
                {
                    "frame": kf["frame"],
                    "objects": [
                        {"id": o["id"], "name": o["name"], "box": [0, 0, 8, 8]}
                        for o in kf["objects"]
                    ],
                }
                for kf in body["keyframes"]
            ]
            frames = [b64.b64encode(f).decode("ascii") for f in model.generate(scaled)]
            return JSONResponse({"frames": frames, "frame_count": len(frames)})

        with run_server(app) as url:
            report = conformance_check(url)
        assert not report.passed
        moon = next(r for r in report.results if r.name == "moon_car")
        assert any(
            f.startswith("$.frames[0]: frame is 64x64, expected 512x512")
            for f in moon.failures
        )

    def test_garbage_frames_are_located(self, run_server):
        def doctor(payload: dict) -> dict:
            payload["frames"] = ["AAAA"] + payload["frames"][1:]
            return payload

        with run_server(_stub_app(doctor)) as url:
            report = conformance_check(url)
        moon = next(r for r in report.results if r.name == "moon_car")
        assert "$.frames[0]: not a PNG image" in moon.failures

    def test_schema_breaking_response_is_reported(self, run_server):
        def doctor(payload: dict) -> dict:
            del payload["frame_count"]
            return payload

        with run_server(_stub_app(doctor)) as url:
            report = conformance_check(url)
        moon = next(r for r in report.results if r.name == "moon_car")
        assert not moon.passed
        assert moon.failures[0].startswith("$: ")
        assert "frame_count" in moon.failures[0]

    def test_unreachable_endpoint(self):
        report = conformance_check("http://127.0.0.1:9", timeout=0.5)
        assert not report.healthy
        assert not report.passed
        assert all(not r.passed for r in report.results)

    def test_cli_check_exits_one_on_failure(self, run_server, capsys):
        def doctor(payload: dict) -> dict:
            payload["frame_count"] += 1
            return payload

        with run_server(_stub_app(doctor)) as url:
            assert main(["check", "--endpoint", url]) == 1
        assert "NOT conformant" in capsys.readouterr().out
