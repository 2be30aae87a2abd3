"""The primary engine's remote client drives the adapter over the wire alone."""
from __future__ import annotations

from pathlib import Path

import pytest

pytest.importorskip("diffusion_adapter")
pytest.importorskip("sceneloop")

import diffusion_adapter
from diffusion_adapter import load_fixtures

from sceneloop.generation import DesignRejected, ProtocolViolation, RemoteGenerator
from sceneloop.layout import design_from_dict

MOON = next(f for f in load_fixtures() if f.name == "moon_car")


class TestRemoteGeneratorAgainstAdapter:
    def test_healthy(self, adapter_url):
        assert RemoteGenerator(adapter_url).healthy() is True

    def test_generate_round_trip(self, adapter_url):
        design = design_from_dict(MOON.request)
        artifact = RemoteGenerator(adapter_url).generate(design)
        assert len(artifact.frames) == 65
        assert (artifact.width, artifact.height) == (512, 512)
        assert artifact.scene_trace is None
        assert artifact.provenance["capabilities"] == {
            "layout_guidance": True,
            "per_object_scale": True,
        }

    def test_generate_is_deterministic_across_calls(self, adapter_url):
        design = design_from_dict(MOON.request)
        client = RemoteGenerator(adapter_url)
        assert client.generate(design).frames == client.generate(design).frames

    def test_rejection_surfaces_with_path(self, adapter_url):
        request = dict(MOON.request)
        request["total_frames"] = 60  # last keyframe now beyond the video
        design = design_from_dict(request)
        with pytest.raises(DesignRejected, match=r"\$\.keyframes\[5\]\.frame"):
            RemoteGenerator(adapter_url).generate(design)

    def test_protocol_violation_detected_by_client(self, run_server):
        import base64

        from fastapi import FastAPI

        from diffusion_adapter import AdapterConfig, SyntheticVideoModel

        model = SyntheticVideoModel(AdapterConfig())
        app = FastAPI()

        @app.get("/healthz")
        async def healthz():
            return {"status": "ok"}

        @app.post("/generate")
        async def generate(body: dict):
            frames = [base64.b64encode(f).decode("ascii") for f in model.generate(body)]
            return {"frames": frames[:-1], "frame_count": len(frames) - 1}

        design = design_from_dict(MOON.request)
        with run_server(app) as url:
            with pytest.raises(ProtocolViolation, match=r"\$\.frame_count"):
                RemoteGenerator(url).generate(design)


class TestIsolation:
    def test_adapter_never_imports_the_primary(self):
        package_root = Path(diffusion_adapter.__file__).parent
        for source in sorted(package_root.rglob("*.py")):
            assert "sceneloop" not in source.read_text(encoding="utf-8"), source

    def test_primary_never_imports_the_adapter(self):
        import sceneloop

        package_root = Path(sceneloop.__file__).parent
        for source in sorted(package_root.rglob("*.py")):
            assert "diffusion_adapter" not in source.read_text(encoding="utf-8"), source

    def test_packaged_schemas_match_published_ones(self):
        package_root = Path(diffusion_adapter.__file__).parent
        docs = Path(__file__).resolve().parents[2] / "docs"
        for name in ("design.schema.json", "response.schema.json"):
            packaged = (package_root / "schemas" / name).read_text(encoding="utf-8")
            published = (docs / name).read_text(encoding="utf-8")
            assert packaged == published, name
