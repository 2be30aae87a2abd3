"""Video generators: a deterministic simulator and an HTTP client for real backends.

The simulator renders each frame as flat-colored rectangles over a
background fill, both colored by stable name hashes, and emits a symbolic
``scene_trace`` recording what was actually drawn where.  Its failure model
makes closed-loop refinement testable without any real model:

* presence: an object is rendered only once its guidance scale reaches the
  scenario's per-name difficulty threshold;
* count inflation: a flagged object appears twice while its scale is still
  at the initial value, once per frame otherwise;
* motion flip: a flagged object traverses its keyframe path in reverse
  frame order until its scale reaches the flip threshold.

Every failure clears monotonically as scales rise, so a corrective loop
that keeps raising scales converges in a number of iterations bounded by
the largest threshold.

The remote client speaks the generator wire protocol: ``POST /generate``
with the canonical design JSON, expecting ``{"frames": [base64 PNG, ...],
"frame_count": N}``, plus ``GET /healthz``.  Remote artifacts carry no
scene trace.
"""
from __future__ import annotations

import base64
import binascii
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from PIL import Image

import httpx

from .guidance import BETA_INIT
from .layout import (
    Canvas,
    ObjectSpec,
    StructuredDesign,
    canonical_json,
    design_to_dict,
    interpolate_layout,
)

__all__ = [
    "DesignRejected",
    "GenerationError",
    "GeneratorUnavailable",
    "ProtocolViolation",
    "RemoteGenerator",
    "SimScenario",
    "SimulatedGenerator",
    "TraceObject",
    "VideoArtifact",
    "decode_png",
    "design_hash",
    "encode_png",
    "load_scenario_dict",
    "load_video",
    "render_frame",
    "save_video",
]


class GenerationError(RuntimeError):
    """Base class for generator failures."""


class GeneratorUnavailable(GenerationError):
    """Endpoint unreachable, timed out, or answered with a server error."""


class DesignRejected(GenerationError):
    """The backend refused the design; carries the backend's reason."""


class ProtocolViolation(GenerationError):
    """Response violates the wire protocol; ``path`` locates the offense."""

    def __init__(self, message: str, path: str = "$") -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


def design_hash(design: StructuredDesign) -> str:
    return hashlib.sha256(canonical_json(design_to_dict(design)).encode()).hexdigest()


def _name_color(name: str) -> tuple[int, int, int]:
    digest = hashlib.sha256(name.encode()).digest()
    # keep object colors bright enough to contrast with any background
    return tuple(64 + b % 192 for b in digest[:3])  # type: ignore[return-value]


def _background_color(keyword: str) -> tuple[int, int, int]:
    digest = hashlib.sha256(("bg:" + keyword).encode()).digest()
    return tuple(b % 64 for b in digest[:3])  # type: ignore[return-value]


# 3x5 digit bitmaps for id labels, row-major strings
_DIGITS = {
    "0": "111101101101111",
    "1": "010110010010111",
    "2": "111001111100111",
    "3": "111001111001111",
    "4": "101101111001001",
    "5": "111100111001111",
    "6": "111100111101111",
    "7": "111001001001001",
    "8": "111101111101111",
    "9": "111101111001111",
}


def _draw_label(frame: np.ndarray, text: str, x: int, y: int, scale: int = 3) -> None:
    h, w, _ = frame.shape
    cursor = x
    for ch in text:
        bits = _DIGITS.get(ch)
        if bits is None:
            continue
        for row in range(5):
            for col in range(3):
                if bits[row * 3 + col] == "1":
                    y0, x0 = y + row * scale, cursor + col * scale
                    frame[
                        max(0, y0) : min(h, y0 + scale), max(0, x0) : min(w, x0 + scale)
                    ] = 255
        cursor += 4 * scale


def render_frame(
    objects: Sequence[ObjectSpec], canvas: Canvas, background_keyword: str = ""
) -> np.ndarray:
    """One RGB frame: hashed background fill, one filled rectangle per object.

    Pure and deterministic; identical inputs give byte-identical rasters.
    """
    frame = np.empty((canvas.height, canvas.width, 3), dtype=np.uint8)
    frame[:, :] = _background_color(background_keyword)
    for obj in objects:
        if not obj.box.within(canvas):
            raise GenerationError(f"object {obj.id} box {obj.box.as_list()} exceeds canvas")
        b = obj.box
        frame[b.y : b.y + b.h, b.x : b.x + b.w] = _name_color(obj.name)
        _draw_label(frame, str(obj.id), b.x + 2, b.y + 2)
    return frame


def encode_png(frame: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(frame, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


@dataclass(frozen=True)
class TraceObject:
    """What the simulator did with one object instance in one frame."""

    id: int
    name: str
    box: tuple[int, int, int, int]
    present: bool
    attributes: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "box": list(self.box),
            "present": self.present,
            "attributes": dict(self.attributes),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TraceObject":
        return cls(
            id=int(data["id"]),
            name=str(data["name"]),
            box=tuple(int(v) for v in data["box"]),  # type: ignore[arg-type]
            present=bool(data["present"]),
            attributes={str(k): str(v) for k, v in data.get("attributes", {}).items()},
        )


@dataclass(frozen=True)
class VideoArtifact:
    """Generated frames plus provenance; simulator artifacts add a scene trace."""

    frames: tuple[bytes, ...]  # PNG-encoded, canvas-sized RGB
    width: int
    height: int
    scene_trace: tuple[tuple[TraceObject, ...], ...] | None
    provenance: dict[str, Any]

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def frame_array(self, index: int) -> np.ndarray:
        return decode_png(self.frames[index])

    def trace_jsonable(self) -> list[list[dict[str, Any]]] | None:
        if self.scene_trace is None:
            return None
        return [[obj.to_dict() for obj in frame] for frame in self.scene_trace]

    def artifact_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(json.dumps(self.provenance, sort_keys=True).encode())
        for png in self.frames:
            digest.update(png)
        trace = self.trace_jsonable()
        if trace is not None:
            digest.update(canonical_json(trace).encode())
        return digest.hexdigest()

    def sample_frames(self, limit: int = 6) -> list[bytes]:
        """Up to ``limit`` evenly spaced frames, always including the first and last."""
        n = self.frame_count
        if n <= limit:
            return list(self.frames)
        positions = np.linspace(0, n - 1, limit)
        return [self.frames[int(round(p))] for p in positions]


# Fixed archive timestamp so equal artifacts produce byte-identical files.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_video(video: VideoArtifact, path: str | Path) -> None:
    """Persist an artifact as a zip of frame PNGs plus metadata."""
    import zipfile

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "width": video.width,
        "height": video.height,
        "frame_count": video.frame_count,
        "provenance": video.provenance,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as archive:

        def put(name: str, payload: bytes) -> None:
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            archive.writestr(info, payload)

        put("meta.json", canonical_json(meta).encode("utf-8"))
        trace = video.trace_jsonable()
        if trace is not None:
            put("trace.json", canonical_json(trace).encode("utf-8"))
        for index, png in enumerate(video.frames):
            put(f"frames/frame_{index:04d}.png", png)


def load_video(path: str | Path) -> VideoArtifact:
    """Reload an artifact written by :func:`save_video`."""
    import zipfile

    with zipfile.ZipFile(path) as archive:
        meta = json.loads(archive.read("meta.json"))
        names = sorted(n for n in archive.namelist() if n.startswith("frames/"))
        frames = tuple(archive.read(n) for n in names)
        trace = None
        if "trace.json" in archive.namelist():
            raw = json.loads(archive.read("trace.json"))
            trace = tuple(
                tuple(
                    TraceObject(
                        id=int(o["id"]),
                        name=str(o["name"]),
                        box=tuple(int(v) for v in o["box"]),
                        present=bool(o["present"]),
                        attributes=dict(o.get("attributes", {})),
                    )
                    for o in frame
                )
                for frame in raw
            )
    return VideoArtifact(
        frames=frames,
        width=int(meta["width"]),
        height=int(meta["height"]),
        scene_trace=trace,
        provenance=dict(meta.get("provenance", {})),
    )


@dataclass(frozen=True)
class SimScenario:
    """Failure knobs for the simulator, keyed by object name.

    ``thetas`` holds per-name presence difficulty (render only when the
    object's scale reaches it). ``duplicate`` names an object drawn twice
    while its scale sits at the initial value. ``motion_flip`` maps names to
    the scale below which their motion runs backwards. ``intent`` carries
    the machine-checkable ground truth for rule-based verification; the
    simulator itself never reads it.
    """

    name: str = "scenario"
    seed: int = 0
    thetas: Mapping[str, float] = field(default_factory=dict)
    duplicate: str | None = None
    motion_flip: Mapping[str, float] = field(default_factory=dict)
    intent: Any = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "thetas", dict(self.thetas))
        object.__setattr__(self, "motion_flip", dict(self.motion_flip))
        for name, theta in self.thetas.items():
            if theta < BETA_INIT:
                raise ValueError(f"difficulty for {name!r} is {theta}, below {BETA_INIT}")
        for name, threshold in self.motion_flip.items():
            if threshold < BETA_INIT:
                raise ValueError(f"motion-flip threshold for {name!r} below {BETA_INIT}")

    @property
    def max_threshold(self) -> float:
        """The scale at which every configured failure has cleared."""
        candidates = [BETA_INIT, *self.thetas.values(), *self.motion_flip.values()]
        if self.duplicate is not None:
            candidates.append(round(BETA_INIT + 0.05, 9))
        return max(candidates)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], intent: Any = None) -> "SimScenario":
        return cls(
            name=str(data.get("name", "scenario")),
            seed=int(data.get("seed", 0)),
            thetas={str(k): float(v) for k, v in data.get("thetas", {}).items()},
            duplicate=data.get("duplicate"),
            motion_flip={str(k): float(v) for k, v in data.get("motion_flip", {}).items()},
            intent=intent,
        )


def load_scenario_dict(path: str | Path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GenerationError(f"cannot load scenario {path}: {exc}") from None
    if not isinstance(data, dict):
        raise GenerationError(f"scenario {path} must hold a JSON object")
    return data


class SimulatedGenerator:
    """Deterministic generator applying :class:`SimScenario`'s failure model."""

    generator_id = "simulator"

    def __init__(self, scenario: SimScenario | None = None) -> None:
        self.scenario = scenario or SimScenario()

    def generate(self, design: StructuredDesign) -> VideoArtifact:
        scenario = self.scenario
        n = design.total_frames
        per_frame = [interpolate_layout(design, f) for f in range(1, n + 1)]

        frames: list[bytes] = []
        trace: list[tuple[TraceObject, ...]] = []
        for f in range(1, n + 1):
            entries: list[TraceObject] = []
            drawn: list[ObjectSpec] = []
            for obj in per_frame[f - 1]:
                beta = design.guidance_scales.get(obj.id, BETA_INIT)
                flip_at = scenario.motion_flip.get(obj.name)
                box_source = obj
                if flip_at is not None and beta < flip_at:
                    mirrored = next(
                        (o for o in per_frame[n - f] if o.id == obj.id), obj
                    )
                    box_source = mirrored
                present = beta >= scenario.thetas.get(obj.name, BETA_INIT)
                color = "#%02x%02x%02x" % _name_color(obj.name)
                entries.append(
                    TraceObject(
                        id=obj.id,
                        name=obj.name,
                        box=tuple(box_source.box.as_list()),  # type: ignore[arg-type]
                        present=present,
                        attributes={"color": color},
                    )
                )
                if present:
                    drawn.append(ObjectSpec(obj.id, obj.name, box_source.box))
                if (
                    present
                    and scenario.duplicate == obj.name
                    and beta <= BETA_INIT
                ):
                    ghost_box = self._shifted_box(box_source.box, design.canvas)
                    entries.append(
                        TraceObject(
                            id=1000 + obj.id,
                            name=obj.name,
                            box=tuple(ghost_box.as_list()),  # type: ignore[arg-type]
                            present=True,
                            attributes={"color": color, "duplicate": "1"},
                        )
                    )
                    drawn.append(ObjectSpec(1000 + obj.id, obj.name, ghost_box))
            frames.append(
                encode_png(render_frame(drawn, design.canvas, design.background_keyword))
            )
            trace.append(tuple(entries))

        return VideoArtifact(
            frames=tuple(frames),
            width=design.canvas.width,
            height=design.canvas.height,
            scene_trace=tuple(trace),
            provenance={
                "generator": self.generator_id,
                "scenario": scenario.name,
                "design_hash": design_hash(design),
            },
        )

    @staticmethod
    def _shifted_box(box, canvas: Canvas):
        from .layout import BoundingBox

        gap = 10
        x = box.x + box.w + gap
        if x + box.w > canvas.width:
            x = max(0, box.x - box.w - gap)
        return BoundingBox(x, box.y, box.w, box.h)


class RemoteGenerator:
    """Wire-protocol client for an external generation service."""

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 300.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def healthy(self) -> bool:
        try:
            return self._client.get(self.endpoint + "/healthz").status_code == 200
        except httpx.HTTPError:
            return False

    def generate(self, design: StructuredDesign) -> VideoArtifact:
        try:
            response = self._client.post(
                self.endpoint + "/generate", json=design_to_dict(design)
            )
        except httpx.HTTPError as exc:
            raise GeneratorUnavailable(f"{self.endpoint}: {exc}") from None
        if response.status_code == 400:
            raise DesignRejected(self._reason(response))
        if response.status_code != 200:
            raise GeneratorUnavailable(
                f"{self.endpoint} answered HTTP {response.status_code}"
            )
        return self._parse_artifact(response, design)

    @staticmethod
    def _reason(response: httpx.Response) -> str:
        try:
            body = response.json()
            return str(body.get("detail") or body.get("error") or body)
        except json.JSONDecodeError:
            return response.text[:200]

    def _parse_artifact(
        self, response: httpx.Response, design: StructuredDesign
    ) -> VideoArtifact:
        try:
            body = response.json()
        except json.JSONDecodeError:
            raise ProtocolViolation("response body is not JSON", "$") from None
        if not isinstance(body, dict):
            raise ProtocolViolation("response body must be an object", "$")
        frames_b64 = body.get("frames")
        if not isinstance(frames_b64, list) or not frames_b64:
            raise ProtocolViolation("must be a non-empty array", "$.frames")
        count = body.get("frame_count")
        if not isinstance(count, int):
            raise ProtocolViolation("must be an integer", "$.frame_count")
        if count != len(frames_b64):
            raise ProtocolViolation(
                f"claims {count} frames but {len(frames_b64)} were sent", "$.frame_count"
            )
        if count != design.total_frames:
            raise ProtocolViolation(
                f"design requires {design.total_frames} frames, got {count}",
                "$.frame_count",
            )
        frames: list[bytes] = []
        size: tuple[int, int] | None = None
        for i, b64 in enumerate(frames_b64):
            path = f"$.frames[{i}]"
            if not isinstance(b64, str):
                raise ProtocolViolation("must be a base64 string", path)
            try:
                raw = base64.b64decode(b64, validate=True)
            except (binascii.Error, ValueError):
                raise ProtocolViolation("is not valid base64", path) from None
            if not raw.startswith(b"\x89PNG"):
                raise ProtocolViolation("is not a PNG image", path)
            try:
                with Image.open(io.BytesIO(raw)) as img:
                    size = img.size
            except OSError:
                raise ProtocolViolation("PNG does not decode", path) from None
            if size != (design.canvas.width, design.canvas.height):
                raise ProtocolViolation(
                    f"frame is {size[0]}x{size[1]}, canvas is "
                    f"{design.canvas.width}x{design.canvas.height}",
                    path,
                )
            frames.append(raw)
        provenance: dict[str, Any] = {
            "generator": self.endpoint,
            "design_hash": design_hash(design),
        }
        if isinstance(body.get("capabilities"), dict):
            provenance["capabilities"] = body["capabilities"]
        return VideoArtifact(
            frames=tuple(frames),
            width=design.canvas.width,
            height=design.canvas.height,
            scene_trace=None,
            provenance=provenance,
        )
