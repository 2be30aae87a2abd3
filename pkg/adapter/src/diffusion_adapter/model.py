"""A deterministic stand-in for a text-to-video diffusion backbone.

Renders every frame as flat-colored boxes over a hashed background, with
per-frame positions linearly interpolated between the design's keyframes.
In ``layout`` mode the boxes and guidance scales steer what is drawn; in
``prompt_only`` mode both are ignored and only the prompt-derived
background is rendered, the way a backbone without layout hooks would
behave. Either way the reported capability flags say what was honored.
"""
from __future__ import annotations

import hashlib
import io
import time
from dataclasses import dataclass
from typing import Any, Mapping

from PIL import Image, ImageDraw

from .config import AdapterConfig


def _hash_color(keyword: str, *, dim: float = 1.0) -> tuple[int, int, int]:
    digest = hashlib.sha256(keyword.encode("utf-8")).digest()
    return tuple(int(b * dim) for b in digest[:3])  # type: ignore[return-value]


def _interpolate(frame: int, keyframes: list[dict[str, Any]], oid: int) -> tuple[int, int, int, int] | None:
    """Box of object ``oid`` at ``frame``, linear between anchors, clamped outside."""
    anchors: list[tuple[int, list[int]]] = []
    for kf in keyframes:
        for obj in kf["objects"]:
            if obj["id"] == oid:
                anchors.append((kf["frame"], obj["box"]))
    if not anchors:
        return None
    if frame <= anchors[0][0]:
        return tuple(anchors[0][1])  # type: ignore[return-value]
    if frame >= anchors[-1][0]:
        return tuple(anchors[-1][1])  # type: ignore[return-value]
    for (f0, b0), (f1, b1) in zip(anchors, anchors[1:]):
        if f0 <= frame <= f1:
            t = (frame - f0) / (f1 - f0)
            return tuple(round(a + t * (b - a)) for a, b in zip(b0, b1))  # type: ignore[return-value]
    return tuple(anchors[-1][1])  # type: ignore[return-value]


@dataclass(frozen=True)
class SyntheticVideoModel:
    """Loaded model state: render settings fixed by the service config."""

    config: AdapterConfig

    @property
    def capabilities(self) -> dict[str, bool]:
        layout = self.config.mode == "layout"
        return {"layout_guidance": layout, "per_object_scale": layout}

    def generate(self, design: Mapping[str, Any]) -> list[bytes]:
        """One PNG per frame for a schema-valid canonical design."""
        if self.config.inference_delay:
            time.sleep(self.config.inference_delay)
        width = design["canvas"]["width"]
        height = design["canvas"]["height"]
        total = design["total_frames"]
        keyframes = list(design["keyframes"])
        scales = {int(k): float(v) for k, v in design.get("guidance_scales", {}).items()}
        background = _hash_color(design.get("background_keyword") or design.get("prompt", ""), dim=0.5)

        ids: list[tuple[int, str]] = []
        seen: set[int] = set()
        for kf in keyframes:
            for obj in kf["objects"]:
                if obj["id"] not in seen:
                    seen.add(obj["id"])
                    ids.append((obj["id"], obj["name"]))

        frames: list[bytes] = []
        for frame in range(1, total + 1):
            image = Image.new("RGB", (width, height), background)
            if self.config.mode == "layout":
                draw = ImageDraw.Draw(image)
                for oid, name in ids:
                    box = _interpolate(frame, keyframes, oid)
                    if box is None:
                        continue
                    x, y, w, h = box
                    # Scale reads as brightness: the floor 1.0 renders at 70%.
                    dim = min(1.0, 0.7 + 0.3 * (scales.get(oid, 1.0) - 1.0) / 0.5)
                    draw.rectangle(
                        (x, y, min(x + w, width) - 1, min(y + h, height) - 1),
                        fill=_hash_color(name, dim=dim),
                    )
            buf = io.BytesIO()
            image.save(buf, format="PNG")
            frames.append(buf.getvalue())
        return frames
