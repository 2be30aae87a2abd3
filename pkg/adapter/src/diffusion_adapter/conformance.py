"""Protocol conformance: replay golden requests, validate every response.

Each packaged fixture is a canonical design plus the frame count and
frame size a conforming service must return for it. The checker POSTs
the design, validates the body against the published response schema,
then cross-checks the frames themselves, reporting every failure with a
JSON path into the response and an expected-vs-got diff.
"""
from __future__ import annotations

import base64
import binascii
import io
import json
from dataclasses import dataclass
from importlib import resources
from typing import Any

import httpx
from PIL import Image

from .validation import validate_response


@dataclass(frozen=True)
class GoldenFixture:
    name: str
    request: dict[str, Any]
    frame_count: int
    width: int
    height: int


@dataclass(frozen=True)
class FixtureResult:
    name: str
    failures: tuple[str, ...]
    capabilities: dict[str, Any] | None = None

    @property
    def passed(self) -> bool:
        return not self.failures


@dataclass(frozen=True)
class ConformanceReport:
    endpoint: str
    healthy: bool
    results: tuple[FixtureResult, ...]

    @property
    def passed(self) -> bool:
        return self.healthy and all(r.passed for r in self.results)

    def summary(self) -> str:
        lines = [f"endpoint {self.endpoint}: healthz {'ok' if self.healthy else 'FAILED'}"]
        for result in self.results:
            if result.passed:
                flags = ""
                if result.capabilities is not None:
                    flags = " " + json.dumps(result.capabilities, sort_keys=True)
                lines.append(f"PASS {result.name}{flags}")
            else:
                lines.append(f"FAIL {result.name}")
                lines.extend(f"  {failure}" for failure in result.failures)
        verdict = "conformant" if self.passed else "NOT conformant"
        lines.append(f"{len(self.results)} fixtures: {verdict}")
        return "\n".join(lines)


def load_fixtures() -> tuple[GoldenFixture, ...]:
    root = resources.files("diffusion_adapter").joinpath("fixtures")
    fixtures = []
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if not entry.name.endswith(".json"):
            continue
        data = json.loads(entry.read_text("utf-8"))
        expect = data["expect"]
        fixtures.append(
            GoldenFixture(
                name=data["name"],
                request=data["request"],
                frame_count=expect["frame_count"],
                width=expect["width"],
                height=expect["height"],
            )
        )
    return tuple(fixtures)


def _check_fixture(client: httpx.Client, endpoint: str, fixture: GoldenFixture) -> FixtureResult:
    try:
        response = client.post(endpoint + "/generate", json=fixture.request)
    except httpx.HTTPError as exc:
        return FixtureResult(fixture.name, (f"$: endpoint unreachable: {exc}",))
    if response.status_code != 200:
        return FixtureResult(
            fixture.name, (f"$: expected HTTP 200, got {response.status_code}",)
        )
    try:
        body = response.json()
    except json.JSONDecodeError:
        return FixtureResult(fixture.name, ("$: response body is not JSON",))

    failures: list[str] = []
    violation = validate_response(body)
    if violation is not None:
        failures.append(violation.detail())
        return FixtureResult(fixture.name, tuple(failures))

    count = body["frame_count"]
    frames = body["frames"]
    if count != fixture.frame_count:
        failures.append(f"$.frame_count: expected {fixture.frame_count}, got {count}")
    if len(frames) != count:
        failures.append(f"$.frames: frame_count claims {count} but {len(frames)} frames present")
    for i, encoded in enumerate(frames):
        path = f"$.frames[{i}]"
        try:
            raw = base64.b64decode(encoded, validate=True)
        except (binascii.Error, ValueError):
            failures.append(f"{path}: not valid base64")
            continue
        if not raw.startswith(b"\x89PNG"):
            failures.append(f"{path}: not a PNG image")
            continue
        try:
            with Image.open(io.BytesIO(raw)) as img:
                size = img.size
        except OSError:
            failures.append(f"{path}: PNG does not decode")
            continue
        if size != (fixture.width, fixture.height):
            failures.append(
                f"{path}: frame is {size[0]}x{size[1]}, expected {fixture.width}x{fixture.height}"
            )
    return FixtureResult(
        fixture.name, tuple(failures), capabilities=body.get("capabilities")
    )


def conformance_check(
    endpoint: str,
    *,
    timeout: float = 120.0,
    transport: httpx.BaseTransport | None = None,
) -> ConformanceReport:
    """Replay every golden fixture against ``endpoint`` and grade the replies."""
    endpoint = endpoint.rstrip("/")
    with httpx.Client(timeout=timeout, transport=transport) as client:
        try:
            healthy = client.get(endpoint + "/healthz").status_code == 200
        except httpx.HTTPError:
            healthy = False
        results = tuple(
            _check_fixture(client, endpoint, fixture) for fixture in load_fixtures()
        )
    return ConformanceReport(endpoint=endpoint, healthy=healthy, results=results)
