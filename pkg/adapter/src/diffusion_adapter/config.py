"""Service configuration, read from a small TOML file."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

MODES = ("layout", "prompt_only")


class ConfigError(ValueError):
    """The service config file is missing, unreadable, or out of schema."""


@dataclass(frozen=True)
class AdapterConfig:
    """Everything the service needs to come up.

    ``mode`` selects how the backend uses the design: ``layout`` draws the
    per-frame boxes and modulates them by guidance scale, ``prompt_only``
    ignores both and renders from the prompt alone; the /generate response
    reports which inputs were honored either way.  ``inference_delay``
    stalls each generation by that many seconds to stand in for real model
    latency when exercising the queue.
    """

    mode: str = "layout"
    seed: int = 0
    queue_depth: int = 4
    inference_delay: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"model.mode must be one of {MODES}, got {self.mode!r}")
        if self.queue_depth < 0:
            raise ConfigError(f"service.queue_depth must be >= 0, got {self.queue_depth}")
        if self.inference_delay < 0:
            raise ConfigError(f"service.inference_delay must be >= 0, got {self.inference_delay}")

    @classmethod
    def from_file(cls, path: str | Path) -> "AdapterConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        known = {"model": {"mode", "seed"}, "service": {"queue_depth", "inference_delay"}}
        for section, keys in raw.items():
            if section not in known:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key in keys:
                if key not in known[section]:
                    raise ConfigError(f"{path}: unknown key {section}.{key}")
        model = raw.get("model", {})
        service = raw.get("service", {})
        try:
            return cls(
                mode=str(model.get("mode", "layout")),
                seed=int(model.get("seed", 0)),
                queue_depth=int(service.get("queue_depth", 4)),
                inference_delay=float(service.get("inference_delay", 0.0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
