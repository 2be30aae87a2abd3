"""Declarative run configuration: one TOML file, flat typed sections.

Sections and keys (all optional; defaults shown):

.. code-block:: toml

    [pipeline]
    max_iterations = 9
    beta_init = 1.0
    beta_step = 0.05
    seed = 0

    [chat]
    backend = "oracle"          # "http" | "scripted" | "oracle"
    endpoint = ""               # chat completions URL (http backend)
    credential_env = "SCENELOOP_CHAT_CREDENTIAL"
    model = "default"
    script = ""                 # JSONL reply script (scripted backend)

    [generator]
    kind = "sim"                # "sim" | "remote"
    scenario = ""               # scenario JSON (sim)
    endpoint = ""               # generator service URL (remote)

    [run]
    out = "runs"
    workers = 1

Command-line flags override file keys; the file overrides built-in
defaults.  Unknown sections or keys are rejected with their full key path
so typos surface instead of being silently ignored.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

from .workflow import PipelineConfig, WorkflowError

__all__ = ["AppConfig", "ConfigInvalid", "load_config"]

CREDENTIAL_ENV_DEFAULT = "SCENELOOP_CHAT_CREDENTIAL"


class ConfigInvalid(ValueError):
    """A config key is missing, mistyped, or inconsistent; names the key path."""


@dataclass(frozen=True)
class AppConfig:
    pipeline: PipelineConfig = PipelineConfig()
    backend: str = "oracle"
    chat_endpoint: str = ""
    credential_env: str = CREDENTIAL_ENV_DEFAULT
    model: str = "default"
    script: str = ""
    generator: str = "sim"
    scenario: str = ""
    generator_endpoint: str = ""
    out: str = "runs"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.backend not in ("http", "scripted", "oracle"):
            raise ConfigInvalid(
                f"chat.backend: expected http, scripted or oracle, got {self.backend!r}"
            )
        if self.generator not in ("sim", "remote"):
            raise ConfigInvalid(
                f"generator.kind: expected sim or remote, got {self.generator!r}"
            )
        if self.workers < 1:
            raise ConfigInvalid(f"run.workers: must be >= 1, got {self.workers}")

    def require_credential(self) -> str:
        """The chat credential for the http backend, from the environment."""
        value = os.environ.get(self.credential_env, "")
        if not value:
            raise ConfigInvalid(
                f"chat backend 'http' needs a credential: set the "
                f"{self.credential_env} environment variable"
            )
        return value


_SCHEMA: dict[str, dict[str, type]] = {
    "pipeline": {
        "max_iterations": int,
        "beta_init": float,
        "beta_step": float,
        "seed": int,
    },
    "chat": {
        "backend": str,
        "endpoint": str,
        "credential_env": str,
        "model": str,
        "script": str,
    },
    "generator": {"kind": str, "scenario": str, "endpoint": str},
    "run": {"out": str, "workers": int},
}


def _typed(section: str, key: str, value: Any, want: type) -> Any:
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, want) or isinstance(value, bool) and want is not bool:
        raise ConfigInvalid(
            f"{section}.{key}: expected {want.__name__}, got {type(value).__name__}"
        )
    return value


def _validate(data: Mapping[str, Any], path: Path) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for section, keys in data.items():
        if section not in _SCHEMA:
            raise ConfigInvalid(f"{section}: unknown section in {path}")
        if not isinstance(keys, Mapping):
            raise ConfigInvalid(f"{section}: expected a table in {path}")
        out[section] = {}
        for key, value in keys.items():
            if key not in _SCHEMA[section]:
                raise ConfigInvalid(f"{section}.{key}: unknown key in {path}")
            out[section][key] = _typed(section, key, value, _SCHEMA[section][key])
    return out


def load_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> AppConfig:
    """Merge defaults, the optional TOML file, and flag overrides.

    ``overrides`` uses the AppConfig field names; ``None`` values are
    ignored so unset flags never mask file keys.
    """
    sections: dict[str, dict[str, Any]] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigInvalid(f"config file not found: {path}")
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid(f"{path}: not valid TOML: {exc}") from None
        sections = _validate(raw, path)

    pipeline_kwargs = sections.get("pipeline", {})
    chat = sections.get("chat", {})
    generator = sections.get("generator", {})
    run = sections.get("run", {})

    fields: dict[str, Any] = {
        "backend": chat.get("backend", "oracle"),
        "chat_endpoint": chat.get("endpoint", ""),
        "credential_env": chat.get("credential_env", CREDENTIAL_ENV_DEFAULT),
        "model": chat.get("model", "default"),
        "script": chat.get("script", ""),
        "generator": generator.get("kind", "sim"),
        "scenario": generator.get("scenario", ""),
        "generator_endpoint": generator.get("endpoint", ""),
        "out": run.get("out", "runs"),
        "workers": run.get("workers", 1),
    }
    pipeline_overrides: dict[str, Any] = {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("max_iterations", "seed"):
            pipeline_overrides[key] = value
        elif key in fields:
            fields[key] = value
        else:
            raise ConfigInvalid(f"unknown override key {key!r}")
    try:
        pipeline = PipelineConfig(**{**pipeline_kwargs, **pipeline_overrides})
    except WorkflowError as exc:
        raise ConfigInvalid(f"pipeline: {exc}") from None
    return AppConfig(pipeline=pipeline, **fields)
