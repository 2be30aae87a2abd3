"""Configuration loading: strict schema, layered overrides, credential lookup."""
from __future__ import annotations

import pytest

from sceneloop.config import AppConfig, ConfigInvalid, load_config


def _write(tmp_path, text: str):
    path = tmp_path / "config.toml"
    path.write_text(text)
    return path


class TestLoadConfig:
    def test_defaults_without_file(self):
        config = load_config()
        assert config.backend == "oracle"
        assert config.generator == "sim"
        assert config.pipeline.max_iterations == 9
        assert config.pipeline.beta_init == 1.0
        assert config.pipeline.beta_step == 0.05
        assert config.workers == 1

    def test_file_keys_override_defaults(self, tmp_path):
        path = _write(
            tmp_path,
            '[pipeline]\nmax_iterations = 3\n\n[chat]\nbackend = "scripted"\nscript = "replies.jsonl"\n',
        )
        config = load_config(path)
        assert config.pipeline.max_iterations == 3
        assert config.backend == "scripted"
        assert config.script == "replies.jsonl"

    def test_flags_override_file(self, tmp_path):
        path = _write(tmp_path, "[pipeline]\nmax_iterations = 3\n")
        config = load_config(path, {"max_iterations": 5})
        assert config.pipeline.max_iterations == 5

    def test_none_overrides_keep_file_values(self, tmp_path):
        path = _write(tmp_path, '[chat]\nbackend = "scripted"\n')
        config = load_config(path, {"backend": None, "max_iterations": None})
        assert config.backend == "scripted"

    def test_unknown_section_names_path(self, tmp_path):
        path = _write(tmp_path, "[pipelin]\nmax_iterations = 3\n")
        with pytest.raises(ConfigInvalid, match="pipelin"):
            load_config(path)

    def test_unknown_key_names_section_and_key(self, tmp_path):
        path = _write(tmp_path, "[pipeline]\nmax_iteration = 3\n")
        with pytest.raises(ConfigInvalid, match=r"pipeline\.max_iteration"):
            load_config(path)

    def test_wrong_type_names_key_path(self, tmp_path):
        path = _write(tmp_path, '[pipeline]\nmax_iterations = "lots"\n')
        with pytest.raises(ConfigInvalid, match=r"pipeline\.max_iterations"):
            load_config(path)

    def test_int_accepted_where_float_expected(self, tmp_path):
        path = _write(tmp_path, "[pipeline]\nbeta_init = 1\n")
        assert load_config(path).pipeline.beta_init == 1.0

    def test_invalid_toml_rejected(self, tmp_path):
        path = _write(tmp_path, "[pipeline\n")
        with pytest.raises(ConfigInvalid, match="TOML"):
            load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigInvalid, match="not found"):
            load_config(tmp_path / "ghost.toml")

    def test_unknown_override_key_rejected(self):
        with pytest.raises(ConfigInvalid, match="bogus"):
            load_config(None, {"bogus": 1})

    def test_bad_pipeline_value_reported_as_config_error(self, tmp_path):
        path = _write(tmp_path, "[pipeline]\nmax_iterations = 0\n")
        with pytest.raises(ConfigInvalid, match="pipeline"):
            load_config(path)


class TestAppConfig:
    def test_bad_backend_rejected(self):
        with pytest.raises(ConfigInvalid, match=r"chat\.backend"):
            AppConfig(backend="carrier-pigeon")

    def test_bad_generator_rejected(self):
        with pytest.raises(ConfigInvalid, match=r"generator\.kind"):
            AppConfig(generator="imagination")

    def test_zero_workers_rejected(self):
        with pytest.raises(ConfigInvalid, match=r"run\.workers"):
            AppConfig(workers=0)

    def test_credential_read_from_env(self, monkeypatch):
        monkeypatch.setenv("SCENELOOP_CHAT_CREDENTIAL", "sk-test")
        assert AppConfig().require_credential() == "sk-test"

    def test_missing_credential_names_env_var(self, monkeypatch):
        monkeypatch.delenv("SCENELOOP_CHAT_CREDENTIAL", raising=False)
        with pytest.raises(ConfigInvalid, match="SCENELOOP_CHAT_CREDENTIAL"):
            AppConfig().require_credential()

    def test_custom_credential_env(self, monkeypatch):
        monkeypatch.setenv("OTHER_TOKEN", "abc")
        assert AppConfig(credential_env="OTHER_TOKEN").require_credential() == "abc"
