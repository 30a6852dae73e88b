"""Tests for loading kwsql settings from a user config file."""

from unittest.mock import patch

import pytest

from kwsql.config import AppConfig, config_from_dict, load_config
from kwsql.errors import ConfigError
from tests.support import SCHEMA_PATH, TRANSCRIPT_PATH, write_config


class TestLoadConfig:
    """Test cases for reading YAML configuration."""

    def test_values_from_yaml(self, tmp_path):
        """Test settings and nested generation options are read from YAML."""
        config_content = f"""
schema_path: {SCHEMA_PATH}
scripted_path: {TRANSCRIPT_PATH}
mode: llm_dfe
k: "5"
strip_prefixes: Maintenance_
generation:
  examples_target: 20
  table_count_distribution:
    "1": 0.5
    "2": 0.5
"""
        path = tmp_path / "kwsql.yaml"
        path.write_text(config_content, encoding="utf-8")

        config = load_config(path)
        assert config.mode == "llm_dfe"
        assert config.k == 5
        assert config.strip_prefixes == ["Maintenance_"]
        assert config.generation.examples_target == 20
        assert config.generation.table_count_distribution == {1: 0.5, 2: 0.5}
        assert config.has_llm_backend

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        """Test relative paths are taken from the config file's directory."""
        (tmp_path / "schema.json").write_text(SCHEMA_PATH.read_text(encoding="utf-8"), encoding="utf-8")
        path = tmp_path / "kwsql.yaml"
        path.write_text("schema_path: schema.json\noutput_dir: out\n", encoding="utf-8")
        config = load_config(path)
        assert config.schema_path == str(tmp_path.resolve() / "schema.json")
        assert config.output_dir == str(tmp_path.resolve() / "out")

    def test_fixture_config(self, tmp_path):
        """Test the config written by the test helper loads."""
        config = load_config(write_config(tmp_path))
        assert config.concurrency == 1
        assert config.require("examples_path").name == "examples.jsonl"

    def test_missing_explicit_file(self, tmp_path):
        """Test an explicit path that does not exist is an error."""
        with pytest.raises(ConfigError, match="config file not found"):
            load_config(tmp_path / "absent.yaml")

    def test_missing_default_file(self, tmp_path):
        """Test a missing default file means all defaults."""
        with patch("kwsql.config.DEFAULT_CONFIG_PATH", tmp_path / "absent.yaml"):
            config = load_config()
        assert config == AppConfig()

    def test_malformed_yaml(self, tmp_path):
        """Test unparseable YAML is reported."""
        path = tmp_path / "kwsql.yaml"
        path.write_text("mode: [unclosed\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="cannot load config"):
            load_config(path)

    def test_not_a_mapping(self, tmp_path):
        """Test the top level must be a mapping."""
        path = tmp_path / "kwsql.yaml"
        path.write_text("- a\n- b\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="must hold a mapping"):
            load_config(path)


class TestConfigValidation:
    """Test cases for rejecting invalid settings."""

    @pytest.mark.parametrize("data,message", [
        ({"mode": "everything"}, "unknown mode 'everything'"),
        ({"k": 0}, "k must be at least 1"),
        ({"k": "many"}, "k must be a number"),
        ({"concurrency": 0}, "concurrency must be at least 1"),
        ({"max_retries": -1}, "must not be negative"),
        ({"colour": "blue"}, "unknown config keys: colour"),
        ({"generation": {"budget": 3}}, "unknown config keys in generation: budget"),
        ({"generation": [1]}, "generation must be a mapping"),
        ({"http_endpoint": "http://llm.test/v1"}, "needs http_model"),
        ({"scripted_path": str(TRANSCRIPT_PATH), "http_endpoint": "http://x", "http_model": "m"}, "choose one"),
        ({"schema_path": "/nonexistent/schema.json"}, "schema_path does not exist"),
    ])
    def test_invalid(self, data, message):
        """Test each invalid setting raises ConfigError."""
        with pytest.raises(ConfigError, match=message):
            config_from_dict(data)

    def test_outputs_need_not_exist(self):
        """Test files commands write are not required at load time."""
        config = config_from_dict({"dictionary_path": "/nonexistent/dictionary.json"})
        with pytest.raises(ConfigError, match="dictionary_path does not exist"):
            config.require("dictionary_path")

    def test_require_unset(self):
        """Test requiring an unset path names it."""
        with pytest.raises(ConfigError, match="schema_path is not configured"):
            AppConfig().require("schema_path")

    def test_overrides(self):
        """Test command-line overrides apply and are validated; None keeps the value."""
        config = AppConfig().override(k=3, mode=None)
        assert (config.k, config.mode) == (3, "complete")
        with pytest.raises(ConfigError):
            AppConfig().override(mode="nope")

    def test_config_error_step(self):
        """Test configuration errors report the config step."""
        with pytest.raises(ConfigError) as info:
            config_from_dict({"k": 0})
        assert info.value.step == "config"
