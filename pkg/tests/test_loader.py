"""
Unit tests for versioned JSON config files.
"""

import json

import pytest

from src.config.loader import dump_config, load_config, read_config_payload
from src.core.errors import ConfigError
from src.core.types import ObjectSpec, SceneConfig
from src.student.trainer import TrainConfig


@pytest.fixture
def write_json(tmp_path):
    """Write a payload (dict or raw text) to a config file and return its path."""

    def _write(payload, name="config.json"):
        path = tmp_path / name
        path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
        return path

    return _write


class TestReadConfigPayload:
    """Test suite for read_config_payload."""

    def test_strips_version(self, write_json):
        path = write_json({"version": 1, "lr": 0.01})
        assert read_config_payload(path) == {"lr": 0.01}

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="config file not found"):
            read_config_payload(tmp_path / "absent.json")

    def test_malformed_json_reports_position(self, write_json):
        path = write_json('{"version": 1,\n  "lr": }')
        with pytest.raises(ConfigError, match="malformed JSON at line 2"):
            read_config_payload(path)

    def test_top_level_must_be_object(self, write_json):
        with pytest.raises(ConfigError, match="top level must be a JSON object"):
            read_config_payload(write_json([1, 2]))

    def test_missing_version(self, write_json):
        with pytest.raises(ConfigError, match="missing 'version' field"):
            read_config_payload(write_json({"lr": 0.01}))

    def test_unsupported_version(self, write_json):
        with pytest.raises(ConfigError, match="unsupported config version 2"):
            read_config_payload(write_json({"version": 2}))


class TestLoadConfig:
    """Test suite for load_config."""

    def test_loads_fields_and_defaults(self, write_json):
        config = load_config(write_json({"version": 1, "epochs": 3, "scheme": "speed_interp"}), TrainConfig)
        assert config.epochs == 3
        assert config.scheme.value == "speed_interp"
        assert config.lr == TrainConfig().lr

    def test_overrides_replace_file_values(self, write_json):
        path = write_json({"version": 1, "seed": 4, "epochs": 3})
        config = load_config(path, TrainConfig, seed=9, epochs=None)
        assert config.seed == 9
        # None means "not given on the command line"
        assert config.epochs == 3

    def test_unknown_key(self, write_json):
        with pytest.raises(ConfigError) as exc_info:
            load_config(write_json({"version": 1, "learning_rate": 0.1}), TrainConfig)
        assert "unknown key 'learning_rate'" in str(exc_info.value)

    def test_invalid_value_names_field(self, write_json):
        with pytest.raises(ConfigError) as exc_info:
            load_config(write_json({"version": 1, "lr": -1.0}), TrainConfig)
        assert "field 'lr'" in str(exc_info.value)
        assert "lr must be > 0" in str(exc_info.value)

    def test_nested_field_location(self, write_json):
        payload = {"version": 1, "objects": [{"center": [0, 0, 0], "size": [1, 0, 1]}]}
        with pytest.raises(ConfigError, match="field 'objects.0.size'"):
            load_config(write_json(payload), SceneConfig)


class TestDumpConfig:
    def test_dump_then_load_is_identity(self, tmp_path):
        config = SceneConfig(
            area_half_extent=6.4,
            n_background_points=200,
            objects=(ObjectSpec(center=(1.0, 2.0, 0.8), velocity=(5.0, 0.0, 0.0)),),
            seed=3,
        )
        path = dump_config(config, tmp_path / "nested" / "scene.json")
        assert load_config(path, SceneConfig) == config

    def test_writes_version_and_skips_none(self, tmp_path):
        payload = json.loads(dump_config(SceneConfig(), tmp_path / "scene.json").read_text())
        assert payload["version"] == 1
        assert "objects" not in payload
        assert "layout_seed" not in payload
