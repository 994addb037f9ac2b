import json

import pytest

from minehaul.config import (
    KMH,
    RUNTIME_ONLY_FIELDS,
    config_hash,
    load_settings,
    model_hash,
    read_config_file,
    write_run_config,
)
from minehaul.errors import ConfigError, InputMissingError


def test_defaults(settings):
    assert settings.world.dt == pytest.approx(0.02)
    assert settings.world.sensor_every == 5
    assert settings.sensors.beams == 108
    assert settings.data.k_lookahead == 5
    assert settings.data.ci == pytest.approx(0.99)
    assert settings.expert.speed_limit == pytest.approx(20.0 * KMH)
    assert settings.training.lr0 == pytest.approx(2e-4)
    assert settings.training.alpha_scale == pytest.approx(1500.0)
    assert settings.deployment.mode == "evidential"


def test_environment_overrides_nested_field(monkeypatch):
    monkeypatch.setenv("MINEHAUL_DATA__K_LOOKAHEAD", "3")
    assert load_settings().data.k_lookahead == 3


def test_unknown_key_is_config_error():
    with pytest.raises(ConfigError):
        load_settings(world={"gravity": 9.81})


def test_invalid_value_is_config_error():
    with pytest.raises(ConfigError):
        load_settings(world={"dt": 0.5})


def test_road_narrower_than_truck_rejected():
    with pytest.raises(ConfigError):
        load_settings(world={"road_width": 6.0})


def test_log_level_normalized():
    assert load_settings(log_level="debug").log_level == "DEBUG"


def test_toml_file(tmp_path):
    path = tmp_path / "minehaul.toml"
    path.write_text('seed = 11\n\n[deployment]\nmode = "uniform"\n')
    settings = load_settings(path)
    assert settings.seed == 11
    assert settings.deployment.mode == "uniform"


def test_cli_override_wins_over_file(tmp_path):
    path = tmp_path / "minehaul.toml"
    path.write_text("seed = 11\n")
    assert load_settings(path, seed=3).seed == 3
    assert load_settings(path, seed=None).seed == 11


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(InputMissingError):
        read_config_file(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)


def test_config_hash_ignores_runtime_fields():
    base = load_settings()
    assert config_hash(base) == config_hash(load_settings(jobs=8, log_level="DEBUG", out_dir="elsewhere"))
    assert config_hash(base) != config_hash(load_settings(seed=base.seed + 1))


def test_model_hash_tracks_model_shape_only():
    base = load_settings()
    assert model_hash(base) == model_hash(load_settings(seed=99))
    assert model_hash(base) != model_hash(load_settings(data={"k_lookahead": 4}))
    assert model_hash(base) != model_hash(load_settings(training={"l_r_variant": "standard"}))


def test_run_config_reproduces_settings(tmp_path):
    original = load_settings(seed=5, training={"epochs": 3})
    path = write_run_config(original, tmp_path)
    payload = json.loads(path.read_text())
    assert not RUNTIME_ONLY_FIELDS & payload.keys()
    assert config_hash(load_settings(path)) == config_hash(original)
