"""Config stacking: defaults, file, environment."""

import json

import pytest

from aptrail.config import Config, ENV_PREFIX, load_config


def test_defaults():
    cfg = load_config(env={})
    assert cfg.daily_quota == 5000
    assert cfg.results_cap == 10_000
    assert cfg.page_size == 200
    assert cfg.rotations == (0, 90, 180, 270)
    assert cfg.stationary_km == 1.0
    assert cfg.band_gap == 512
    assert cfg.sample_per_partition == 250


def test_file_values(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"daily_quota": 100, "stationary_km": 2.5,
                                "rotations": [0, 180]}), encoding="utf-8")
    cfg = load_config(path, env={})
    assert cfg.daily_quota == 100
    assert cfg.stationary_km == 2.5
    assert cfg.rotations == (0, 180)


def test_env_overrides_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"daily_quota": 100}), encoding="utf-8")
    cfg = load_config(path, env={ENV_PREFIX + "DAILY_QUOTA": "42",
                                 ENV_PREFIX + "ROTATIONS": "0,90"})
    assert cfg.daily_quota == 42
    assert cfg.rotations == (0, 90)


def test_unknown_file_key_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"page_sizes": 1}), encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(path, env={})


def test_invalid_values_rejected():
    with pytest.raises(ValueError):
        Config(daily_quota=0)
    with pytest.raises(ValueError):
        Config(stationary_km=-1.0)
    with pytest.raises(ValueError):
        Config(rotations=())


def test_unrelated_env_ignored():
    cfg = load_config(env={"DAILY_QUOTA": "7", "PATH": "/bin"})
    assert cfg.daily_quota == 5000
