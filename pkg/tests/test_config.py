"""
Tests for configuration resolution and snapshots
"""

import math

import pytest
from pydantic import ValidationError

from config import RunConfig, load_config, reload_settings, snapshot_lines, write_snapshot


def test_defaults():
    cfg = load_config()
    assert cfg.seed == 0
    assert cfg.hop == pytest.approx(1.0 / 3.0)
    assert cfg.train.epochs == 200
    assert cfg.train.batch_size == 32
    assert cfg.mask.width == 14
    assert math.isinf(cfg.selftrain.max_distance)


def test_root_seed_propagates():
    """Test: sections without an explicit seed inherit the root seed"""
    cfg = load_config(seed=7, train={"seed": 3})
    assert cfg.scene.seed == 7
    assert cfg.pf.seed == 7
    assert cfg.perturbation.seed == 7
    assert cfg.train.seed == 3


def test_precedence(tmp_path, monkeypatch):
    """Test: keyword overrides beat the config file, which beats the environment"""
    monkeypatch.setenv("VILOC_TRAIN__EPOCHS", "5")
    monkeypatch.setenv("VILOC_PF__N_PARTICLES", "50")
    config = tmp_path / "run.env"
    config.write_text("VILOC_TRAIN__EPOCHS=7\nVILOC_TRAIN__LR=0.01\n", encoding="utf-8")

    cfg = load_config(config)
    assert cfg.train.epochs == 7
    assert cfg.train.lr == 0.01
    assert cfg.pf.n_particles == 50
    assert load_config(config, train={"epochs": 9}).train.epochs == 9


def test_snapshot_round_trip(tmp_path):
    """Test: a written snapshot reloads to the identical configuration"""
    cfg = load_config(seed=11, hop=0.5, train={"lr": 3e-4}, mask={"rssi": True},
                      selftrain={"include_phone_only": True})
    path = write_snapshot(cfg, tmp_path)
    assert path.name == "config.env"
    assert "VILOC_SELFTRAIN__MAX_DISTANCE=inf" in snapshot_lines(cfg)
    assert load_config(path).model_dump() == cfg.model_dump()


def test_invalid_values():
    with pytest.raises(ValidationError):
        load_config(log_level="LOUD")
    with pytest.raises(ValidationError):
        load_config(train={"dropout_rate": 1.0})
    with pytest.raises(ValidationError):
        load_config(mask={"ftm": False, "imu": False, "gps": False})


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.env")


def test_reload_settings_reads_environment(monkeypatch):
    monkeypatch.setenv("VILOC_SEED", "42")
    assert reload_settings().seed == 42
    monkeypatch.delenv("VILOC_SEED")
    assert isinstance(reload_settings(), RunConfig)
