"""Config plumbing: files, overrides, env seed, round-trips."""

import pytest

from tgsa.config import RunConfig, build_config, load_config_file, set_key, write_config
from tgsa.errors import ConfigError


def test_defaults():
    cfg = RunConfig()
    assert cfg.model.scheme == "gsa"
    assert cfg.loss.alpha == 3.2
    assert cfg.data.snr_db == (-5.0, 5.0)
    assert cfg.data.eval_snr_db == (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
    assert cfg.train.clip_norm == 5.0


def test_set_key_types():
    cfg = RunConfig()
    set_key(cfg, "train.steps", "42")
    set_key(cfg, "train.lr", "0.01")
    set_key(cfg, "model.sigma_per_head", "true")
    set_key(cfg, "data.snr_db", "-10,0,10")
    set_key(cfg, "out_dir", "/tmp/x")
    assert cfg.train.steps == 42
    assert cfg.train.lr == 0.01
    assert cfg.model.sigma_per_head is True
    assert cfg.data.snr_db == (-10.0, 0.0, 10.0)
    assert cfg.out_dir == "/tmp/x"


def test_unknown_keys_rejected():
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        set_key(cfg, "model.nonexistent", "1")
    with pytest.raises(ConfigError):
        set_key(cfg, "nosection.steps", "1")
    with pytest.raises(ConfigError):
        set_key(cfg, "train.steps", "many")


def test_config_file_roundtrip(tmp_path):
    cfg = RunConfig()
    cfg.model.scheme = "tab"
    cfg.train.steps = 7
    cfg.data.snr_db = (0.0, 3.0)
    path = tmp_path / "run.kv"
    write_config(cfg, path)
    loaded = RunConfig()
    load_config_file(loaded, path)
    assert loaded.model.scheme == "tab"
    assert loaded.train.steps == 7
    assert loaded.data.snr_db == (0.0, 3.0)


def test_file_then_cli_precedence(tmp_path):
    path = tmp_path / "base.kv"
    path.write_text("train.steps=10\ntrain.lr=0.5\n")
    cfg = build_config(str(path), {"train.steps": "99"})
    assert cfg.train.steps == 99  # CLI wins
    assert cfg.train.lr == 0.5    # file survives


def test_env_seed_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("TGSA_SEED", "777")
    cfg = build_config(None, {"train.seed": "5"})
    assert cfg.train.seed == 777


def test_bad_file_line(tmp_path):
    path = tmp_path / "bad.kv"
    path.write_text("not a key value line\n")
    with pytest.raises(ConfigError):
        load_config_file(RunConfig(), path)


def test_comments_and_blanks_ignored(tmp_path):
    path = tmp_path / "ok.kv"
    path.write_text("# comment\n\ntrain.steps=3\n")
    cfg = RunConfig()
    load_config_file(cfg, path)
    assert cfg.train.steps == 3
