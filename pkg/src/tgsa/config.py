"""Run configuration: defaults, flat key=value files, CLI overrides.

Precedence, lowest to highest: built-in defaults, config file, CLI flags,
then the TGSA_SEED environment variable for the seed alone.  Flags mirror
the dotted config keys (--model.scheme=gsa, --train.steps=200, ...); list
values are comma-separated.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass
class ModelConfig:
    topology: str = "real"            # real | complex
    scheme: str = "gsa"               # vanilla|ot, tab|additive_bias, gsa
    layers: int = 2
    dim: int = 64
    heads: int = 4
    ff_dim: int = 128
    sigma_init: float = 0.0           # 0 -> auto: quarter of the training frame count
    sigma_per_head: bool = False
    abs_softmax: str = "default"      # default | on | off
    mask_activation: str = "sigmoid"  # sigmoid | linear
    complex_mask_signed: bool = False
    positional_encoding: bool = False


@dataclass
class TrainConfig:
    steps: int = 200
    lr: float = 1e-3
    batch: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    clip_norm: float = 5.0
    val_every: int = 25
    log_every: int = 10
    val_fraction: float = 0.25


@dataclass
class DataConfig:
    dir: str = "data/synth"
    num_utterances: int = 4
    duration_s: float = 1.0
    clean_kind: str = "harmonic-tones"
    noise_kind: str = "white"
    snr_db: tuple[float, ...] = (-5.0, 5.0)
    eval_snr_db: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
    sample_rate: int = 16000
    fft_size: int = 256
    hop: int = 64


@dataclass
class LossConfig:
    alpha: float = 3.2
    si_sdr: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    out_dir: str = "runs/default"

    def sections(self) -> dict[str, object]:
        return {"model": self.model, "train": self.train, "data": self.data,
                "loss": self.loss}

    def flat_items(self) -> dict[str, str]:
        out = {}
        for sec_name, sec in self.sections().items():
            for f in fields(sec):
                out[f"{sec_name}.{f.name}"] = _format_value(getattr(sec, f.name))
        out["out_dir"] = self.out_dir
        return out


def _format_value(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(raw: str, target_type, key: str):
    raw = raw.strip()
    if target_type is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if target_type is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if target_type is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if target_type is str:
        return raw
    # remaining case: tuple[float, ...]
    try:
        return tuple(float(part) for part in raw.split(",") if part.strip() != "")
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {raw!r}") from None


def set_key(cfg: RunConfig, key: str, raw: str) -> None:
    if key == "out_dir":
        cfg.out_dir = raw.strip()
        return
    if "." not in key:
        raise ConfigError(f"unknown config key {key!r}")
    sec_name, _, field_name = key.partition(".")
    sections = cfg.sections()
    if sec_name not in sections:
        raise ConfigError(f"unknown config section {sec_name!r} in key {key!r}")
    sec = sections[sec_name]
    matching = [f for f in fields(sec) if f.name == field_name]
    if not matching:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(sec, field_name)
    target_type = type(current) if not isinstance(current, tuple) else tuple
    setattr(sec, field_name, _coerce(raw, target_type, key))


def load_config_file(cfg: RunConfig, path) -> None:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        set_key(cfg, key.strip(), value)


def apply_env(cfg: RunConfig) -> None:
    seed = os.environ.get("TGSA_SEED")
    if seed is not None:
        set_key(cfg, "train.seed", seed)


def build_config(config_file: Optional[str], overrides: dict[str, str]) -> RunConfig:
    cfg = RunConfig()
    if config_file:
        load_config_file(cfg, config_file)
    for key, value in overrides.items():
        set_key(cfg, key, value)
    apply_env(cfg)
    return cfg


def write_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in cfg.flat_items().items()]
    path.write_text("\n".join(lines) + "\n")


def clone_config(cfg: RunConfig) -> RunConfig:
    return dataclasses.replace(
        cfg,
        model=dataclasses.replace(cfg.model),
        train=dataclasses.replace(cfg.train),
        data=dataclasses.replace(cfg.data),
        loss=dataclasses.replace(cfg.loss),
    )
