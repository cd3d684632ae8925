"""Layered run configuration: built-in defaults < YAML file < command-line flags."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any

import yaml

DEFAULTS: dict[str, Any] = {
    "seed": 42,
    "out": None,
    "data": {"root": None, "pairs": None},
    "preprocess": {
        "target_size": [64, 64],
        "augment": True,
        "hflip_p": 0.5,
        "grayflip_p": 0.2,
        "contrast_range": [0.9, 1.1],
        "brightness_range": [-0.1, 0.1],
    },
    "loss": {"contrastive_margin": 0.6, "triplet_margin": 1.0},
    "train": {
        "mode": "siamese",
        "backbone": "cnn-mini",
        "lr": 1e-3,
        "weight_decay": 0.0,
        "batch_size": 32,
        "epochs": 30,
        "val_fraction": 0.1,
        "workers": 0,
        "class_sampling": "uniform",
        "val_batches": 4,
        "backbone_config": {},
    },
    "synth": {"scribes": 8, "train": 200, "test": 50, "canvas": 64},
    "pairs": {"n": 2000},
    "evaluate": {"checkpoint": None, "max_epoch": None, "batch_size": 64},
}


class ConfigError(ValueError):
    """Invalid configuration file or value (usage-level failure)."""


def load_config_file(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return data


def merge(base: dict, override: dict, _path: str = "") -> dict:
    """Recursive merge; keys unknown to ``base`` are rejected, ``None`` overrides are skipped."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{_path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if value is None:
            continue
        if isinstance(base[key], dict) and base[key] and not isinstance(value, dict):
            raise ConfigError(f"config key {where!r} must be a mapping")
        if isinstance(base[key], dict) and base[key]:
            out[key] = merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(file_path=None, flags: dict | None = None) -> dict:
    cfg = DEFAULTS
    if file_path is not None:
        cfg = merge(cfg, load_config_file(file_path))
    if flags:
        cfg = merge(cfg, flags)
    return cfg


def write_resolved(cfg: dict, out_dir, command: str) -> Path:
    path = Path(out_dir) / "resolved_config.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump({"command": command, **cfg}, sort_keys=True), encoding="utf-8")
    return path
