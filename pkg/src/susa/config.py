"""Layered run configuration: defaults < JSON file < command-line overrides.

The resolved config is embedded in every output artifact for provenance.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, asdict

from .model import ModelConfig
from .trainer import TrainConfig
from .world import WorldParams

SEED_ENV_VAR = "SUSA_SEED"


@dataclass
class RunConfig:
    world: WorldParams = field(default_factory=WorldParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    d_th: float = 3.0
    ndtw_norm: str = "path"        # "path" (as defined) or "reference"
    unseen_seed_offset: int = 500  # disjoint world-seed range for the unseen split
    unseen_ambiguity: float | None = None  # distribution-shift knob for unseen worlds

    def to_dict(self) -> dict:
        return asdict(self)


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV_VAR, "0"))


def load_run_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus `section.key=value` overrides."""
    cfg = RunConfig(seed=default_seed())
    data = {}
    if path:
        with open(path) as f:
            data = json.load(f)
    for section in ("world", "model", "train"):
        if section in data:
            base = getattr(cfg, section)
            setattr(cfg, section, dataclasses.replace(base, **data[section]))
    for key in ("seed", "d_th", "ndtw_norm", "unseen_seed_offset", "unseen_ambiguity"):
        if key in data:
            setattr(cfg, key, data[key])
    for item in overrides or []:
        _apply_override(cfg, item)
    _sync_seeds(cfg)
    return cfg


def _apply_override(cfg: RunConfig, item: str):
    if "=" not in item:
        raise ValueError(f"override must look like section.key=value, got {item!r}")
    key, raw = item.split("=", 1)
    parts = key.split(".")
    target = cfg
    for part in parts[:-1]:
        target = getattr(target, part)
    leaf = parts[-1]
    if not hasattr(target, leaf):
        raise ValueError(f"unknown config key {key!r}")
    current = getattr(target, leaf)
    setattr(target, leaf, _coerce(raw, current))


def _coerce(raw: str, current):
    if raw == "adaptive":
        return "adaptive"
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float) or current is None:
        try:
            return float(raw)
        except ValueError:
            return raw
    if isinstance(current, tuple):
        return tuple(float(x) for x in raw.split(","))
    return raw


def _sync_seeds(cfg: RunConfig):
    """The top-level seed drives every component seed unless set explicitly."""
    cfg.world.seed = cfg.world.seed or cfg.seed
    cfg.model.seed = cfg.model.seed or cfg.seed
    cfg.train.seed = cfg.train.seed or cfg.seed
