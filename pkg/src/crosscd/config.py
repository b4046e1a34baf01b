"""Training configuration and its YAML representation."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .model import ModelConfig
from .synthesis import ConfigurationError, SynthesisConfig

OUTPUT_DIR_ENV = "CROSSCD_OUTPUT_DIR"


@dataclass
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    # stop after this many optimizer steps (schedule still spans all epochs when unset)
    max_iters: int | None = None
    data_root: str | None = None
    train_split: str = "train"
    val_split: str = "val"
    train_ratio: float = 4.0  # r_d used to degrade equal-size pairs
    eval_batch_size: int = 8
    output_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.synthesis, dict):
            self.synthesis = SynthesisConfig(**self.synthesis)
        for name in ("lr0", "batch_size", "epochs", "train_ratio", "eval_batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigurationError("momentum and weight_decay must be non-negative")
        if self.train_ratio < 1:
            raise ConfigurationError(f"train_ratio must be >= 1, got {self.train_ratio}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return TrainConfig.from_dict(data)


def dump_config(cfg: TrainConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def model_hash(model_cfg: ModelConfig) -> str:
    return config_hash(asdict(model_cfg))
