"""Experiment configuration: one JSON document per run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .training import DEFAULT_LR_GRID, ModelSpec, TrainConfig

__all__ = ["ConfigError", "ExperimentConfig", "PRESETS", "preset"]


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    data: str = "data/umls"
    format: str = "openke"
    model: str = "TransE"
    entity_dim: Optional[int] = None
    dim: int = 512
    liftnet: str = "none"
    layers: int = 2
    p: int = 2
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_ks: tuple = (1, 3, 10)
    out: str = "runs/default"

    def __post_init__(self):
        if self.format not in ("openke", "tsv"):
            raise ConfigError(f"format must be openke or tsv, got {self.format!r}")
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", _train_from_dict(self.train))
        object.__setattr__(self, "eval_ks", tuple(int(k) for k in self.eval_ks))
        try:
            self.spec()
        except ValueError as err:
            raise ConfigError(str(err)) from None

    @property
    def seed(self) -> int:
        return self.train.seed

    def spec(self) -> ModelSpec:
        return ModelSpec(self.model, self.dim, self.entity_dim, self.liftnet, self.layers, self.p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_ks"] = list(self.eval_ks)
        if d["train"]["lr_grid"] is not None:
            d["train"]["lr_grid"] = list(d["train"]["lr_grid"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    def override(self, **changes) -> "ExperimentConfig":
        """Copy with top-level and ``train`` fields replaced; ``None`` values are ignored."""
        train_keys = {f.name for f in fields(TrainConfig)}
        top, tr = {}, {}
        for k, v in changes.items():
            if v is None:
                continue
            (tr if k in train_keys else top)[k] = v
        try:
            train = replace(self.train, **tr) if tr else self.train
            return replace(self, train=train, **top)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None


def _train_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown train keys: {', '.join(unknown)}")
    try:
        return TrainConfig(**d)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


# 16-dim entities lifted to 512 by the two-layer default network, full lr
# grid, 500 epochs.  Margin, norm order and precision are our own choices
# and apply equally to lifted and plain models.
PRESETS = {
    "reproduce": dict(
        entity_dim=16,
        dim=512,
        liftnet="tc",
        layers=2,
        p=1,
        train=dict(lr_grid=list(DEFAULT_LR_GRID), max_epochs=500, margin=4.0, dtype="float32"),
    ),
}


def preset(name: str, **changes) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    base = dict(PRESETS[name])
    base["train"] = dict(base["train"])
    return ExperimentConfig.from_dict(base).override(**changes)
