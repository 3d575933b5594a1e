"""Run configuration: a YAML file mirroring ``TrainConfig``.

Example (all keys optional, shown with their defaults)::

    phase1_epochs: 80
    phase2_epochs: 60
    lr0: 2.0e-4
    decay_start: 30
    n_decom: 9
    batch_size: 1
    seed: 0
    resolution: 256
    extractor: vgg16        # identity | vgg16 | vgg16-random
    weights: {alpha: 1.0, beta: 10.0, gamma: 0.005, sigma: 1.0}
    dataset: {kind: mt, root: /data/MT}   # or {kind: synth, n: 64, seed: 0}
    teacher_checkpoint: runs/teacher/teacher.pt
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

from .losses import LossWeights


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synth"     # synth | mt
    root: str | None = None
    n: int = 64
    seed: int = 0
    test_fraction: float | None = None


@dataclass(frozen=True)
class TrainConfig:
    phase1_epochs: int = 80
    phase2_epochs: int = 60
    lr0: float = 2e-4
    decay_start: int = 30
    weights: LossWeights = LossWeights()
    n_decom: int = 9
    batch_size: int = 1
    seed: int = 0
    resolution: int = 256
    dataset: DatasetConfig = DatasetConfig()
    teacher_checkpoint: str | None = None
    extractor: str = "vgg16"
    betas: tuple[float, float] = (0.5, 0.999)
    disc_base: int = 64
    augment: bool = True
    reset_optimizer: bool = True
    n_taps: int = 2

    def validate(self) -> "TrainConfig":
        for name in ("phase1_epochs", "phase2_epochs", "batch_size", "n_decom", "disc_base",
                     "n_taps"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("lr0", "must be > 0")
        if not 0 <= self.decay_start <= min(self.phase1_epochs, self.phase2_epochs):
            raise ConfigError("decay_start", "must lie in [0, phase epochs]")
        if self.resolution % 4 or self.resolution < 16:
            raise ConfigError("resolution", "must be a multiple of 4 and >= 16")
        if self.extractor not in ("identity", "vgg16", "vgg16-random"):
            raise ConfigError("extractor", f"unknown extractor {self.extractor!r}")
        if self.dataset.kind not in ("synth", "mt"):
            raise ConfigError("dataset.kind", f"must be 'synth' or 'mt', got {self.dataset.kind!r}")
        if self.dataset.kind == "synth" and self.dataset.n < 2:
            raise ConfigError("dataset.n", "need at least one image per domain")
        for k, v in dataclasses.asdict(self.weights).items():
            if v < 0:
                raise ConfigError(f"weights.{k}", "must be >= 0")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(sub, "unknown field")
        default = getattr(cls(), key)
        if isinstance(default, (LossWeights, DatasetConfig)):
            kwargs[key] = _build(type(default), value or {}, sub)
        elif key == "betas":
            if not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise ConfigError(sub, "expected two numbers")
            kwargs[key] = tuple(float(v) for v in value)
        else:
            kwargs[key] = _coerce(value, default, sub)
            if cls is LossWeights and kwargs[key] < 0:
                raise ConfigError(sub, "must be >= 0")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(path or "<root>", str(exc)) from None


def _coerce(value, default, path):
    if value is None or default is None:
        return value
    kind = type(default)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    try:
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected {kind.__name__}, got {value!r}") from None


def config_from_dict(data: dict | None) -> TrainConfig:
    return _build(TrainConfig, data or {}, "").validate()


def load_config(path) -> TrainConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML ({exc})") from None
    return config_from_dict(data)


def apply_overrides(config: TrainConfig, **overrides) -> TrainConfig:
    """Flag overrides; ``None`` values are ignored."""
    data = config.to_dict()
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)
