"""Run configuration: one YAML file covering data, training, sampling and planning."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from tryonvid.errors import ConfigurationError
from tryonvid.pipeline.train import TrainConfig


@dataclass
class DataConfig:
    frames: int = 8
    height: int = 64
    width: int = 48
    velocity: tuple[int, int] = (0, 2)
    torso: tuple[int, int] = (24, 16)
    fill_value: float = 0.5


@dataclass
class SampleConfig:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    num_steps: int = 12


@dataclass
class KeyframeConfig:
    d_pose: float = 0.2
    s_max: int = 4
    mode: str = "greedy"
    overlap: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("greedy", "literal"):
            raise ConfigurationError(f"unknown keyframe mode {self.mode!r}")


@dataclass
class AblateConfig:
    lambda_agn: list = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.5])
    ct: list = field(default_factory=lambda: [True, False])
    steps: int = 500
    lr: float = 1e-3


# Training keys owned elsewhere: the seed is run-level, dump_dir comes from --out.
_TRAIN_EXCLUDED = {"seed", "dump_dir"}


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    train: dict = field(default_factory=dict)
    sample: SampleConfig = field(default_factory=SampleConfig)
    keyframes: KeyframeConfig = field(default_factory=KeyframeConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def __post_init__(self):
        valid = {f.name for f in dataclasses.fields(TrainConfig)} - _TRAIN_EXCLUDED
        unknown = set(self.train) - valid
        if unknown:
            raise ConfigurationError(f"unknown train keys: {sorted(unknown)}")
        self.train_config()

    def train_config(self, **overrides) -> TrainConfig:
        try:
            return TrainConfig(**{**self.train, **overrides, "seed": self.seed})
        except (TypeError, ValueError) as e:
            raise ConfigurationError(str(e)) from e

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"] = {k: v for k, v in dataclasses.asdict(self.train_config()).items() if k not in _TRAIN_EXCLUDED}
        d["data"]["velocity"] = list(self.data.velocity)
        d["data"]["torso"] = list(self.data.torso)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {"data": DataConfig, "sample": SampleConfig, "keyframes": KeyframeConfig, "ablate": AblateConfig}


def _build(cls, raw: Any, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigurationError(f"section {name!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigurationError(f"unknown {name} keys: {sorted(unknown)}")
    kw = dict(raw)
    for k in ("velocity", "torso"):
        if k in kw:
            kw[k] = tuple(kw[k])
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"{name}: {e}") from e


def config_from_dict(raw: Optional[dict]) -> RunConfig:
    raw = dict(raw or {})
    unknown = set(raw) - {"seed", "train", *_SECTIONS}
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    train = raw.get("train") or {}
    if not isinstance(train, dict):
        raise ConfigurationError("section 'train' must be a mapping")
    sections = {k: _build(cls, raw.get(k), k) for k, cls in _SECTIONS.items()}
    return RunConfig(seed=int(raw.get("seed", 0)), train=dict(train), **sections)


def load_config(path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path}: invalid YAML ({e})") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
