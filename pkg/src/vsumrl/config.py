"""Run configuration: one JSON document driving every command.

Every section is optional and fully defaulted; unknown keys are rejected so
typos fail loudly before any data is touched.  Command-line flags override
file values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .model import ModelConfig
from .rewards import RewardConfig
from .synth import SyntheticSpec
from .training import TrainConfig

# JSON spellings that differ from the dataclass field names
_KEY_ALIASES = {
    "lambda": "lam",
}


@dataclass(frozen=True)
class SegmentationConfig:
    budget: float = 0.15
    selector: str = "greedy"
    max_shots: int | None = None
    penalty_weight: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.budget <= 1.0:
            raise ValueError("budget must be in (0,1]")
        if self.selector not in ("greedy", "knapsack"):
            raise ValueError(f"selector must be greedy or knapsack, got {self.selector!r}")


@dataclass(frozen=True)
class MetricsConfig:
    budget: float = 0.15
    selector: str = "knapsack"
    rho_percents: tuple[float, ...] = (50.0, 15.0, 5.0)

    def __post_init__(self) -> None:
        for rho in self.rho_percents:
            if not 0.0 < rho <= 100.0:
                raise ValueError(f"rho percent {rho} outside (0,100]")


@dataclass(frozen=True)
class PathsConfig:
    manifest: str | None = None
    checkpoint: str | None = None
    out_dir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    unimodal: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def resolved_train(self) -> TrainConfig:
        """Train settings with the run-level seed and modality flag applied."""
        return _replace_dataclass(self.train, seed=self.seed, unimodal=self.unimodal)

    def resolved_reward(self) -> RewardConfig:
        if self.unimodal:
            return _replace_dataclass(self.reward, use_saliency=False)
        return self.reward


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "reward": RewardConfig,
    "segmentation": SegmentationConfig,
    "metrics": MetricsConfig,
    "synthetic": SyntheticSpec,
    "paths": PathsConfig,
}


def _replace_dataclass(obj, **updates):
    return replace(obj, **updates)


def _build_section(cls, doc: dict[str, Any], where: str):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        name = _KEY_ALIASES.get(key, key)
        if name not in known:
            raise ConfigError(f"unknown key {key!r} in section {where}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {where}: {exc}") from exc


def config_from_dict(doc: dict[str, Any]) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    top_known = {"seed", "workers", "unimodal", *(_SECTIONS.keys())}
    for key in doc:
        if key not in top_known:
            raise ConfigError(f"unknown top-level config key {key!r}")

    kwargs: dict[str, Any] = {}
    for name in ("seed", "workers", "unimodal"):
        if name in doc:
            kwargs[name] = doc[name]
    for name, cls in _SECTIONS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ConfigError(f"section {name!r} must be an object")
            kwargs[name] = _build_section(cls, doc[name], name)
    try:
        cfg = RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(doc)
