"""Experiment configuration: a single JSON document with strict fields."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from cpeal.datastore import SynthSpec
from cpeal.errors import ConfigError, ValidationError
from cpeal.heads import DEFAULT_CTX, DEFAULT_LOGIT_SCALE
from cpeal.selection import STRATEGIES
from cpeal.trainer import TrainConfig


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "prompt"  # prompt | lora
    ctx: int = DEFAULT_CTX
    logit_scale: float = DEFAULT_LOGIT_SCALE
    rank: int = 2
    lora_scale: float = 1.0
    lora_base: str = "class_mean"  # class_mean | orthonormal
    lora_base_shots: int = 1


DEFAULT_SYNTH = SynthSpec(
    num_classes=10, dim=32, per_class=200, class_separation=4.0,
    within_class_scale=1.0, test_fraction=0.25, seed=0,
)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: Optional[str] = None
    synth: Optional[SynthSpec] = DEFAULT_SYNTH
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    strategies: tuple[str, ...] = ("random", "entropy", "cpeal")
    cycles: int = 8
    seeds: tuple[int, ...] = (0, 1, 2)
    budget_per_cycle: Optional[int] = None  # None means K
    initial_labeled: int = 0
    ece_bins: int = 15
    save_train_logs: bool = False
    output_dir: str = "results"

    def validate(self) -> "ExperimentConfig":
        if (self.dataset_path is None) == (self.synth is None):
            raise ConfigError("set exactly one of dataset_path and synth")
        if self.synth is not None:
            try:
                self.synth.validate()
            except ValidationError as exc:
                raise ConfigError(f"synth: {exc}") from exc
        if self.head.kind not in ("prompt", "lora"):
            raise ConfigError(f"head.kind must be 'prompt' or 'lora', got {self.head.kind!r}")
        if self.head.lora_base not in ("class_mean", "orthonormal"):
            raise ConfigError("head.lora_base must be 'class_mean' or 'orthonormal'")
        if self.head.ctx < 1 or self.head.rank < 1 or self.head.lora_base_shots < 1:
            raise ConfigError("head.ctx, head.rank and head.lora_base_shots must be >= 1")
        if not (self.head.logit_scale > 0 and self.head.lora_scale > 0):
            raise ConfigError("head scales must be positive")
        try:
            self.train.validate()
        except ValidationError as exc:
            raise ConfigError(f"train: {exc}") from exc
        if not self.strategies:
            raise ConfigError("strategies must be a non-empty list")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"unknown strategies {bad}; choose from {', '.join(STRATEGIES)}")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("duplicate strategies")
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if not self.seeds or any(s < 0 for s in self.seeds) or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list of distinct non-negative integers")
        if self.budget_per_cycle is not None and self.budget_per_cycle < 1:
            raise ConfigError("budget_per_cycle must be >= 1")
        if self.initial_labeled < 0 or self.ece_bins < 1:
            raise ConfigError("initial_labeled must be >= 0 and ece_bins >= 1")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["strategies"] = list(self.strategies)
        d["seeds"] = list(self.seeds)
        del d["train"]["seed"]  # per-run seeds come from `seeds`
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _coerce(path: str, value: Any, ftype) -> Any:
    """Type-check one JSON leaf against a dataclass field annotation string."""
    t = str(ftype)
    optional = "Optional" in t or "None" in t
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{path}: null not allowed")
    if "bool" in t:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if "int" in t and "tuple" not in t:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if "float" in t:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if "str" in t and "tuple" not in t:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if "tuple" in t:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        inner = "int" if "int" in t else "str"
        return tuple(_coerce(f"{path}[{i}]", v, inner) for i, v in enumerate(value))
    return value


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if cls is TrainConfig:
        fields.pop("seed")
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        nested = {"synth": SynthSpec, "head": HeadConfig, "train": TrainConfig}.get(name) if cls is ExperimentConfig else None
        if nested is not None and value is not None:
            kwargs[name] = _build(nested, value, sub)
        else:
            kwargs[name] = _coerce(sub, value, fields[name].type)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if isinstance(data, dict) and "dataset_path" in data and data["dataset_path"] is not None and "synth" not in data:
        data = {**data, "synth": None}
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc
    return config_from_dict(data)
