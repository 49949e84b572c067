"""Run configuration: a YAML document with ``data``, ``model``, ``train``, ``eval``
and ``output`` sections plus a single ``seed``.

Every section maps onto a dataclass; unknown keys anywhere are rejected with
the dotted path of the offending key.  Example::

    seed: 0
    data: {root: runs/data, samples_per_class: 100}
    model: {widths: [32, 64, 64], depth: 1, heads: 2}
    train: {epochs: 50, clip_frames: 8, points_per_frame: 512}
    output: runs/train
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .synthdata import DEFAULT_CLASSES, MAX_DISTANCE, MIN_DISTANCE, DatasetConfig, parse_class
from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSection:
    root: str = "data"
    classes: tuple[str, ...] = DEFAULT_CLASSES
    samples_per_class: int = 100
    subjects_train: int = 20
    subjects_test: int = 10
    points_per_frame: int = 768
    duration: int = 24
    distance_range: tuple[float, float] = (MIN_DISTANCE, MAX_DISTANCE)
    height_jitter: float = 0.02
    pitch_jitter: float = 0.5
    platform_speed_max: float = 0.0
    clutter: bool = False


@dataclass(frozen=True)
class ModelSection:
    widths: tuple[int, int, int] = (64, 128, 256)
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2
    tube_hidden: int = 32
    k_max: int = 32
    temporal_radius: int = 1
    radii: tuple[float, float, float] = (0.2, 0.4, 0.8)
    candidate_k: tuple[int, int, int] = (32, 32, 32)
    temporal_stride: int = 2
    omega_init: tuple[float, float, float] = (1.0, 1.0, 1.0)
    layered: bool = True
    mns: bool = True
    eeq: bool = True


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 50
    base_lr: float = 0.01
    milestones: tuple[int, ...] = (20, 30)
    gamma: float = 0.1
    momentum: float = 0.9
    batch_size: int = 8
    clip_frames: int = 8
    points_per_frame: int = 512
    eval_every: int = 1


@dataclass(frozen=True)
class EvalSection:
    batch_size: int = 16
    checkpoint: str | None = None  # default: <output>/checkpoint.ptvw if present
    export_embeddings: bool = False
    ablation_epochs: int | None = None  # shorter budget for ablation/sweep cells
    sweep_radii: tuple[float, ...] = (0.1, 0.2, 0.5, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output: str = "runs"
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- derived component configs -----------------------------------------
    def dataset_config(self) -> DatasetConfig:
        d = dataclasses.asdict(self.data)
        d.pop("root")
        return DatasetConfig(**d, seed=self.seed)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**dataclasses.asdict(self.model), num_classes=len(self.data.classes),
                           points_per_frame=self.train.points_per_frame, seed=self.seed)

    def train_config(self, epochs: int | None = None) -> TrainConfig:
        d = dataclasses.asdict(self.train)
        if epochs is not None:
            # keep the schedule's shape when the budget shrinks
            d["milestones"] = tuple(m * epochs // d["epochs"] for m in d["milestones"])
            d["epochs"] = epochs
        return TrainConfig(**d, seed=self.seed)


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
        return _build(tp, value, where + ".")
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, raw: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
    values = {k: _coerce(v, hints[k], prefix + k) for k, v in raw.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


def validate(cfg: RunConfig) -> RunConfig:
    """Check cross-field constraints by building every component config."""
    for i, name in enumerate(cfg.data.classes):
        try:
            parse_class(name)
        except ValueError as exc:
            raise ConfigError(f"data.classes[{i}]: {exc}") from None
    for section, build in (("data", cfg.dataset_config), ("model", cfg.model_config), ("train", cfg.train_config)):
        try:
            build()
        except ValueError as exc:
            raise ConfigError(f"{section}: {exc}") from None
    return cfg


def from_dict(raw: dict | None) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return validate(_build(RunConfig, raw))


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return from_dict(raw)


def to_dict(cfg: RunConfig) -> dict:
    def plain(v):
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v

    return plain(dataclasses.asdict(cfg))


def dump(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False), encoding="utf-8")
