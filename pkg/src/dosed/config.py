"""Experiment configuration: one versioned YAML document holding every section.

Unknown keys are rejected. Relative paths resolve against the output
directory (``--out``), which defaults to the config file's directory.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .grid import GridConfig
from .infer import InferConfig
from .metrics import MetricsConfig
from .model import ModelConfig
from .preprocess import AugmentConfig, PreprocessConfig
from .synth import ScorerNoise, SynthConfig
from .train import TrainConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class Paths:
    data_dir: str = "data"
    manifest: str = "data/manifest.json"
    checkpoint: str = "run/model.json"
    train_log: str = "run/train_log.csv"
    predictions_dir: str = "run/predictions"
    consensus_dir: str = "run/consensus"
    evaluation: str = "run/evaluation.json"
    report_dir: str = "run/report"


@dataclass(frozen=True)
class ConsensusConfig:
    kappa: float = 0.5
    min_duration_s: float = 0.0
    sampling_rate_hz: float | None = None


@dataclass(frozen=True)
class RunConfig:
    """Which manifest splits ``predict`` and ``evaluate`` operate on."""

    predict_splits: tuple[str, ...] = ("test",)
    evaluate_splits: tuple[str, ...] = ("test",)
    train_target_kappa: float = 0.5
    theta_from_checkpoint: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    run: RunConfig = field(default_factory=RunConfig)
    base_dir: Path = field(default=Path("."), compare=False)

    def path(self, name: str) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else self.base_dir / p

    def check(self) -> None:
        """Cross-section consistency."""
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if self.grid.window_s != self.preprocess.window_s:
            raise ConfigError(f"grid.window_s {self.grid.window_s} != preprocess.window_s {self.preprocess.window_s}")
        if self.model.grid != self.grid:
            raise ConfigError("model grid differs from grid section")


# ------------------------------------------------------------------ parsing

_TUPLE_FIELDS = {"default_sizes_s", "theta_grid", "iou_thresholds", "scale_range", "event_duration_s",
                 "residual_amplitude", "desat_percent", "breathing_hz", "splits", "predict_splits",
                 "evaluate_splits", "normalized_range"}


def _build(cls, raw: Any, where: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: mapping expected, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _NESTED.get(cls, {}):
            kwargs[key] = _build(_NESTED[cls][key], value, f"{where}.{key}")
        elif key == "clip" and value is not None:
            kwargs[key] = tuple(tuple(float(v) for v in pair) for pair in value)
        elif key in _TUPLE_FIELDS and value is not None:
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_NESTED = {
    SynthConfig: {"scorer_noise": ScorerNoise},
    ModelConfig: {"grid": GridConfig},
}


def _set_dotted(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted!r}: {k!r} is not a section")
    node[keys[-1]] = value


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None,
                base_dir: str | Path | None = None) -> ExperimentConfig:
    """Parse a YAML config (or defaults when ``path`` is None) with dotted-key overrides."""
    doc: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top-level mapping expected")
    for key, value in (overrides or {}).items():
        _set_dotted(doc, key, value)
    base = Path(base_dir) if base_dir is not None else (Path(path).parent if path is not None else Path("."))
    sections = {
        "paths": Paths, "preprocess": PreprocessConfig, "augment": AugmentConfig, "grid": GridConfig,
        "train": TrainConfig, "infer": InferConfig, "synth": SynthConfig, "consensus": ConsensusConfig,
        "metrics": MetricsConfig, "run": RunConfig,
    }
    unknown = set(doc) - set(sections) - {"version", "seed", "model"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    built = {name: _build(cls, doc.get(name), name) for name, cls in sections.items()}
    grid = built["grid"]
    model_raw = dict(doc.get("model") or {})
    if "grid" in model_raw:
        raise ConfigError("model.grid is taken from the grid section")
    model = _build(ModelConfig, model_raw, "model")
    model = dataclasses.replace(model, grid=grid)
    if "augment" in (doc.get("train") or {}):
        raise ConfigError("train.augment is taken from the augment section")
    train = dataclasses.replace(built["train"], augment=built["augment"])
    try:
        version = int(doc.get("version", CONFIG_VERSION))
        seed = int(doc.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"version/seed must be integers ({exc})") from None
    cfg = ExperimentConfig(
        version=version, seed=seed, paths=built["paths"], preprocess=built["preprocess"],
        augment=built["augment"], grid=grid, model=model, train=train, infer=built["infer"],
        synth=built["synth"], consensus=built["consensus"], metrics=built["metrics"], run=built["run"],
        base_dir=base,
    )
    cfg.check()
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-data view of a config (tuples as lists), suitable for YAML/JSON dumps."""

    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        if isinstance(v, Path):
            return str(v)
        return v

    d = plain(cfg)
    d.pop("base_dir", None)
    d["model"].pop("grid", None)
    d["train"].pop("augment", None)
    return d


def dump_default(path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(ExperimentConfig()), sort_keys=False))
