"""Run configuration: one JSON document with world/model/train/eval/paths sections.

Unknown sections or keys are rejected. ``effective()`` returns the fully
materialized configuration (every default filled in), which commands echo
into their output directory before doing any work.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from drp.backbones import BackboneConfig
from drp.errors import ConfigurationError
from drp.synthworld import WorldConfig
from drp.training import TrainConfig

HEATMAP_MODES = ("oracle", "score")


@dataclass
class EvalConfig:
    cutoff: int = 10
    heatmap_mode: str = "oracle"
    n_seeds: int = 5
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def validate(self) -> None:
        if self.cutoff < 1:
            raise ConfigurationError("eval.cutoff must be >= 1")
        if self.heatmap_mode not in HEATMAP_MODES:
            raise ConfigurationError(f"eval.heatmap_mode must be one of {HEATMAP_MODES}")
        if self.n_seeds < 1:
            raise ConfigurationError("eval.n_seeds must be >= 1")
        self.split = tuple(float(f) for f in self.split)


@dataclass
class PathsConfig:
    dataset: str = "data.jsonl"
    checkpoint: str = "model.npz"
    reports: str = "reports"


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    model: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    SECTIONS = ("world", "model", "train", "eval", "paths")

    def validate(self) -> None:
        self.world.validate()
        self.model.validate()
        self.train.validate()
        self.eval.validate()

    def effective(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in self.SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.effective(), indent=2, sort_keys=True) + "\n"


_SECTION_TYPES = {"world": WorldConfig, "model": BackboneConfig, "train": TrainConfig,
                  "eval": EvalConfig, "paths": PathsConfig}
_TUPLE_KEYS = {("model", "units"), ("train", "alpha_init"), ("train", "beta_init"), ("eval", "split")}


def _build_section(name: str, values) -> object:
    cls = _SECTION_TYPES[name]
    if not isinstance(values, dict):
        raise ConfigurationError(f"section {name!r} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {name}: {', '.join(unknown)}")
    kwargs = {k: tuple(v) if (name, k) in _TUPLE_KEYS and isinstance(v, list) else v
              for k, v in values.items()}
    return cls(**kwargs)


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigurationError("configuration must be a JSON object")
    unknown = sorted(set(doc) - set(RunConfig.SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown section(s): {', '.join(unknown)}")
    cfg = RunConfig(**{name: _build_section(name, doc[name]) for name in doc})
    try:
        cfg.validate()
    except TypeError as exc:  # e.g. a string where a number belongs
        raise ConfigurationError(f"invalid value type in configuration: {exc}") from None
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    """Read a configuration file; ``None`` gives the all-defaults configuration."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
    return from_dict(doc)
