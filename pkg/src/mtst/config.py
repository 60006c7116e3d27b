"""Composite run configuration: JSON file + dotted overrides + named presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .data import SynthConfig
from .encoder import EncoderConfig
from .model import FusionConfig
from .selftrain import SelfTrainConfig
from .trainer import FINETUNE_LR, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # "synthetic" or "dir"
    path: str | None = None    # dir with labeled/unlabeled/validation/test .jsonl
    format: str = "jsonl"
    multi_labels: tuple[str, ...] | None = None  # None: synthetic categories
    main_labels: tuple[str, ...] = ("hate", "offensive", "normal")
    field_map: dict = field(default_factory=dict)
    reject_budget: float = 0.01
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass(frozen=True)
class TokenizerConfig:
    vocab_size: int = 8192
    n_max: int = 128


@dataclass(frozen=True)
class FeatureConfig:
    lexicon_path: str | None = None
    len_cap: int = 280


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5


@dataclass(frozen=True)
class BaselineConfig:
    reg: float = 1e-4
    steps: int = 300
    lr: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    self_training: bool = True
    selftrain: SelfTrainConfig = field(default_factory=SelfTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _coerce(value, default):
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _build(cls, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key: {prefix}{key}")
    default = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(default, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, current)
    try:
        return replace(default, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


def from_dict(data):
    return _build(RunConfig, data)


def load(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return from_dict(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, overrides):
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config key: {key}")
            node = node[p]
        if parts[-1] not in node and not (isinstance(node, dict) and parts[-2:-1] == ["field_map"]):
            raise ConfigError(f"unknown config key: {key}")
        node[parts[-1]] = _parse_value(raw)
    return from_dict(data)


def with_values(cfg, **dotted):
    """Programmatic overrides, e.g. ``with_values(cfg, **{"train.lr": 1e-3})``."""
    data = cfg.to_dict()
    for key, value in dotted.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key: {key}")
        node[parts[-1]] = value
    return from_dict(data)


# --- presets ----------------------------------------------------------------

def preset(name):
    base = RunConfig()
    if name == "default":
        return base
    if name == "finetune":
        # pretrained-encoder fine-tuning settings; too slow to learn from scratch
        return with_values(base, **{"train.lr": FINETUNE_LR})
    if name == "synthetic":
        # desk-scale bilingual corpus with planted labels, 10% labeled
        return with_values(base, **{
            "data.synth.n_samples": 4000,
            "data.synth.labeled_fraction": 0.1,
            "data.synth.markers_per_category": 2,
            "data.synth.filler_vocab": 100,
            "tokenizer.vocab_size": 1024,
            "tokenizer.n_max": 32,
            "train.lr": 1e-3,
            "train.epochs": 20,
            "train.early_stop_patience": 3,
            "selftrain.iterations": 3,
            "selftrain.acceptance_rule": "joint_confidence",
            # fresh init per round: the final model gets the same training budget
            # as the no-self-training ablation, so any gain is the pseudo-labels'
            "selftrain.from_scratch": True,
        })
    if name == "synthetic-fast":
        # same corpus fully labeled, 3-epoch schedule
        return with_values(preset("synthetic"), **{
            "data.synth.labeled_fraction": 1.0,
            "train.epochs": 3,
            "self_training": False,
        })
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("default", "finetune", "synthetic", "synthetic-fast")


# --- ablations ---------------------------------------------------------------

ABLATIONS = ("baseline_encoder", "without_self_training", "without_multi_label", "full")


def ablation(cfg, name):
    """Config transformation disabling exactly one component."""
    if name == "full":
        return cfg
    if name == "baseline_encoder":
        # plain encoder: no handcrafted features, no self-training
        return with_values(cfg, **{"fusion.use_features": False, "self_training": False})
    if name == "without_self_training":
        return with_values(cfg, **{"self_training": False})
    if name == "without_multi_label":
        # the joint acceptance rule reads the (now absent) multi-label head
        return with_values(cfg, **{"fusion.lam": 0.0, "fusion.multi_head": False,
                                   "selftrain.acceptance_rule": "main_confidence"})
    raise ConfigError(f"unknown ablation {name!r}")

