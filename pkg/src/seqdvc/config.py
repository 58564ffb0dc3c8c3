"""Run configuration: one JSON document with a section per pipeline stage.

A single run seed feeds every stage (training, fine-tuning, tagger training,
sampling and synthetic data), so sections carry no seed of their own.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .concept_features import CPTConfig
from .generation import DecodeConfig
from .model import ModelConfig
from .pretraining import TrainConfig

RUN_CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _default_finetune() -> dict:
    return {"steps": 1000, "lr": 1e-3, "warmup": 50}


DATA_KEYS = {
    "synthetic": dict,
    "n_heldout": int,
    "train_annotations": str,
    "train_features": str,
    "eval_annotations": str,
    "eval_features": str,
    "clip_annotations": str,
    "clip_features": str,
    "extra_references": list,
    "vocab": str,
    "vocab_min_freq": int,
    "cpt_checkpoint": str,
    "init_checkpoint": str,
    "ed_checkpoint": str,
    "ec_checkpoint": str,
    "submission": str,
}

EVAL_DEFAULTS = {
    "thresholds": [0.3, 0.5, 0.7, 0.9],
    "caption_tiou": 0.9,
    "inner_metric": "meteor_lite",
    "p_increase": 0.4,
    "p_reduce": 0.15,
    "audit_seeds": [0, 1, 2],
    "cpt_concepts": 8,
}


@dataclass
class RunConfig:
    seed: int = 0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=_default_finetune)
    cpt: dict = field(default_factory=dict)
    decode: dict = field(default_factory=dict)
    data: dict = field(default_factory=lambda: {"synthetic": {}, "n_heldout": 0})
    eval: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))

    def __post_init__(self):
        self.validate()

    # each accessor builds the typed config, injecting the run seed
    def model_config(self, **overrides) -> ModelConfig:
        return ModelConfig.from_dict({**self.model, **overrides})

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "seed": self.seed})

    def finetune_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.finetune, "seed": self.seed})

    def cpt_config(self) -> CPTConfig:
        return CPTConfig.from_dict({**self.cpt, "seed": self.seed})

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig.from_dict({**self.decode, "seed": self.seed})

    def synthetic_spec(self):
        from .data.synthetic import SyntheticSpec

        return SyntheticSpec.from_dict({**self.data.get("synthetic", {}), "seed": self.seed})

    def eval_value(self, key):
        return self.eval.get(key, EVAL_DEFAULTS[key])

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        for name in ("train", "finetune", "cpt", "decode"):
            if "seed" in getattr(self, name):
                raise ConfigError(f"{name}.seed is not configurable; use the top-level seed")
        for name in ("train", "finetune"):
            if "checkpoint_every" in getattr(self, name) and not isinstance(getattr(self, name)["checkpoint_every"], int):
                raise ConfigError(f"{name}.checkpoint_every must be an integer")
        for key, value in self.data.items():
            if key not in DATA_KEYS:
                raise ConfigError(f"unknown data key {key!r}")
            if not isinstance(value, DATA_KEYS[key]):
                raise ConfigError(f"data.{key} must be {DATA_KEYS[key].__name__}")
        if "seed" in self.data.get("synthetic", {}):
            raise ConfigError("data.synthetic.seed is not configurable; use the top-level seed")
        for key in self.eval:
            if key not in EVAL_DEFAULTS:
                raise ConfigError(f"unknown eval key {key!r}")
        if self.eval_value("inner_metric") not in ("meteor_lite", "cider"):
            raise ConfigError("eval.inner_metric must be meteor_lite or cider")
        try:
            self.model_config()
            self.train_config()
            self.finetune_config()
            self.cpt_config()
            self.decode_config()
            self.synthetic_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {"format_version": RUN_CONFIG_VERSION, **{f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        version = d.pop("format_version", RUN_CONFIG_VERSION)
        if version != RUN_CONFIG_VERSION:
            raise ConfigError(f"unsupported config format_version {version}")
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config sections: {sorted(bad)}")
        for name, value in d.items():
            if name != "seed" and not isinstance(value, dict):
                raise ConfigError(f"section {name!r} must be an object")
        return cls(**d)


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key[.sub]=value``; the value is JSON when it parses, else a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    if not all(path):
        raise ConfigError(f"bad override key {key!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    d = copy.deepcopy(d)
    for text in overrides:
        path, value = parse_override(text)
        node = d
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {'.'.join(path)}: {part} is not a section")
        node[path[-1]] = value
    return d


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    base = {}
    if path is not None:
        try:
            base = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(base, dict):
            raise ConfigError("config root must be an object")
    merged = RunConfig.from_dict(base).to_dict()
    merged = apply_overrides(merged, list(overrides))
    if seed is not None:
        merged["seed"] = seed
    return RunConfig.from_dict(merged)
