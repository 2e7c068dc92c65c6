"""One declarative JSON run config covering generation, model, and training.

Schema (all sections and fields optional; defaults shown in the dataclasses):

    {
      "seed": 7,
      "model":  { ... ModelConfig fields ... },
      "train":  { ... TrainConfig fields ... },
      "synth":  { ... SynthConfig fields ... }
    }

A top-level "seed" is copied into train.seed and synth.seed unless those
sections set their own; command-line flags override everything (precedence:
flag > file > default).  Unknown fields are rejected by name.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .model import ModelConfig
from .synth import SynthConfig
from .trainer import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_run_config"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int
    model: ModelConfig
    train: TrainConfig
    synth: SynthConfig


def _build(section: str, cls, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{section}.{key} is not a recognized field")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} config: {exc}") from exc


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a run config file; `overrides` maps dotted field
    paths (e.g. "train.learning_rate") to replacement values."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")

    for key in raw:
        if key not in ("seed", "model", "train", "synth"):
            raise ConfigError(f"{key} is not a recognized config section")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    model_raw = dict(raw.get("model", {}))
    train_raw = dict(raw.get("train", {}))
    synth_raw = dict(raw.get("synth", {}))
    train_raw.setdefault("seed", seed)
    synth_raw.setdefault("seed", seed)

    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        target = {"model": model_raw, "train": train_raw, "synth": synth_raw}.get(section)
        if target is None:
            raise ConfigError(f"cannot override {dotted}")
        target[key] = value

    if "categorical_vocab_sizes" in synth_raw:
        synth_raw["categorical_vocab_sizes"] = tuple(synth_raw["categorical_vocab_sizes"])

    return RunConfig(
        seed=seed,
        model=_build("model", ModelConfig, model_raw),
        train=_build("train", TrainConfig, train_raw),
        synth=_build("synth", SynthConfig, synth_raw),
    )
