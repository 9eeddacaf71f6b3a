"""Nested run configuration: JSON file plus dotted ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict
from pathlib import Path

from .data import NoiseCase
from .search import SearchConfig
from .supernet import PartSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _defaults(cls, drop=("seed",)):
    return {k: v for k, v in asdict(cls()).items() if k not in drop}


# Desk-scale overrides of the full-scale defaults. With 64-128 patches per run,
# batch 16 gives only a handful of steps per epoch; small batches and larger
# learning rates keep the step count useful at the same compute.
DESK_SEARCH = {"batch": 4, "lr_w": 2e-3, "lr_arch": 3e-3}
DESK_TRAIN = {"batch": 4, "lr_max": 2e-3}


def default_config():
    part = PartSpec().to_dict()
    del part["seed"]
    noise = _defaults(NoiseCase)
    return {
        "name": "desk",
        "runs_dir": "runs",
        "seed": 0,
        "dtype": "float64",
        "data": {
            "corpus": None,
            "n_images": 24,
            "image_size": 64,
            "patch": 32,
            "count": 128,
            "split_ratio": 0.5,
            "eval_count": 32,
            "noise": noise,
            "eval_sigmas": [15.0, 25.0, 50.0],
        },
        "part": part,
        "prior": {"width": 16, "depth": 2, "epochs": 60, "lr": 2e-3, "batch": 4, "patience": 8},
        "lut": {"reps": 1000, "chunks": 10, "warmups": 10, "input_size": 32, "batch": 1, "path": None},
        "search": {**_defaults(SearchConfig), **DESK_SEARCH},
        "train": {**_defaults(TrainConfig), **DESK_TRAIN},
        "stats": {"feature_batch": 8},
    }


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _coerce(default, value, key):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(value, bool) and isinstance(value, int):
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, str) and isinstance(value, str):
        return value
    if isinstance(default, list) and isinstance(value, list):
        return value
    raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")


def merge(base, update, prefix=""):
    """Recursively merge ``update`` into a copy of ``base``; unknown keys are rejected."""
    out = copy.deepcopy(base)
    for k, v in update.items():
        key = f"{prefix}{k}"
        if k not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{key}: expected an object")
            out[k] = merge(out[k], v, key + ".")
        else:
            out[k] = _coerce(out[k], v, key)
    return out


def apply_override(cfg, assignment):
    """Apply one ``dotted.key=value`` override; returns the new config."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    path, text = assignment.split("=", 1)
    nested = _parse_value(text)
    for part in reversed(path.split(".")):
        nested = {part: nested}
    return merge(cfg, nested)


class RunConfig:
    """Validated nested configuration with builders for the typed sections."""

    def __init__(self, d=None, overrides=()):
        cfg = merge(default_config(), d or {})
        self.overrides = list(overrides)
        for o in self.overrides:
            cfg = apply_override(cfg, o)
        self.d = cfg
        try:
            self.part_spec()
            self.search_config()
            self.train_config()
            self.noise_case()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path=None, overrides=()):
        d = {}
        if path is not None:
            try:
                d = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls(d, overrides)

    def __getitem__(self, key):
        return self.d[key]

    @property
    def seed(self):
        return self.d["seed"]

    def run_dir(self, out=None):
        return Path(out) if out else Path(self.d["runs_dir"]) / self.d["name"]

    def part_spec(self):
        return PartSpec.from_dict({**self.d["part"], "seed": self.seed})

    def search_config(self):
        return SearchConfig(**{**self.d["search"], "seed": self.seed})

    def train_config(self):
        return TrainConfig(**{**self.d["train"], "seed": self.seed})

    def noise_case(self):
        return NoiseCase(**{**self.d["data"]["noise"], "seed": self.seed})

    def to_json(self):
        return json.dumps(self.d, indent=1, sort_keys=True)

    def write(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())
