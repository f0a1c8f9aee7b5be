"""Run configuration: nested sections, defaults, and strict key validation.

A config file fills any subset of the sections; everything else defaults.
Unknown keys are rejected with the full key path and the nearest valid key,
so typos fail loudly instead of silently training with defaults. Environment
variables prefixed FORGESEG_ override file values (FORGESEG_TRAIN__STEPS=50).
"""

from __future__ import annotations

import dataclasses
import difflib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .errors import ValidationError
from .forge import CorpusConfig
from .model import ModelConfig
from .seeding import stable_hash
from .train import TrainConfig, branches_for_mode

ENV_PREFIX = "FORGESEG_"


@dataclass
class EvalConfig:
    split: str = "test"
    threshold_det: float = 0.5
    threshold_seg: float = 0.5
    batch_size: int = 64

    def validate(self) -> None:
        if not 0.0 < self.threshold_det < 1.0:
            raise ValidationError(f"eval.threshold_det must lie in (0, 1), got {self.threshold_det}")
        if not 0.0 < self.threshold_seg < 1.0:
            raise ValidationError(f"eval.threshold_seg must lie in (0, 1), got {self.threshold_seg}")
        if self.batch_size <= 0:
            raise ValidationError(f"eval.batch_size must be positive, got {self.batch_size}")


_SECTIONS = {
    "data": CorpusConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    data: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.data.validate()
        self.model.validate()
        self.train.validate()
        self.eval.validate()
        h, w, _ = self.model.input_size
        if (h, w) != (self.data.image_size, self.data.image_size):
            raise ValidationError(
                f"model.input_size {self.model.input_size} does not match "
                f"data.image_size {self.data.image_size}"
            )
        needed = branches_for_mode(self.train.branch_mode)
        missing = set(needed) - set(self.model.branches)
        if missing:
            raise ValidationError(
                f"train.branch_mode {self.train.branch_mode!r} needs branches "
                f"{sorted(missing)} absent from model.branches {self.model.branches}"
            )

    def to_dict(self) -> dict:
        out: dict = {"seed": self.seed}
        for name in _SECTIONS:
            section = getattr(self, name)
            raw = dataclasses.asdict(section)
            for key, value in raw.items():
                if isinstance(value, tuple):
                    raw[key] = list(value)
            out[name] = raw
        return out

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())


def _suggest(key: str, valid: list[str]) -> str:
    close = difflib.get_close_matches(key, valid, n=1, cutoff=0.0)
    hint = f"; nearest valid key: {close[0]!r}" if close else ""
    return hint + f" (valid keys: {', '.join(sorted(valid))})"


def _coerce(path: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{path}: expected bool, got {type(value).__name__} ({value!r})")
        return value
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ValidationError(f"{path}: expected int, got {type(value).__name__} ({value!r})")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValidationError(f"{path}: expected float, got {type(value).__name__} ({value!r})")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(f"{path}: expected str, got {type(value).__name__} ({value!r})")
        return value
    if isinstance(default, (tuple, list)):
        if not isinstance(value, (tuple, list)):
            raise ValidationError(f"{path}: expected list, got {type(value).__name__} ({value!r})")
        return tuple(value)
    return value


def _build_section(cls, raw: Mapping, path: str):
    defaults = cls()
    valid = [f.name for f in dataclasses.fields(cls)]
    kwargs = {}
    for key, value in raw.items():
        if key not in valid:
            raise ValidationError(f"unknown key {path}.{key}" + _suggest(key, valid))
        kwargs[key] = _coerce(f"{path}.{key}", value, getattr(defaults, key))
    return cls(**kwargs)


def parse_config(raw: Optional[Mapping], env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Build a RunConfig from a parsed mapping, then apply env overrides."""
    raw = dict(raw or {})
    if env is None:
        env = os.environ
    overrides = _env_overrides(env)
    for section, updates in overrides.items():
        if section is None:
            raw.update(updates)
        else:
            merged = dict(raw.get(section) or {})
            merged.update(updates)
            raw[section] = merged

    top_valid = ["seed", *_SECTIONS.keys()]
    sections = {}
    seed = 0
    model_keys: set[str] = set()
    for key, value in raw.items():
        if key not in top_valid:
            raise ValidationError(f"unknown key {key}" + _suggest(key, top_valid))
        if key == "seed":
            seed = _coerce("seed", value, 0)
            continue
        if not isinstance(value, Mapping):
            raise ValidationError(f"{key}: expected a mapping of settings, got {value!r}")
        if key == "model":
            model_keys = set(value.keys())
        sections[key] = _build_section(_SECTIONS[key], value, key)

    config = RunConfig(seed=seed, **sections)
    if "input_size" not in model_keys:
        # An unset model input follows the data size; an explicit one must match.
        size = config.data.image_size
        config.model.input_size = (size, size, config.model.input_size[2])
    config.validate()
    return config


def _env_overrides(env: Mapping[str, str]) -> dict:
    """Collect FORGESEG_* variables as {section or None: {key: parsed value}}."""
    out: dict = {}
    for name, text in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower()
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError:
            value = text
        if "__" in path:
            section, key = path.split("__", 1)
            if section not in _SECTIONS:
                raise ValidationError(
                    f"unknown section in {name}" + _suggest(section, list(_SECTIONS))
                )
            out.setdefault(section, {})[key] = value
        else:
            out.setdefault(None, {})[path] = value
    return out


def load_config(path: Path | str, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Read a YAML or JSON config file into a validated RunConfig."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        raw = json.loads(text)
    else:
        raw = yaml.safe_load(text)
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{path}: top level must be a mapping, got {type(raw).__name__}")
    return parse_config(raw, env=env)


def save_config(config: RunConfig, path: Path | str) -> None:
    """Serialize a RunConfig so load_config round-trips it."""
    path = Path(path)
    payload = config.to_dict()
    if path.suffix == ".json":
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    else:
        path.write_text(yaml.safe_dump(payload, sort_keys=True))
