"""Run configuration: one flat record covering bins, camera, training, paths.

Values are layered lowest to highest: built-in defaults, then a JSON config
file, then TERRAPREF_* environment variables, then explicit overrides (CLI
flags). The resolved record is what every command logs, so a run can be
reproduced from its log line alone.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .camera import CameraModel
from .kinematics import PreferenceSet, build_preference_set
from .learner import TrainConfig

__all__ = [
    "ENV_PREFIX",
    "ConfigError",
    "RunConfig",
    "config_to_dict",
    "load_config_file",
    "resolve_config",
]

ENV_PREFIX = "TERRAPREF_"


class ConfigError(ValueError):
    """A config file, env var, or override is malformed or names unknown fields."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, in one place."""

    # candidate-trajectory bins
    m: int = 21
    w_min: float = -1.0
    w_max: float = 1.0
    v: float = 1.0
    dt: float = 0.1
    horizon: int = 30
    # segmentation camera
    image_width: int = 640
    image_height: int = 480
    hfov_deg: float = 90.0
    camera_height: float = 1.0
    pitch_deg: float = 30.0
    # training
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 256
    split: float = 0.8
    seed: int = 0
    # paths; scenario may be a built-in name or a scenario JSON file
    scenario: str | None = None
    dataset: str = "dataset.json"
    model: str = "model.json"
    logs: str = "runs"

    def prefset(self) -> PreferenceSet:
        return build_preference_set(
            m=self.m, w_min=self.w_min, w_max=self.w_max, v=self.v, dt=self.dt, n=self.horizon
        )

    def camera(self) -> CameraModel:
        return CameraModel(
            width=self.image_width,
            height=self.image_height,
            horizontal_fov=math.radians(self.hfov_deg),
            mount_height=self.camera_height,
            pitch_down=math.radians(self.pitch_deg),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            split=self.split,
            seed=self.seed,
            m=self.m,
        )


_INT_FIELDS = {"m", "horizon", "image_width", "image_height", "epochs", "batch_size", "seed"}
_FLOAT_FIELDS = {"w_min", "w_max", "v", "dt", "hfov_deg", "camera_height", "pitch_deg", "lr", "split"}
_PATH_FIELDS = {"scenario", "dataset", "model", "logs"}
_FIELD_NAMES = [f.name for f in fields(RunConfig)]


def _validated(name: str, value: Any, source: str) -> Any:
    if name in _INT_FIELDS:
        # bool is an int subclass; a config saying `"seed": true` is a mistake
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{source}: field {name!r} must be an integer, got {value!r}")
        return value
    if name in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{source}: field {name!r} must be a number, got {value!r}")
        return float(value)
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"{source}: field {name!r} must be a string path, got {value!r}")
    return value


def _coerce_text(name: str, text: str, source: str) -> Any:
    try:
        if name in _INT_FIELDS:
            return int(text)
        if name in _FLOAT_FIELDS:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{source}: field {name!r} got unparseable value {text!r}") from exc
    return text


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a JSON config file into a validated partial field dict."""
    source = str(path)
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {source}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {source} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {source} must hold a JSON object")
    unknown = sorted(set(doc) - set(_FIELD_NAMES))
    if unknown:
        raise ConfigError(f"config file {source} has unknown fields: {', '.join(unknown)}")
    return {name: _validated(name, value, source) for name, value in doc.items()}


def resolve_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Layer defaults, config file, TERRAPREF_* env vars, and overrides."""
    merged: dict[str, Any] = {f.name: f.default for f in fields(RunConfig)}
    if path is not None:
        merged.update(load_config_file(path))
    env = os.environ if env is None else env
    for name in _FIELD_NAMES:
        key = ENV_PREFIX + name.upper()
        if key in env:
            merged[name] = _coerce_text(name, env[key], f"env {key}")
    if overrides:
        unknown = sorted(set(overrides) - set(_FIELD_NAMES))
        if unknown:
            raise ConfigError(f"unknown config overrides: {', '.join(unknown)}")
        for name, value in overrides.items():
            if value is None:
                continue
            if isinstance(value, str) and name not in _PATH_FIELDS:
                value = _coerce_text(name, value, "override")
            merged[name] = _validated(name, value, "override")
    return RunConfig(**merged)


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    """Field dict in declaration order, ready for JSON echo."""
    return {name: getattr(config, name) for name in _FIELD_NAMES}
