"""YAML experiment files and ``key=value`` overrides.

A file is one flat mapping: every :class:`TrainConfig` field plus the
experiment keys ``run_count``, ``seeds``, ``sweep``, ``smoothing_window`` and
``summary_every``. Dotted override keys reach into nested mappings, e.g.
``domain_options.teammate=stubborn`` or ``adam.lr=3e-4``.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Any, Iterable

import yaml

from amrl.errors import ConfigurationError
from amrl.experiment import ExperimentConfig
from amrl.trainer import TrainConfig

TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
EXPERIMENT_KEYS = {f.name for f in fields(ExperimentConfig)} - {"train"}
FLOAT_SECTIONS = ("adam", "loss")


def load_mapping(path: str | Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must be a mapping at top level")
    return data


def apply_overrides(data: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Return a copy of ``data`` with each ``dotted.key=value`` applied (values parsed as YAML)."""
    out = yaml.safe_load(yaml.safe_dump(data)) or {}
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = _scalar(raw)
    return out


def _scalar(raw: str) -> Any:
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads "3e-4" as a string
        try:
            return float(value)
        except ValueError:
            pass
    return value


def _floats(section: dict) -> dict:
    # YAML 1.1 reads "1e-4" as a string
    try:
        return {k: float(v) for k, v in section.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"non-numeric optimizer/loss setting: {exc}") from exc


def build_config(data: dict[str, Any]) -> ExperimentConfig:
    unknown = set(data) - TRAIN_KEYS - EXPERIMENT_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    train_kw = {k: v for k, v in data.items() if k in TRAIN_KEYS}
    for section in FLOAT_SECTIONS:
        if section in train_kw:
            train_kw[section] = _floats(train_kw[section])
    exp_kw = {k: v for k, v in data.items() if k in EXPERIMENT_KEYS}
    try:
        return ExperimentConfig(train=TrainConfig(**train_kw), **exp_kw)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    data = load_mapping(path) if path is not None else {}
    return build_config(apply_overrides(data, overrides))
