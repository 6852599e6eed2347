"""Run configuration: YAML loading, command-line overrides, presets and manifests."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from .analysis import AnalysisThresholds
from .ecm import THREE_LAYER, TWO_LAYER, AgentConfig
from .environment import ConfigError, EnvConfig
from .training import TrainConfig, default_train_config

SECTIONS = {
    "environment": EnvConfig,
    "agent": AgentConfig,
    "training": TrainConfig,
    "analysis": AnalysisThresholds,
}

# Training durations per environment follow the settling times used for the
# parameter-scan figure; environments differ from the default in one parameter.
PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "default3x2x3": {"environment": {}, "agent": {"architecture": THREE_LAYER},
                     "training": {"total_rounds": 5_000_000}},
    "twolayer": {"environment": {}, "agent": {"architecture": TWO_LAYER},
                 "training": {"total_rounds": 10_000}},
    "vars2": {"environment": {"num_variables": 2}, "training": {"total_rounds": 500_000}},
    "vars4": {"environment": {"num_variables": 4}, "training": {"total_rounds": 50_000_000}},
    "vars5": {"environment": {"num_variables": 5}, "training": {"total_rounds": 100_000_000}},
    "exps1": {"environment": {"experiments_per_variable": 1}, "training": {"total_rounds": 500_000}},
    "exps3": {"environment": {"experiments_per_variable": 3}, "training": {"total_rounds": 5_000_000}},
    "exps4": {"environment": {"experiments_per_variable": 4}, "training": {"total_rounds": 5_000_000}},
    "values2": {"environment": {"values_per_variable": 2}, "training": {"total_rounds": 500_000}},
    "values4": {"environment": {"values_per_variable": 4}, "training": {"total_rounds": 10_000_000}},
}


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    agent: AgentConfig
    train: TrainConfig
    analysis: AnalysisThresholds

    def to_dict(self) -> dict:
        return {
            "environment": self.env.to_dict(),
            "agent": self.agent.to_dict(),
            "training": self.train.to_dict(),
            "analysis": self.analysis.to_dict(),
        }


def _coerce(value, annotation, where):
    """Convert YAML/CLI scalars to the field's declared type."""
    origin = typing.get_origin(annotation)
    args = [a for a in typing.get_args(annotation) if a is not type(None)]
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
        if origin is typing.Union and type(None) in typing.get_args(annotation):
            return None
        raise ConfigError(f"{where}: value may not be empty")
    if origin is typing.Union:
        return _coerce(value, args[0], where)
    try:
        if annotation is bool:
            if isinstance(value, str):
                if value.lower() in ("true", "yes", "1"):
                    return True
                if value.lower() in ("false", "no", "0"):
                    return False
                raise ValueError(value)
            return bool(value)
        if annotation is int:
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(value) if isinstance(value, int) else int(f)
        if annotation is float:
            return float(value)
        if annotation is str:
            return str(value)
        if origin is tuple:
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split()]
            return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot interpret {value!r} as {getattr(annotation, '__name__', annotation)}") from None
    return value


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _key_lines(text: str) -> dict[str, int]:
    """Map 'section.key' (and 'section') to 1-based line numbers in a YAML document."""
    lines: dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if not isinstance(root, yaml.MappingNode):
        return lines
    for knode, vnode in root.value:
        lines[knode.value] = knode.start_mark.line + 1
        if isinstance(vnode, yaml.MappingNode):
            for k2, _ in vnode.value:
                lines[f"{knode.value}.{k2.value}"] = k2.start_mark.line + 1
    return lines


def _merge(dst: dict, src: dict) -> None:
    for section, values in src.items():
        dst.setdefault(section, {}).update(values)


def resolve(data: Optional[dict] = None, preset: Optional[str] = None,
            overrides: Optional[dict[str, Any]] = None, key_lines: Optional[dict] = None,
            source: str = "<config>") -> RunConfig:
    """Build a fully resolved :class:`RunConfig`.

    Precedence: built-in defaults < preset < config file < ``overrides``
    (``{"section.key": value}``).
    """
    data = dict(data or {})
    key_lines = key_lines or {}
    preset = data.pop("preset", None) if preset is None else preset
    data.pop("preset", None)

    def where(key):
        line = key_lines.get(key)
        return f"{source}:{line}: {key}" if line else f"{source}: {key}"

    merged: dict[str, dict] = {s: {} for s in SECTIONS}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        _merge(merged, PRESETS[preset])
    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"{where(section)}: unknown section (expected one of {sorted(SECTIONS)})")
        if not isinstance(values, dict):
            raise ConfigError(f"{where(section)}: expected a mapping")
        merged[section].update(values)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError(f"override {dotted!r}: expected <section>.<key>")
        merged[section][key] = value

    built = {}
    for section, cls in SECTIONS.items():
        types = _field_types(cls)
        kwargs = {}
        for key, value in merged[section].items():
            if key not in types:
                raise ConfigError(f"{where(section + '.' + key)}: unknown key")
            kwargs[key] = _coerce(value, types[key], where(section + "." + key))
        if section == "training":
            arch = built["agent"].architecture
            try:
                base = default_train_config(arch, kwargs.get("total_rounds"))
            except ConfigError as exc:
                raise ConfigError(f"{source}: training: {exc}") from None
            # curve_window / eval_interval follow total_rounds unless set explicitly
            kwargs = {**dataclasses.asdict(base), **kwargs}
        try:
            built[section] = cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"{source}: {section}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {section}: {exc}") from None
    return RunConfig(built["environment"], built["agent"], built["training"], built["analysis"])


def load_run_config(path=None, preset: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Read a YAML run config (sections: environment, agent, training, analysis)."""
    if path is None:
        return resolve(None, preset, overrides)
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return resolve(data, preset, overrides, _key_lines(text), str(path))


def write_manifest(out_dir, command: str, run: Optional[RunConfig], seeds: list[int], extra: Optional[dict] = None):
    from . import __version__

    manifest = {
        "tool": "psconcepts",
        "version": __version__,
        "command": command,
        "output_dir": str(out_dir),
        "seeds": [int(s) for s in seeds],
    }
    if run is not None:
        manifest.update(run.to_dict())
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
