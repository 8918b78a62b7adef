"""Run configuration: defaults, JSON config files, and flag overrides.

Defaults follow the pipeline constants (0.19 MPP reference, 1024-pixel
tiles, 25-pixel match distance, 1%/50% TPS cutoffs).  Config files are
nested JSON mirroring the dataclass layout; unknown or ill-typed keys
are all reported at once, and command-line flags win over the file.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .detect import PeakParams
from .inference import StainParams
from .slide_io import REFERENCE_MPP
from .synth import SynthSpec


class ConfigError(ValueError):
    """Raised with every violated config key listed."""


@dataclass
class RunConfig:
    reference_mpp: float = REFERENCE_MPP
    tile_size: int = 1024
    white_threshold: int = 235
    min_tissue_fraction: float = 0.05
    disk_radius: int = 7
    match_max_dist: float = 25.0
    cutoffs: tuple[float, float] = (1.0, 50.0)
    sweep_min: float = 2.0
    sweep_max: float = 75.0
    sweep_step: float = 1.0
    backend: str = "deconv"
    workers: int = 1
    seed: int = 0
    peaks: PeakParams = field(default_factory=PeakParams)
    stain: StainParams = field(default_factory=StainParams)
    synth: SynthSpec = field(default_factory=SynthSpec)


def _coerce_scalar(current: Any, value: Any, path: str, errors: list[str]) -> Any:
    if isinstance(current, bool):
        if not isinstance(value, bool):
            errors.append(f"{path}: expected a boolean, got {value!r}")
            return current
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected an integer, got {value!r}")
            return current
        if isinstance(value, float) and not value.is_integer():
            errors.append(f"{path}: expected an integer, got {value!r}")
            return current
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number, got {value!r}")
            return current
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            errors.append(f"{path}: expected a string, got {value!r}")
            return current
        return value
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(current):
            errors.append(f"{path}: expected a list of {len(current)} values, got {value!r}")
            return current
        return tuple(
            _coerce_scalar(c, v, f"{path}[{i}]", errors)
            for i, (c, v) in enumerate(zip(current, value))
        )
    errors.append(f"{path}: unsupported value {value!r}")
    return current


def _merge(obj: Any, data: dict, prefix: str, errors: list[str]) -> Any:
    names = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in names:
            errors.append(f"{path}: unknown key")
            continue
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                errors.append(f"{path}: expected a nested object")
                continue
            updates[key] = _merge(current, value, path + ".", errors)
        else:
            updates[key] = _coerce_scalar(current, value, path, errors)
    if errors:
        return obj
    try:
        return dataclasses.replace(obj, **updates)
    except ValueError as exc:
        errors.append(f"{prefix.rstrip('.') or 'config'}: {exc}")
        return obj


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus flag overrides.

    Overrides are a flat mapping of dotted keys (e.g. "peaks.min_distance")
    applied after the file.  Every unknown or ill-typed key is collected
    and reported in one ConfigError.
    """
    cfg = RunConfig()
    errors: list[str] = []
    if path is not None:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path}: top level must be an object")
        cfg = _merge(cfg, data, "", errors)
    if overrides:
        nested: dict = {}
        for dotted, value in overrides.items():
            parts = dotted.split(".")
            node = nested
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = value
        cfg = _merge(cfg, nested, "", errors)
    if errors:
        raise ConfigError("config validation failed:\n  " + "\n  ".join(sorted(errors)))
    return cfg


def config_from_dict(data: dict) -> RunConfig:
    """Rebuild a RunConfig from a snapshot produced by config_to_dict."""
    if not isinstance(data, dict):
        raise ConfigError("config snapshot must be an object")
    errors: list[str] = []
    cfg = _merge(RunConfig(), data, "", errors)
    if errors:
        raise ConfigError("config snapshot invalid:\n  " + "\n  ".join(sorted(errors)))
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    """Nested plain-dict snapshot (tuples become lists, JSON-ready)."""

    def convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        return value

    return convert(cfg)
