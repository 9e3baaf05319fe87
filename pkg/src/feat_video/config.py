"""Plain-text ``key = value`` configuration files.

Every key is a field of :class:`TrainConfig` or of its nested
:class:`ModelConfig`; ``#`` starts a comment. Example::

    # toy model
    d = 64
    n_triplets = 2
    patch = 4
    frames = 8
    height = 32
    width = 32
    timesteps = 50
    variant = full
    lr = 1e-4
    batch_size = 8
    steps = 2000
    flip = true
    seed = 0
"""

from __future__ import annotations

import dataclasses
import os
from typing import Union, get_type_hints

from .backbone import ModelConfig
from .training import TrainConfig

__all__ = ["parse_config", "load_config", "format_config", "config_keys"]

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _field_types() -> dict[str, type]:
    types = {}
    for cls in (ModelConfig, TrainConfig):
        hints = get_type_hints(cls)
        for f in dataclasses.fields(cls):
            if f.name != "model":
                types[f.name] = hints[f.name]
    return types


def config_keys() -> list[str]:
    return sorted(_field_types())


def _convert(key: str, raw: str, typ: type):
    if typ is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError:
        raise ValueError(f"{key}: expected {typ.__name__}, got {raw!r}") from None
    return raw


def parse_config(text: str, base: TrainConfig = TrainConfig()) -> TrainConfig:
    types = _field_types()
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        changes[key] = _convert(key, raw, types[key])
    return base.replace(**changes)


def load_config(path: Union[str, os.PathLike]) -> TrainConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
