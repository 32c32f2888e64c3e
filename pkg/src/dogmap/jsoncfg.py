"""Strict JSON config loading shared by scene and pipeline configs."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError


def load_json_file(path):
    """Parse a JSON file, surfacing line/column diagnostics on failure."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def check_keys(mapping, context: str, required=(), optional=()) -> None:
    """Reject unknown keys and report missing required ones."""
    if not isinstance(mapping, dict):
        raise ConfigError(f"{context}: expected an object, got {type(mapping).__name__}")
    allowed = set(required) | set(optional)
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown} (allowed: {sorted(allowed)})")
    missing = sorted(set(required) - set(mapping))
    if missing:
        raise ConfigError(f"{context}: missing required keys {missing}")


def as_number(value, context: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{context}: expected a number, got {value!r}")
    return float(value)


def as_int(value, context: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{context}: expected an integer, got {value!r}")
    return value


def as_bool(value, context: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{context}: expected a boolean, got {value!r}")
    return value


def as_vector(value, length: int, context: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise ConfigError(f"{context}: expected a list of {length} numbers, got {value!r}")
    return tuple(as_number(v, f"{context}[{i}]") for i, v in enumerate(value))
