"""Flat key-value text files with dotted section keys.

One ``key = value`` pair per line, ``#`` comments and blank lines ignored.
Values stay strings at parse time; the typed getters coerce on demand and
name the offending key on failure. Run configs and dataset schemas both use
this format.
"""

from __future__ import annotations

from pathlib import Path

__all__ = [
    "ConfigError",
    "parse_kv_text",
    "parse_kv_file",
    "get_str",
    "get_int",
    "get_float",
    "get_bool",
    "get_list",
]


class ConfigError(Exception):
    """A malformed or invalid configuration value."""


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def parse_kv_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))


_MISSING = object()


def _fetch(pairs: dict[str, str], key: str, default):
    if key in pairs:
        return pairs[key]
    if default is _MISSING:
        raise ConfigError(f"missing required key {key!r}")
    return default


def get_str(pairs: dict[str, str], key: str, default=_MISSING) -> str:
    value = _fetch(pairs, key, default)
    return value if isinstance(value, str) else value


def get_int(pairs: dict[str, str], key: str, default=_MISSING) -> int:
    value = _fetch(pairs, key, default)
    if not isinstance(value, str):
        return value
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected integer, got {value!r}") from None


def get_float(pairs: dict[str, str], key: str, default=_MISSING) -> float:
    value = _fetch(pairs, key, default)
    if not isinstance(value, str):
        return value
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected number, got {value!r}") from None


def get_bool(pairs: dict[str, str], key: str, default=_MISSING) -> bool:
    value = _fetch(pairs, key, default)
    if not isinstance(value, str):
        return value
    lowered = value.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"key {key!r}: expected true/false, got {value!r}")


def get_list(pairs: dict[str, str], key: str, default=_MISSING) -> list[str]:
    value = _fetch(pairs, key, default)
    if not isinstance(value, str):
        return value
    items = [item.strip() for item in value.split(",")]
    return [item for item in items if item]
