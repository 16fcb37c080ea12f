"""Flat ``key = value`` configuration files.

One assignment per line, ``#`` starts a comment, blank lines are ignored.
Values stay strings until a typed getter pulls them out.
"""

from __future__ import annotations

from typing import Optional


class ConfigError(ValueError):
    """Malformed config text or a missing/invalid key."""


def parse_kv(lines) -> dict[str, str]:
    """Parse an iterable of lines (or an open file) into a key/value dict."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        out[key] = value.strip()
    return out


def load_kv(path: str) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_kv(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def get_str(cfg: dict[str, str], key: str, default: Optional[str] = None) -> str:
    if key in cfg:
        return cfg[key]
    if default is None:
        raise ConfigError(f"missing required key {key!r}")
    return default


def get_float(cfg: dict[str, str], key: str, default: Optional[float] = None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse float from {cfg[key]!r}") from None


def get_int(cfg: dict[str, str], key: str, default: Optional[int] = None) -> int:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse int from {cfg[key]!r}") from None
