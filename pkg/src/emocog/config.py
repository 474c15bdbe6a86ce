"""Flat ``key = value`` run-configuration files.

Blank lines and lines starting with ``#`` are ignored. Keys use the long
flag names, with either dashes or underscores (``batch-size`` or
``batch_size``). Values stay strings here; the command that consumes them
converts and validates.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ConfigError(f"{source}:{lineno}", "empty key")
        if key in out:
            raise ConfigError(key, f"duplicate key at {source}:{lineno}")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))
