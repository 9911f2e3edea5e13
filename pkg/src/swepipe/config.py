"""Flat key-value config files (INI sections) feeding the CLI.

Every key can be overridden by a CLI flag of the same name; section
headers only group keys, the flat key namespace must not collide.
"""

from __future__ import annotations

import configparser
from pathlib import Path


class ConfigError(ValueError):
    pass


def load_config(path: str | Path) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string("[_root]\n" + p.read_text())
    except configparser.Error as e:
        raise ConfigError(f"malformed config {p}: {e}") from e
    flat: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in flat:
                raise ConfigError(f"duplicate key {key!r} across sections")
            flat[key] = value
    return flat


def coerce(value: str, like) -> object:
    """Parse a config string into the type of the argparse default; with no
    default to imitate, numeric-looking strings become numbers."""
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if like is None:
        for cast in (int, float):
            try:
                return cast(value)
            except ValueError:
                continue
    return value
