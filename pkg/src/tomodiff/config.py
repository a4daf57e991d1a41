"""Plain-text (TOML) config files with per-command sections.

Command-line flags override config values; config values override built-in
defaults. Unknown keys in a consumed section are rejected to catch typos.
"""

from __future__ import annotations

from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError, MissingInputError


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve(
    config: dict, section: str, flags: dict, defaults: dict
) -> dict:
    """Merge defaults < config-file section < explicitly passed flags."""
    file_section = config.get(section, {})
    if not isinstance(file_section, dict):
        raise ConfigError(f"config section [{section}] must be a table")
    unknown = set(file_section) - set(defaults)
    if unknown:
        raise ConfigError(
            f"unknown keys in config section [{section}]: {', '.join(sorted(unknown))}"
        )
    resolved = dict(defaults)
    resolved.update(file_section)
    resolved.update({k: v for k, v in flags.items() if v is not None})
    return resolved
