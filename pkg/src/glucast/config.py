"""Flat key-value run configuration.

Grammar, one directive per line:

    key = value        # trailing comments allowed
    # full-line comment

Keys are lowercase identifiers (dots allowed), values are bare strings;
typed access goes through the get_* helpers. Later assignments override
earlier ones.
"""
from __future__ import annotations

import re

_KEY_RE = re.compile(r"^[a-z_][a-z0-9_.]*$")
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


class ConfigError(ValueError):
    """Malformed config text or a value that fails coercion."""


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not _KEY_RE.match(key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text, source=str(path))


def _missing(key):
    raise ConfigError(f"missing required config key {key!r}")


def get_str(cfg: dict, key: str, default=None) -> str:
    if key not in cfg:
        return default if default is not None else _missing(key)
    return cfg[key]


def get_int(cfg: dict, key: str, default=None) -> int:
    if key not in cfg:
        return default if default is not None else _missing(key)
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected integer, got {cfg[key]!r}") from None


def get_float(cfg: dict, key: str, default=None) -> float:
    if key not in cfg:
        return default if default is not None else _missing(key)
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected number, got {cfg[key]!r}") from None


def get_bool(cfg: dict, key: str, default=None) -> bool:
    if key not in cfg:
        return default if default is not None else _missing(key)
    word = cfg[key].lower()
    if word in _TRUE:
        return True
    if word in _FALSE:
        return False
    raise ConfigError(f"config key {key!r}: expected boolean, got {cfg[key]!r}")


def get_optional_int(cfg: dict, key: str, default=None):
    """Integer or the literal 'none' (meaning disabled)."""
    if key not in cfg:
        return default
    if cfg[key].lower() == "none":
        return None
    return get_int(cfg, key)


def get_float_list(cfg: dict, key: str, default=None) -> list:
    if key not in cfg:
        return default if default is not None else _missing(key)
    items = [part.strip() for part in cfg[key].split(",") if part.strip()]
    try:
        return [float(v) for v in items]
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected comma-separated numbers") from None


def get_str_list(cfg: dict, key: str, default=None) -> list:
    if key not in cfg:
        return default if default is not None else _missing(key)
    return [part.strip() for part in cfg[key].split(",") if part.strip()]
