"""Flat ``key = value`` config files.

One setting per line, ``#`` starts a comment, blank lines are ignored::

    # world.cfg
    n_users = 500
    clickbait_fraction = 0.5

Values are coerced to the type of the matching dataclass field's default.
Unknown keys are an error that names the key.
"""

from __future__ import annotations

from dataclasses import MISSING, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_lines(lines, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_lines(text.splitlines(), str(path))


def parse_overrides(pairs) -> dict[str, str]:
    """``["a=1", "b = x"]`` from repeated ``--set`` flags."""
    return parse_lines(list(pairs or ()), "--set")


def _coerce(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"bad value for {key!r}: {value!r} is not a valid {kind}") from None
    return value


def build(cls, raw: dict, base: dict | None = None):
    """Instantiate dataclass ``cls`` from string settings layered over ``base``."""
    defaults = {}
    for f in fields(cls):
        if f.default is not MISSING:
            defaults[f.name] = f.default
        elif f.default_factory is not MISSING:  # type: ignore[misc]
            defaults[f.name] = f.default_factory()  # type: ignore[misc]
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {cls.__name__}: {', '.join(unknown)}")
    values = dict(base or {})
    for key, value in raw.items():
        values[key] = _coerce(value, defaults[key], key) if isinstance(value, str) else value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from None


def dump(obj) -> str:
    """Render a dataclass as a config file that :func:`build` reads back."""
    lines = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        lines.append(f"{f.name} = {repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"
