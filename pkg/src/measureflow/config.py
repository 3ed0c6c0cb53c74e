"""Flat key-value experiment configs.

Schema: one `key = value` assignment per line; `#` starts a comment line;
values are parsed as int, float, bool (`true` / `false`), or string, and a
comma turns the value into a tuple of such scalars.  Serialization is
canonical (sorted keys, round-trip float formatting), so parse -> serialize
-> parse is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


def _parse_scalar(text: str):
    text = text.strip()
    if text.lower() == "true":
        return True
    if text.lower() == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    entries: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        entries: dict[str, Any] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"line {lineno}: empty key")
            if key in entries:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            value = value.strip()
            if "," in value:
                entries[key] = tuple(_parse_scalar(p) for p in value.split(","))
            else:
                entries[key] = _parse_scalar(value)
        return cls(entries)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        return cls.from_text(text)

    def to_text(self) -> str:
        lines = []
        for key in sorted(self.entries):
            value = self.entries[key]
            if isinstance(value, tuple):
                rendered = ",".join(_format_scalar(v) for v in value)
            else:
                rendered = _format_scalar(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    def updated(self, **kw) -> "ExperimentConfig":
        entries = dict(self.entries)
        entries.update(kw)
        return ExperimentConfig(entries)

    # -- typed getters -------------------------------------------------------

    def get(self, key: str, default=None):
        return self.entries.get(key, default)

    def require(self, key: str):
        if key not in self.entries:
            raise ConfigError(f"missing required config key {key!r}")
        return self.entries[key]

    def get_int(self, key: str, default: int | None = None, minimum: int | None = None) -> int:
        value = self.entries.get(key, default)
        if value is None:
            raise ConfigError(f"missing required config key {key!r}")
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise ConfigError(f"config key {key!r} must be >= {minimum}, got {value}")
        return value

    def get_float(
        self, key: str, default: float | None = None, positive: bool = False
    ) -> float:
        value = self.entries.get(key, default)
        if value is None:
            raise ConfigError(f"missing required config key {key!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be numeric, got {value!r}")
        value = float(value)
        if positive and value <= 0:
            raise ConfigError(f"config key {key!r} must be positive, got {value}")
        return value

    def get_bool(self, key: str, default: bool = False) -> bool:
        value = self.entries.get(key, default)
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be true/false, got {value!r}")
        return value

    def get_str(self, key: str, default: str | None = None) -> str:
        value = self.entries.get(key, default)
        if value is None:
            raise ConfigError(f"missing required config key {key!r}")
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
        return value

    def get_floats(self, key: str, default: tuple | None = None) -> tuple[float, ...]:
        value = self.entries.get(key, default)
        if value is None:
            raise ConfigError(f"missing required config key {key!r}")
        if not isinstance(value, tuple):
            value = (value,)
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"config key {key!r} must list numbers, got {v!r}")
            out.append(float(v))
        return tuple(out)

    def echo(self) -> dict:
        """JSON-safe canonical view of the entries."""
        return {
            key: list(value) if isinstance(value, tuple) else value
            for key, value in sorted(self.entries.items())
        }
