"""Runtime settings resolved from flags, environment, a JSON file and defaults."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from gveval.errors import ConfigError

ENV_PREFIX = "GVEVAL_"
DEFAULT_CONFIG_FILE = "gveval.json"


@dataclass(frozen=True)
class Settings:
    """Backend and environment knobs. The API key itself is never stored here,
    only the name of the variable holding it."""

    model_id: str = "gpt-4o"
    base_url: str = "https://api.openai.com/v1"
    timeout: float = 120.0
    cache_dir: str = ".gveval-cache"
    api_key_env: str = "OPENAI_API_KEY"
    decoder_cmd: str | None = None
    rate_per_second: float = 0.0
    token_ceiling: int = 2_000_000

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(Settings)}


def _coerce(name: str, value: Any) -> Any:
    kind = _TYPES[name]
    try:
        if kind == "float":
            return float(value)
        if kind == "int":
            return int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"setting {name!r} expects a number, got {value!r}") from exc
    if value is None or value == "":
        return None if kind == "str | None" else value
    return str(value)


def _apply(base: Settings, values: Mapping[str, Any], source: str) -> Settings:
    changes = {}
    for key, value in values.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown setting {key!r} in {source}")
        changes[key] = _coerce(key, value)
    return replace(base, **changes)


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse the JSON config file: settings at top level, optional ``"eval"`` object."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def env_settings(environ: Mapping[str, str]) -> dict[str, str]:
    out = {}
    for name in _TYPES:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            out[name] = environ[key]
    return out


def resolve_settings(
    flags: Mapping[str, Any] | None = None,
    *,
    config_file: str | Path | None = None,
    environ: Mapping[str, str] | None = None,
) -> tuple[Settings, dict[str, Any]]:
    """Settings with precedence flags > env > config file > defaults.

    Returns the settings and the config file's ``"eval"`` section (or ``{}``).
    Flags whose value is ``None`` count as unset.
    """
    environ = os.environ if environ is None else environ
    settings = Settings()
    eval_section: dict[str, Any] = {}
    if config_file is not None:
        data = dict(read_config_file(config_file))
        eval_section = data.pop("eval", {}) or {}
        if not isinstance(eval_section, dict):
            raise ConfigError("'eval' in the config file must be an object")
        settings = _apply(settings, data, str(config_file))
    settings = _apply(settings, env_settings(environ), "environment")
    settings = _apply(settings, {k: v for k, v in (flags or {}).items() if v is not None}, "flags")
    if settings.timeout <= 0:
        raise ConfigError("timeout must be positive")
    return settings, eval_section
