# core/config.py
from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from pydantic import ValidationError

from core.schemas import ExperimentConfig


class ConfigError(RuntimeError):
    pass


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a flat `key = value` TOML file. Nested tables are rejected so every
    key maps onto one ExperimentConfig field.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"config file {p} is not valid TOML: {e}") from e
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config file {p} must be flat; found tables: {', '.join(nested)}")
    return data


def parse_override(item: str) -> Dict[str, Any]:
    """`KEY=VALUE` with VALUE parsed as a TOML scalar; bare words are strings."""
    if "=" not in item:
        raise ConfigError(f"override must look like KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    key, raw = key.strip(), raw.strip()
    if not key:
        raise ConfigError(f"override has an empty key: {item!r}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return {key: value}


def build_config(values: Dict[str, Any]) -> ExperimentConfig:
    unknown = sorted(set(values) - set(ExperimentConfig.model_fields))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return ExperimentConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"config validation failed: {e}") from e


def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    **explicit: Any,
) -> ExperimentConfig:
    """File values, then KEY=VALUE overrides, then explicit keyword values (None is ignored)."""
    values: Dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
    for item in overrides:
        values.update(parse_override(item))
    values.update({k: v for k, v in explicit.items() if v is not None})
    return build_config(values)


def dump_config(config: ExperimentConfig) -> str:
    """Serialize as the same flat TOML the loader reads."""
    lines = []
    for key, value in config.model_dump(mode="json").items():
        if value is None:
            continue
        lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    escaped = str(value).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'
