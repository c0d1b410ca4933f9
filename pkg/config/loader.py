"""
Configuration loader for the LTDL toolkit.
Builds an LtdlConfig from the packaged YAML defaults, environment
variables, a user config file and command-line overrides.
"""

import os
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Mapping

import yaml

from config.schema import ConfigError, LtdlConfig, field_kind

DEFAULTS_PATH = Path(__file__).parent / "config.yaml"
ENV_PREFIX = "LTDL_"
_OPTIONAL = {"lambda_s", "lambda_r", "k_clusters", "noise_sigma"}
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def load_yaml_mapping(path: str | os.PathLike) -> Dict[str, Any]:
    """Load a flat YAML mapping from `path`.

    Returns:
        Dict of key/value pairs; an empty file gives an empty dict.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as file:
            data = yaml.safe_load(file)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a flat key: value mapping")
    nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
    if nested:
        raise ConfigError(f"{path} must be flat; nested values under: {', '.join(map(str, nested))}")
    return data


def coerce_value(name: str, value: Any) -> Any:
    """Convert a raw YAML/env/flag value to the declared type of field `name`."""
    kind = field_kind(name)
    if value is None or (isinstance(value, str) and value.strip().lower() in ("none", "null", "auto", "")):
        if name in _OPTIONAL:
            return None
        raise ConfigError(f"{name} cannot be empty")
    if kind is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in _TRUE or text in _FALSE:
            return text in _TRUE
        raise ConfigError(f"{name} expects true or false, got {value!r}")
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    try:
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value) if not isinstance(value, str) else int(value.strip())
        # YAML reads "1e-4" as a string, so floats go through float()
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} expects {kind.__name__}, got {value!r}")


def _check_keys(mapping: Mapping[str, Any], source: str) -> None:
    known = {f.name for f in fields(LtdlConfig)}
    unknown = sorted(str(k) for k in mapping if k not in known)
    if unknown:
        raise ConfigError(f"unknown configuration key(s) in {source}: {', '.join(unknown)}")


def env_overrides(environ: Mapping[str, str] | None = None) -> Dict[str, Any]:
    """Collect LTDL_<FIELD> environment overrides.

    Environment variables override the packaged YAML defaults, e.g.
    LTDL_SEED=3 or LTDL_NOISE_SIGMA=0.1.
    """
    environ = os.environ if environ is None else environ
    known = {f.name for f in fields(LtdlConfig)}
    out = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name not in known:
            raise ConfigError(f"unknown configuration key in environment: {key}")
        out[name] = raw
    return out


def load_ltdl_config(config_path: str | os.PathLike | None = None,
                     overrides: Mapping[str, Any] | None = None,
                     environ: Mapping[str, str] | None = None) -> LtdlConfig:
    """Resolve the effective LtdlConfig.

    Precedence (highest first): `overrides` (command-line flags), the user
    file at `config_path`, LTDL_* environment variables, packaged defaults.
    `None` values in `overrides` mean "flag not given" and are skipped.
    """
    merged: Dict[str, Any] = {}
    layers = [(load_yaml_mapping(DEFAULTS_PATH), str(DEFAULTS_PATH)),
              (env_overrides(environ), "environment")]
    if config_path is not None:
        layers.append((load_yaml_mapping(config_path), str(config_path)))
    if overrides:
        layers.append(({k: v for k, v in overrides.items() if v is not None}, "command line"))
    for mapping, source in layers:
        _check_keys(mapping, source)
        for name, raw in mapping.items():
            merged[name] = coerce_value(name, raw)
    return LtdlConfig(**merged)


def describe_config(cfg: LtdlConfig) -> str:
    """One `key: value` line per field, in declaration order."""
    return "\n".join(f"{f.name}: {getattr(cfg, f.name)}" for f in fields(cfg))
