import hashlib
import json
import os
from copy import deepcopy
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional

import yaml
from pydantic import ValidationError

from src.config.config_definitions import RunConfig
from src.errors import ConfigError


OUTPUT_ROOT_ENV: str = "COMET_OUTPUT_ROOT"
DEFAULT_CONFIG_FILE: Path = Path(__file__).resolve().parent.parent.parent / "config.yaml"


@lru_cache(maxsize=8)
def _read_yaml(config_file: str) -> dict:
    with open(config_file, 'r', encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def merge_overrides(base: dict, overrides: dict) -> dict:
    """Recursively merge `overrides` into a copy of `base`."""
    merged = deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_overrides(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(config_file: Optional[str] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """
    Load the YAML config, apply overrides and the output-root environment variable.

    Raises:
        ConfigError: When the file is missing or a value fails validation.
    """
    path = Path(config_file) if config_file is not None else DEFAULT_CONFIG_FILE
    if path.exists():
        config_dict = _read_yaml(str(path))
    elif config_file is None:
        config_dict = {}
    else:
        raise ConfigError(f"config file '{path}' not found")

    if overrides:
        config_dict = merge_overrides(config_dict, overrides)

    output_root = os.environ.get(OUTPUT_ROOT_ENV)
    if output_root:
        config_dict = merge_overrides(config_dict, {"paths": {"output_dir": output_root}})

    try:
        return RunConfig(**config_dict)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{location}: {first['msg']}") from e


def config_to_dict(config: RunConfig) -> dict:
    return config.model_dump(mode="json")


def save_config(config: RunConfig, config_file: str) -> None:
    """Write the fully resolved config to `config_file`."""
    Path(config_file).parent.mkdir(parents=True, exist_ok=True)
    with open(config_file, 'w', encoding="utf-8") as f:
        yaml.safe_dump(config_to_dict(config), f, default_flow_style=False, sort_keys=False)


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the resolved config, stable across key order."""
    encoded = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()
