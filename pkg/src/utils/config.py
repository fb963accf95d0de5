"""
Configuration loading.

Configs are YAML key-value trees. The shipped config/settings.yaml provides
defaults; an experiment file only needs the sections it changes.
"""

import copy
from pathlib import Path
from typing import Optional, Union

import yaml

from src.utils.errors import ConfigInvalid

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent.parent / "config" / "settings.yaml"


def load_config(path: Optional[Union[str, Path]] = None) -> dict:
    """
    Load a config file merged over config/settings.yaml.

    Args:
        path: Experiment config file (None = defaults only)

    Returns:
        Merged configuration dict

    Raises:
        FileNotFoundError: If path doesn't exist
        ConfigInvalid: If the file is not a YAML mapping
    """
    config = _read_yaml(DEFAULT_CONFIG_PATH) if DEFAULT_CONFIG_PATH.exists() else {}

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        config = merge_config(config, _read_yaml(path))

    return config


def merge_config(base: dict, override: dict) -> dict:
    """Recursively merge override into a copy of base."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_yaml(path: Path) -> dict:
    with open(path, 'r') as f:
        data = yaml.safe_load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigInvalid(f"Config file must contain a mapping: {path}")
    return data
