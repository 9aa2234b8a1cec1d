"""
Global run settings.
Resolves which configuration file a command uses and applies CLI overrides.
"""

import os
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from utils.config_manager import get_config_manager
from utils.constants import DEFAULT_CONFIG_FILE
from utils.validation import RunConfig

CONFIG_ENV_VAR = "DEEPDYN_CONFIG"


def resolve_config_path(path: Union[str, Path, None] = None) -> Optional[Path]:
    """
    Pick the config file: explicit path, then $DEEPDYN_CONFIG, then the
    repository default if it exists. None means built-in defaults.
    """
    if path:
        return Path(path)
    env_path = os.environ.get(CONFIG_ENV_VAR)
    if env_path:
        return Path(env_path)
    if DEFAULT_CONFIG_FILE.exists():
        return DEFAULT_CONFIG_FILE
    return None


def load_run_config(path: Union[str, Path, None] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Load the run configuration; overrides win over the file."""
    manager = get_config_manager()
    config = manager.load(resolve_config_path(path))
    return manager.apply_overrides(config, overrides)
