"""
Run-configuration persistence.

The run configuration is a single JSON file validated by ``RunConfig``.
Overrides use dotted paths (``train.epochs``) and are re-validated together
with the rest of the file, so a bad override names its own path.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from utils.errors import ConfigurationError, ValidationError
from utils.validation import RunConfig, validate_run_config

logger = logging.getLogger(__name__)


def parse_override_value(raw: str) -> Any:
    """Interpret a CLI override as JSON when possible, else as a plain string."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


class ConfigManager:
    """
    Loads, validates, overrides and saves run configurations.
    """

    def default_config(self) -> RunConfig:
        return RunConfig()

    def load(self, path: Union[str, Path, None] = None) -> RunConfig:
        """
        Load and validate a run configuration file.

        Args:
            path: JSON file; None returns the defaults

        Raises:
            ConfigurationError: If the file cannot be read or parsed.
            ValidationError: If the content fails validation.
        """
        if path is None:
            return self.default_config()
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Config file not found: {path}", {'file_path': str(path)})
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (json.JSONDecodeError, IOError) as e:
            raise ConfigurationError(f"Could not read config {path}: {e}", {'file_path': str(path)})
        if not isinstance(data, dict):
            raise ValidationError("Config root must be a JSON object", field="<root>")
        config = validate_run_config(data)
        logger.debug("Loaded run config from %s", path)
        return config

    def save(self, config: RunConfig, path: Union[str, Path]) -> Path:
        """Write the config atomically with sorted keys."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(config.model_dump(mode="json"), fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        tmp.replace(path)
        logger.info("Saved run config to %s", path)
        return path

    def apply_overrides(self, config: RunConfig, overrides: Optional[Mapping[str, Any]]) -> RunConfig:
        """
        Apply dotted-path overrides and re-validate.

        Args:
            config: Base configuration
            overrides: {"train.epochs": 5, "mpc.horizon": 10}

        Raises:
            ValidationError: If a path does not exist or the result is invalid.
        """
        if not overrides:
            return config
        data: Dict[str, Any] = config.model_dump(mode="json")
        for dotted, value in overrides.items():
            keys = dotted.split(".")
            node = data
            for depth, key in enumerate(keys[:-1]):
                child = node.get(key) if isinstance(node, dict) else None
                if not isinstance(child, dict):
                    raise ValidationError(f"Unknown config section '{'.'.join(keys[:depth + 1])}'",
                                          field=dotted)
                node = child
            if keys[-1] not in node and not _is_mapping_field(keys):
                raise ValidationError(f"Unknown config key '{dotted}'", field=dotted)
            node[keys[-1]] = value
        return validate_run_config(data)


def _is_mapping_field(keys) -> bool:
    # free-form dict fields accept new keys
    return tuple(keys[:-1]) in {("bounds", "overrides"), ("dynamics", "ground_truth")}


# Global singleton instance
_config_manager: Optional[ConfigManager] = None


def get_config_manager() -> ConfigManager:
    """Return the global ConfigManager singleton."""
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager()
    return _config_manager
