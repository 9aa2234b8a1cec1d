"""
Versioned JSON containers for model checkpoints and reports.

Layout of a checkpoint file (keys sorted on disk):
    format_version   int, CHECKPOINT_FORMAT_VERSION
    kind             {"variant": str, "fixed_iz": float | null}
    architecture     {"input_steps", "hidden_sizes", "recurrent_layers", "output_size"}
    params           {name: nested list of floats}
    bounds           {coefficient: [lower, upper]}
    guard_activation squashing function name
    normalizer       {"mean": [7 floats], "std": [7 floats]}
    train_config     the TrainConfig section used for training

A ground-truth pseudo-checkpoint carries only format_version, kind
(variant "ground-truth") and coefficients {name: float}.

Floats are written with Python's shortest round-trip repr, so save/load is
bit-exact.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

from utils.constants import CHECKPOINT_FORMAT_VERSION
from utils.errors import DataError, SchemaError

logger = logging.getLogger(__name__)


def dumps(payload: Dict[str, Any]) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(payload: Dict[str, Any], path: Union[str, Path]) -> Path:
    """Atomically write canonical JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(dumps(payload))
    tmp.replace(path)
    return path


def write_checkpoint(payload: Dict[str, Any], path: Union[str, Path]) -> Path:
    payload = {**payload, "format_version": CHECKPOINT_FORMAT_VERSION}
    path = write_json(payload, path)
    logger.info("Wrote %s checkpoint to %s", payload.get("kind", {}).get("variant", "?"), path)
    return path


def read_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read and version-check a checkpoint file.

    Raises:
        DataError: If the file is missing or not JSON.
        SchemaError: If the version or required keys do not match.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}", str(path))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataError(f"Checkpoint {path} is not valid JSON: {e}", str(path))
    if not isinstance(payload, dict):
        raise SchemaError("Checkpoint root must be an object", str(path))
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise SchemaError(f"Unsupported checkpoint format_version {version!r}", str(path),
                          {'expected': CHECKPOINT_FORMAT_VERSION})
    if "kind" not in payload or "variant" not in payload.get("kind", {}):
        raise SchemaError("Checkpoint is missing its model kind", str(path))
    return payload
