"""Checkpoint directories: one file of RDT1 tensor records plus a JSON manifest."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import jsonschema
import numpy as np
from jsonschema import ValidationError

from src.core.exceptions import CheckpointError
from src.core.metrics import record_checkpoint_written
from src.diffcore.serialization import decode_tensor, encode_tensor
from src.schemas.config import RunConfig

logger = logging.getLogger(__name__)

TENSOR_FILE = "tensors.rdt"
MANIFEST_FILE = "manifest.json"
FORMAT = "RDT1"

# -------------------------------------------------------------------
# JSON Schema for manifest validation
# -------------------------------------------------------------------

MANIFEST_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["format", "step", "config", "tensors"],
    "properties": {
        "format": {"const": FORMAT},
        "step": {"type": "integer", "minimum": 0},
        "config": {"type": "object"},
        "tensors": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "shape", "offset"],
                "properties": {
                    "name": {"type": "string"},
                    "shape": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 0},
                    },
                    "offset": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


def save_checkpoint(
    directory: Union[str, Path],
    state: Dict[str, np.ndarray],
    config: RunConfig,
    step: int,
) -> Path:
    """Write ``state`` (in its iteration order) and the manifest to ``directory``.

    The output contains no timestamps, so identical inputs give identical bytes.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = bytearray()
    entries = []
    for name, values in state.items():
        entries.append(
            {"name": name, "shape": list(np.shape(values)), "offset": len(payload)}
        )
        payload += encode_tensor(values)
    manifest = {
        "format": FORMAT,
        "step": int(step),
        "config": config.model_dump(),
        "tensors": entries,
    }
    (directory / TENSOR_FILE).write_bytes(bytes(payload))
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    record_checkpoint_written()
    logger.info(f"Checkpoint written to {directory} at step {step}")
    return directory


def read_manifest(directory: Union[str, Path]) -> Dict[str, Any]:
    path = Path(directory) / MANIFEST_FILE
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise CheckpointError(f"no manifest in {directory}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"manifest is not valid JSON: {e}") from e
    try:
        jsonschema.validate(instance=manifest, schema=MANIFEST_SCHEMA)
    except ValidationError as e:
        raise CheckpointError(f"Invalid checkpoint manifest: {e.message}") from e
    return manifest


def load_checkpoint(
    directory: Union[str, Path],
) -> Tuple[Dict[str, np.ndarray], RunConfig, int]:
    """Returns ``(state, config, step)``; records are checked against the manifest."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    try:
        buffer = (directory / TENSOR_FILE).read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"no tensor file in {directory}") from e

    state: Dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        values, _ = decode_tensor(buffer, entry["offset"])
        if list(values.shape) != entry["shape"]:
            raise CheckpointError(
                f"tensor {entry['name']} has shape {values.shape}, manifest says {entry['shape']}"
            )
        state[entry["name"]] = values
    config = RunConfig.from_mapping(manifest["config"])
    return state, config, manifest["step"]


def load_model(directory: Union[str, Path]):
    """Rebuild the model recorded in a checkpoint; returns ``(model, step)``."""
    from src.models.referdino import ReferDino

    state, config, step = load_checkpoint(directory)
    model = ReferDino(config)
    model.load_state_dict(state)
    return model, step
