"""Binary tensor records: ``RDT1`` magic, u32 rank, u32 extents, f64 payload."""

from pathlib import Path
from typing import Tuple, Union

import numpy as np

from src.core.exceptions import CheckpointError

MAGIC = b"RDT1"
_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


def encode_tensor(values: np.ndarray) -> bytes:
    array = np.asarray(values, dtype=np.float64)
    header = np.array([array.ndim, *array.shape], dtype=_U32).tobytes()
    return MAGIC + header + np.ascontiguousarray(array, dtype=_F64).tobytes()


def decode_tensor(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Decode one record starting at ``offset``; returns the array and the next offset."""
    if buffer[offset : offset + 4] != MAGIC:
        raise CheckpointError(f"missing RDT1 magic at byte {offset}")
    cursor = offset + 4
    if len(buffer) < cursor + 4:
        raise CheckpointError("truncated tensor header")
    rank = int(np.frombuffer(buffer, dtype=_U32, count=1, offset=cursor)[0])
    cursor += 4
    if len(buffer) < cursor + 4 * rank:
        raise CheckpointError("truncated tensor extents")
    shape = tuple(
        int(n) for n in np.frombuffer(buffer, dtype=_U32, count=rank, offset=cursor)
    )
    cursor += 4 * rank
    count = int(np.prod(shape)) if shape else 1
    if len(buffer) < cursor + 8 * count:
        raise CheckpointError(f"truncated payload for tensor of shape {shape}")
    payload = np.frombuffer(buffer, dtype=_F64, count=count, offset=cursor)
    cursor += 8 * count
    return payload.astype(np.float64).reshape(shape), cursor


def write_tensor(path: Union[str, Path], values: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(values))


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    array, _ = decode_tensor(Path(path).read_bytes())
    return array
