"""
Persistent storage for trained model parameters and training logs.
Checkpoints are a flat list of named float64 tensors in a small binary
format; training logs are CSV.
"""

import logging
import os
import struct
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from .errors import CheckpointError

load_dotenv()

logger = logging.getLogger("caelab.checkpoint_storage")

CHECKPOINT_MAGIC = b"CAELAB01"
TRAINING_LOG_COLUMNS = ["epoch", "L1", "L2a", "L2b", "L3", "lambda_2a", "lambda_2b", "lambda_3", "grad_norm"]


def default_checkpoint_path() -> str:
    return os.getenv("CAELAB_CHECKPOINT_FILE", "caelab_checkpoint.bin")


def encode_checkpoint(tensors: Dict[str, np.ndarray]) -> bytes:
    """Serialize named tensors; insertion order is kept."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        value = np.ascontiguousarray(np.asarray(value, dtype=np.float64))
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        if value.ndim > 0xFF:
            raise CheckpointError(f"tensor '{name}' has too many dimensions ({value.ndim})")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.astype("<f8").tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a caelab checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)

    def _read(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    (count,) = _read("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = _read("<H")
        if offset + name_len > len(blob):
            raise CheckpointError("truncated checkpoint")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = _read("<B")
        shape = _read(f"<{ndim}I") if ndim else ()
        n_values = int(np.prod(shape)) if ndim else 1
        if offset + 8 * n_values > len(blob):
            raise CheckpointError(f"truncated data for tensor '{name}'")
        values = np.frombuffer(blob, dtype="<f8", count=n_values, offset=offset)
        offset += 8 * n_values
        tensors[name] = values.astype(np.float64).reshape(shape)
    if offset != len(blob):
        logger.warning("Ignoring %d trailing bytes in checkpoint", len(blob) - offset)
    return tensors


def save_checkpoint(tensors: Dict[str, np.ndarray], path: Optional[Union[str, Path]] = None) -> Path:
    path = Path(path or default_checkpoint_path())
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors))
    logger.info("Saved checkpoint with %d tensors to %s", len(tensors), path)
    return path


def load_checkpoint(path: Optional[Union[str, Path]] = None) -> Dict[str, np.ndarray]:
    path = Path(path or default_checkpoint_path())
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def save_training_log(records: List[Dict], path: Union[str, Path]) -> Path:
    """One row per epoch, fixed column order."""
    path = Path(path)
    frame = pd.DataFrame(records, columns=TRAINING_LOG_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
