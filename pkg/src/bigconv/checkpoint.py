"""Versioned binary checkpoints.

Layout: magic "BIGC", u32 format version, u64 iteration counter, u32 entry
count, then per parameter in declaration order a length-prefixed name and a
(rows, cols)-prefixed float64 little-endian blob.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .pipeline import ModelState

MAGIC = b"BIGC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: ModelState) -> None:
    chunks = [MAGIC, struct.pack("<IQ I", FORMAT_VERSION, state.iteration,
                                 len(state.params))]
    for name, p in state.named_parameters():
        raw = name.encode("utf-8")
        rows, cols = p.data.shape
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<II", rows, cols))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, state: ModelState) -> ModelState:
    """Load parameter values into `state`; shape mismatches are diagnosed."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, iteration, count = struct.unpack_from("<IQ I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if count != len(state.params):
        raise CheckpointError(
            f"{path}: holds {count} parameters, model declares {len(state.params)}")
    pos = 4 + struct.calcsize("<IQ I")
    for name, p in state.named_parameters():
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        stored = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rows, cols = struct.unpack_from("<II", raw, pos)
        pos += 8
        if stored != name:
            raise CheckpointError(
                f"{path}: parameter order mismatch: stored {stored!r}, model expects {name!r}")
        if (rows, cols) != p.data.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: stored {(rows, cols)}, "
                f"model expects {p.data.shape}")
        n_bytes = rows * cols * 8
        blob = raw[pos : pos + n_bytes]
        if len(blob) < n_bytes:
            raise CheckpointError(f"{path}: truncated blob for {name!r}")
        p.data = np.frombuffer(blob, dtype="<f8").reshape(rows, cols).astype(np.float64)
        pos += n_bytes
    state.iteration = iteration
    return state
