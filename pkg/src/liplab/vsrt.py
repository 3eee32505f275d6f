"""VSRT tensor files: the on-disk format for weights, frames, and posteriors.

Layout: 4 magic bytes ``VSRT``, a little-endian uint32 rank, ``rank``
little-endian uint32 dimensions, then the row-major float64 payload in
little-endian byte order. Writing the same array twice produces identical
bytes, which the reproducibility guarantees lean on.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VSRT"


class VsrtError(ValueError):
    """Raised on malformed VSRT files."""


def dump_bytes(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array, dtype=np.float64)
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return header + arr.astype("<f8", copy=False).tobytes()


def load_bytes(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise VsrtError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 8:
        raise VsrtError("truncated header")
    (rank,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    if len(blob) < offset + 4 * rank:
        raise VsrtError("truncated shape block")
    shape = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
    offset += 4 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = offset + 8 * count
    if len(blob) != expected:
        raise VsrtError(f"payload size {len(blob) - offset} != {8 * count} for shape {shape}")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(shape)


def write(path: str | Path, array: np.ndarray) -> None:
    """Atomic write: serialize to a temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dump_bytes(array))
    os.replace(tmp, path)


def read(path: str | Path) -> np.ndarray:
    return load_bytes(Path(path).read_bytes())
