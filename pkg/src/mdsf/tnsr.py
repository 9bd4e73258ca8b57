"""TNSR1 binary tensor files.

Layout: ASCII ``TNSR1``, one byte rank ``r``, ``r`` little-endian uint32
dims, then row-major little-endian float64 values.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TNSR1"


def dumps(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} does not fit in one byte")
    if any(d >= 2**32 for d in arr.shape):
        raise FormatError(f"dimension too large for uint32: {arr.shape}")
    header = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def loads(buf: bytes) -> np.ndarray:
    if buf[:5] != MAGIC:
        raise FormatError("missing TNSR1 magic")
    if len(buf) < 6:
        raise FormatError("truncated header")
    rank = buf[5]
    end = 6 + 4 * rank
    if len(buf) < end:
        raise FormatError("truncated dimension table")
    dims = struct.unpack(f"<{rank}I", buf[6:end])
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != end + 8 * count:
        raise FormatError(f"payload holds {len(buf) - end} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=end).astype(np.float64).reshape(dims)


def save(path, array) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
