"""Binary tensor container: the on-disk interchange format of the pipeline.

Layout (all integers little-endian):

    magic    4 bytes   b"FTC1"
    rank     uint32    number of dimensions, at most 8
    dims     rank x uint64   each dimension, at least 1
    payload  prod(dims) x float32, row-major

Values are widened to float64 on load; narrowing to float32 happens on
save, so ``load(save(t))`` is bitwise stable at 32-bit precision.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor_kit import Tensor

MAGIC = b"FTC1"
MAX_RANK = 8

# One stable code per corruption class.
BAD_MAGIC = "bad-magic"
BAD_RANK = "bad-rank"
BAD_DIMS = "bad-dims"
TRUNCATED = "truncated"
TRAILING_DATA = "trailing-data"

__all__ = [
    "MAGIC",
    "MAX_RANK",
    "BAD_MAGIC",
    "BAD_RANK",
    "BAD_DIMS",
    "TRUNCATED",
    "TRAILING_DATA",
    "save_tensor",
    "load_tensor",
    "dump_bytes",
    "parse_bytes",
]


def dump_bytes(t: Tensor) -> bytes:
    """Serialize a tensor to container bytes (float32 payload)."""
    parts = [MAGIC, struct.pack("<I", t.rank)]
    for d in t.shape:
        parts.append(struct.pack("<Q", d))
    parts.append(np.ascontiguousarray(t.array, dtype="<f4").tobytes())
    return b"".join(parts)


def parse_bytes(blob: bytes) -> Tensor:
    """Parse container bytes, raising ``FormatError`` with a byte offset."""
    if len(blob) < 4:
        raise FormatError(TRUNCATED, 0, "file shorter than the 4-byte magic")
    if blob[:4] != MAGIC:
        raise FormatError(BAD_MAGIC, 0, f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 8:
        raise FormatError(TRUNCATED, 4, "file ends inside the rank field")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank > MAX_RANK:
        raise FormatError(BAD_RANK, 4, f"rank {rank} exceeds maximum {MAX_RANK}")
    offset = 8
    dims = []
    for i in range(rank):
        if len(blob) < offset + 8:
            raise FormatError(TRUNCATED, offset, f"file ends inside dimension {i}")
        (d,) = struct.unpack_from("<Q", blob, offset)
        if d == 0:
            raise FormatError(BAD_DIMS, offset, f"dimension {i} is zero")
        dims.append(d)
        offset += 8
    count = 1
    for d in dims:
        count *= d
    expected = 4 * count
    available = len(blob) - offset
    if available < expected:
        raise FormatError(
            TRUNCATED,
            offset,
            f"payload has {available} bytes, expected {expected}",
        )
    if available > expected:
        raise FormatError(
            TRAILING_DATA,
            offset + expected,
            f"{available - expected} unexpected bytes after the payload",
        )
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return Tensor.from_array(values.astype(np.float64).reshape(dims))


def save_tensor(t: Tensor, path: str | Path) -> None:
    Path(path).write_bytes(dump_bytes(t))


def load_tensor(path: str | Path) -> Tensor:
    return parse_bytes(Path(path).read_bytes())
