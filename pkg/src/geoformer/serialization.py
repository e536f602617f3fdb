"""GFT1 tensor container: magic, u32 rank, u32 extents, f32 payload (all little-endian)."""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import ContractError

MAGIC = b"GFT1"


def header_size(rank: int) -> int:
    return len(MAGIC) + 4 + 4 * rank


def container_size(shape) -> int:
    """Exact byte length of the container holding an array of ``shape``."""
    return header_size(len(shape)) + 4 * int(np.prod(shape, dtype=np.int64))


def encode(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim == 0 or any(d <= 0 for d in arr.shape):
        raise ContractError(f"GFT1 requires rank >= 1 with positive extents, got {arr.shape}")
    head = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode(buf: bytes) -> np.ndarray:
    """Parse a container into a float32 array."""
    if buf[:4] != MAGIC:
        raise ContractError("not a GFT1 container (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 4)
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    offset = header_size(rank)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != offset + 4 * count:
        raise ContractError(
            f"GFT1 payload length {len(buf) - offset} does not match shape {shape}"
        )
    return np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape).astype(
        np.float32
    )


def save(path, array) -> int:
    data = encode(array)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def file_size(path) -> int:
    return os.stat(path).st_size
