"""Bit-exact binary container for raw frame stacks and cubes.

Layout (all integers little-endian)::

    8 bytes   magic  b"MSPADTNS"
    u32       format version
    u8        dtype tag (0 = u8, 1 = u16, 2 = f32)
    u8        rank
    u32*rank  dimensions
    ...       row-major payload
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MSPADTNS"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<u1"), 1: np.dtype("<u2"), 2: np.dtype("<f4")}
_TAG_OF = {dt: tag for tag, dt in _DTYPE_TAGS.items()}


class TensorFormatError(ValueError):
    pass


def encode_blob(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _TAG_OF:
        raise TypeError(f"unsupported dtype {arr.dtype}; expected uint8, uint16 or float32")
    if arr.ndim == 0 or arr.ndim > 255 or any(d <= 0 for d in arr.shape):
        raise ValueError(f"shape must be nonempty with positive dims, got {arr.shape}")
    header = MAGIC + struct.pack("<IBB", VERSION, _TAG_OF[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_blob(buf: bytes) -> np.ndarray:
    if len(buf) < 14 or buf[:8] != MAGIC:
        raise TensorFormatError("magic mismatch")
    version, tag, rank = struct.unpack_from("<IBB", buf, 8)
    if version != VERSION:
        raise TensorFormatError(f"unsupported container version {version}")
    if tag not in _DTYPE_TAGS:
        raise TensorFormatError(f"unknown dtype tag {tag}")
    off = 14 + 4 * rank
    if rank == 0 or len(buf) < off:
        raise TensorFormatError("truncated header")
    shape = struct.unpack_from(f"<{rank}I", buf, 14)
    dt = _DTYPE_TAGS[tag]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) - off != nbytes:
        raise TensorFormatError(f"truncated payload: expected {nbytes} bytes, found {len(buf) - off}")
    return np.frombuffer(buf, dtype=dt, offset=off).reshape(shape).astype(dt.newbyteorder("="))


def write_blob(path: str | os.PathLike, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_blob(array))


def read_blob(path: str | os.PathLike) -> np.ndarray:
    return decode_blob(Path(path).read_bytes())
