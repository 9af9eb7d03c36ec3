"""FDTN binary tensor files.

Layout: ``b"FDTN"``, version byte ``0x01``, dtype byte (``0x00`` float32,
``0x01`` float64), little-endian u32 rank, ``rank`` little-endian u64 dims,
then the row-major little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FDTN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class FormatError(ValueError):
    pass


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float32)
    code = _CODES[arr.dtype]
    header = MAGIC + bytes([VERSION, code]) + struct.pack("<I", arr.ndim)
    header += b"".join(struct.pack("<Q", d) for d in arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    if len(blob) < 10:
        raise FormatError("truncated header")
    if blob[4] != VERSION:
        raise FormatError(f"unsupported version {blob[4]}")
    if blob[5] not in _DTYPES:
        raise FormatError(f"unknown dtype code {blob[5]}")
    dtype = _DTYPES[blob[5]]
    (rank,) = struct.unpack_from("<I", blob, 6)
    offset = 10
    dims = struct.unpack_from(f"<{rank}Q", blob, offset) if rank else ()
    offset += 8 * rank
    count = int(np.prod(dims)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(f"payload size mismatch: {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def save(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode(array))


def load(path: str | Path) -> np.ndarray:
    return decode(Path(path).read_bytes())
