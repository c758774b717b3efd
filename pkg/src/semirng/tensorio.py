"""Binary tensor files.

Layout (all little-endian)::

    magic    8 bytes   b"SEMIRNG1"
    version  u32       1
    ndim     u32
    dims     ndim x u64
    payload  prod(dims) x f8, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import SemiringUsageError

MAGIC = b"SEMIRNG1"
VERSION = 1
_HEAD = struct.Struct("<8sII")


class TensorFormatError(SemiringUsageError):
    pass


def encode_tensor(array) -> bytes:
    # ascontiguousarray would promote 0-d input to 1-d
    a = np.array(array, dtype="<f8", order="C")
    dims = struct.pack(f"<{a.ndim}Q", *a.shape)
    return _HEAD.pack(MAGIC, VERSION, a.ndim) + dims + a.tobytes(order="C")


def decode_tensor(data: bytes, allow_nan: bool = False) -> np.ndarray:
    if len(data) < _HEAD.size:
        raise TensorFormatError("truncated header")
    magic, version, ndim = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    off = _HEAD.size
    if len(data) < off + 8 * ndim:
        raise TensorFormatError("truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    n = int(np.prod(dims, dtype=object)) if ndim else 1
    expected = off + 8 * n
    if len(data) < expected:
        raise TensorFormatError(f"truncated payload: need {8 * n} bytes, have {len(data) - off}")
    if len(data) > expected:
        raise TensorFormatError(f"{len(data) - expected} trailing bytes after payload")
    a = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(dims)
    if not allow_nan and np.isnan(a).any():
        raise TensorFormatError("payload contains NaN")
    return a


def write_tensor(path: Union[str, Path], array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: Union[str, Path], allow_nan: bool = False) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), allow_nan)
