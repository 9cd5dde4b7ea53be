"""Minimal binary tensor container.

Layout: a fixed 64-byte header followed by the raw payload.

    bytes  0..7   magic  b"HWTENSR\\x00"
    bytes  8..11  format version (uint32, little-endian)
    bytes 12..15  rank (uint32), 2 or 3
    bytes 16..39  shape (three uint64; unused trailing dims are zero)
    bytes 40..63  reserved (zero)

The payload is little-endian float32, row-major (C order), exactly
prod(shape)*4 bytes.  Round trips are bit-exact on any host.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"HWTENSR\x00"
VERSION = 1
HEADER_BYTES = 64
_HEADER_STRUCT = struct.Struct("<8sII3Q24x")


class TensorFormatError(Exception):
    """Base class for tensor container violations."""


class BadMagicError(TensorFormatError):
    """File does not start with the tensor container magic."""


class TruncatedFileError(TensorFormatError):
    """File ends before the declared payload is complete."""


class ShapeError(TensorFormatError):
    """Declared shape is invalid or inconsistent with the payload."""


def write_tensor(path, tensor) -> None:
    """Write a rank-2 or rank-3 array as little-endian float32.

    The write is atomic (temp file + rename) so a crashed run never
    leaves a truncated tensor behind.
    """
    arr = np.asarray(tensor)
    if arr.ndim not in (2, 3):
        raise ShapeError(f"tensor rank must be 2 or 3, got {arr.ndim}")
    if arr.size == 0:
        raise ShapeError("refusing to write an empty tensor")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    shape3 = tuple(arr.shape) + (0,) * (3 - arr.ndim)
    header = _HEADER_STRUCT.pack(MAGIC, VERSION, arr.ndim, *shape3)

    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tensor-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_tensor(path) -> np.ndarray:
    """Read a tensor container; inverse of :func:`write_tensor`."""
    with open(os.fspath(path), "rb") as fh:
        header = fh.read(HEADER_BYTES)
        if len(header) < HEADER_BYTES:
            raise TruncatedFileError("file shorter than the 64-byte header")
        magic, version, rank, d0, d1, d2 = _HEADER_STRUCT.unpack(header)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        if version != VERSION:
            raise TensorFormatError(f"unsupported container version {version}")
        if rank not in (2, 3):
            raise ShapeError(f"rank must be 2 or 3, got {rank}")
        shape = (d0, d1, d2)[:rank]
        if any(d == 0 for d in shape):
            raise ShapeError(f"zero-sized dimension in shape {shape}")
        count = int(np.prod(shape))
        payload = fh.read(count * 4 + 1)
    if len(payload) < count * 4:
        raise TruncatedFileError(
            f"payload has {len(payload)} bytes, expected {count * 4}"
        )
    if len(payload) > count * 4:
        raise ShapeError("payload longer than the declared shape")
    data = np.frombuffer(payload[: count * 4], dtype="<f4")
    return data.reshape(shape).astype(np.float32, copy=True)
