"""Bit-exact clip container: packed uint8 grayscale frames behind a fixed header.

Layout (little-endian):

    magic    4 bytes  b"LRWR"
    version  u8       1
    dtype    u8       0 (uint8 grayscale)
    reserved u16      0
    T        u32      frame count
    H        u32      frame height
    W        u32      frame width
    payload  T*H*W bytes, frame-major, row-major within a frame
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"LRWR"
VERSION = 1
DTYPE_GRAY_U8 = 0
_HEADER = struct.Struct("<4sBBHIII")
HEADER_SIZE = _HEADER.size
_MAX_DIM = 2**32 - 1

CLIP_SUFFIX = ".lrwr"


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to ``path`` via a same-directory temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def validate_clip(clip) -> np.ndarray:
    """Check that ``clip`` is a T x H x W uint8 array with at least one frame."""
    arr = np.asarray(clip)
    if arr.dtype != np.uint8:
        raise ValueError(f"clip must be uint8, got {arr.dtype}")
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"clip must be a non-empty T x H x W array, got shape {arr.shape}")
    return arr


def clip_to_bytes(clip) -> bytes:
    arr = validate_clip(clip)
    t, h, w = arr.shape
    if max(t, h, w) > _MAX_DIM:
        raise FormatError(f"clip dimensions {arr.shape} overflow the u32 header fields")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_GRAY_U8, 0, t, h, w)
    return header + np.ascontiguousarray(arr).tobytes()


def clip_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < HEADER_SIZE:
        raise FormatError(f"clip file truncated: {len(data)} bytes, header needs {HEADER_SIZE}")
    magic, version, dtype, reserved, t, h, w = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported clip format version {version}")
    if dtype != DTYPE_GRAY_U8:
        raise FormatError(f"unsupported dtype tag {dtype}")
    if reserved != 0:
        raise FormatError(f"reserved header field must be 0, got {reserved}")
    if min(t, h, w) < 1:
        raise FormatError(f"invalid dimensions T={t} H={h} W={w}")
    expected = HEADER_SIZE + t * h * w
    if len(data) != expected:
        raise FormatError(f"clip payload size {len(data) - HEADER_SIZE} does not match T*H*W={t * h * w}")
    arr = np.frombuffer(data, dtype=np.uint8, count=t * h * w, offset=HEADER_SIZE)
    return arr.reshape(t, h, w).copy()


def write_clip(clip, path: str | os.PathLike) -> None:
    """Serialize a clip; the write is atomic and the round trip is bit-exact."""
    atomic_write_bytes(path, clip_to_bytes(clip))


def read_clip(path: str | os.PathLike) -> np.ndarray:
    return clip_from_bytes(Path(path).read_bytes())
