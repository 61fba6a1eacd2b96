"""Checkpoint container: named float tensors plus a JSON header.

Layout (little-endian):

    magic       8 bytes   b"ALNCKPT1"
    header_len  u32
    header      header_len bytes of UTF-8 JSON
    payload     concatenated raw tensor bytes

The header is ``{"format_version": 1, "meta": {...}, "tensors": [...]}`` where
each tensor entry carries ``name``, ``shape``, ``dtype`` ("f32" or "f64"),
``offset`` into the payload and ``nbytes``. Tensors are stored sorted by name
so identical states always serialize to identical bytes. Integer buffers (the
batch-norm step counters) are not stored; they do not affect computation.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .model import ALN, ALNConfig
from .storage import atomic_write_bytes

MAGIC = b"ALNCKPT1"
FORMAT_VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def write_tensors(path: str | os.PathLike, tensors: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _DTYPE_NAMES:
            raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        data = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": _DTYPE_NAMES[arr.dtype],
                "offset": len(payload),
                "nbytes": len(data),
            }
        )
        payload.extend(data)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    blob = MAGIC + struct.pack("<I", len(header)) + header + bytes(payload)
    atomic_write_bytes(path, blob)


def read_tensors(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4:
        raise FormatError(f"{path}: truncated checkpoint")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (header_len,) = struct.unpack_from("<I", data, len(MAGIC))
    header_end = len(MAGIC) + 4 + header_len
    if len(data) < header_end:
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[len(MAGIC) + 4 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint format version {header.get('format_version')}"
        )
    payload = data[header_end:]
    tensors: dict[str, np.ndarray] = {}
    total = 0
    for entry in header["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise FormatError(f"{path}: unknown tensor dtype {entry['dtype']!r}")
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if count * dtype.itemsize != entry["nbytes"]:
            raise FormatError(f"{path}: tensor {entry['name']!r} shape/nbytes mismatch")
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise FormatError(f"{path}: truncated payload for tensor {entry['name']!r}")
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(shape).copy()
        total = max(total, end)
    if total != len(payload):
        raise FormatError(f"{path}: payload length {len(payload)} does not match header ({total})")
    return tensors, header["meta"]


def _float_state(model: ALN) -> dict[str, np.ndarray]:
    out = {}
    for name, t in model.state_dict().items():
        if t.is_floating_point():
            out[name] = t.detach().cpu().numpy()
    return out


def save_model(model: ALN, path: str | os.PathLike, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "model",
        "config": model.config.to_dict(),
        "dtype": "f64" if next(model.parameters()).dtype == torch.float64 else "f32",
    }
    if extra_meta:
        meta.update(extra_meta)
    write_tensors(path, _float_state(model), meta)


def load_model(path: str | os.PathLike) -> ALN:
    tensors, meta = read_tensors(path)
    if meta.get("kind") != "model":
        raise FormatError(f"{path}: not a model checkpoint (kind={meta.get('kind')!r})")
    return restore_model(tensors, meta)


def restore_model(tensors: dict[str, np.ndarray], meta: dict) -> ALN:
    config = ALNConfig.from_dict(meta["config"])
    model = ALN(config)
    if meta.get("dtype") == "f64":
        model.double()
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    template = model.state_dict()
    expected = {n for n, t in template.items() if t.is_floating_point()}
    missing = expected - set(state)
    unexpected = set(state) - set(template)
    if missing or unexpected:
        raise FormatError(
            f"checkpoint tensors do not match the architecture "
            f"(missing={sorted(missing)}, unexpected={sorted(unexpected)})"
        )
    model.load_state_dict(state, strict=False)
    return model
