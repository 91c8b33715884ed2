"""Flat little-endian parameter files and offline LoRA merging.

Layout: magic (4 bytes), u32 version, u32 layer count, then per layer
u32 name length, name bytes (utf-8), u32 ndim, u32 dims, float32 data.
Model files use magic ``PFCK``; adapter files ``PFLR``.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import DataError

VERSION = 1
MODEL_MAGIC = b"PFCK"
LORA_MAGIC = b"PFLR"


def _write(path, magic, tensors: dict):
    with open(path, "wb") as f:
        f.write(magic + struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f4")
            key = name.encode("utf-8")
            f.write(struct.pack("<I", len(key)) + key)
            f.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def _read(path, magic) -> dict:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != magic:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4: pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (ndim,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(raw):
                raise DataError(f"{path}: truncated data for {name!r}")
            out[name] = np.frombuffer(raw, "<f4", size, pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise DataError(f"{path}: truncated header ({exc})") from None
    if pos != len(raw):
        raise DataError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def save_checkpoint(path, params: dict):
    _write(path, MODEL_MAGIC, params)


def load_checkpoint(path) -> dict:
    return _read(path, MODEL_MAGIC)


def _is_lora(name):
    return name[:1] in ("A", "B") and "." in name


def save_lora(path, params: dict, alpha: float):
    """Write only the adapter matrices (``A*.r`` / ``B*.r``) plus ``alpha``."""
    tensors = {k: v for k, v in params.items() if _is_lora(k)}
    if not tensors:
        raise DataError("no LoRA matrices to save")
    tensors["alpha"] = np.array([alpha])
    _write(path, LORA_MAGIC, tensors)


def load_lora(path) -> tuple:
    tensors = _read(path, LORA_MAGIC)
    alpha = float(tensors.pop("alpha")[0])
    return tensors, alpha


def merge_lora(base: dict, lora: dict, alpha: float, route: int) -> dict:
    """Fold one route's adapters into the base weights: ``W + (alpha/r) B A``."""
    merged = {k: np.asarray(v, np.float64).copy() for k, v in base.items() if not _is_lora(k)}
    found = False
    for key in sorted(lora):
        if not key.startswith("A") or not key.endswith(f".{route}"):
            continue
        which = key[1:].split(".")[0]
        A = np.asarray(lora[key], np.float64)
        B = np.asarray(lora[f"B{which}.{route}"], np.float64)
        wname = f"W{which}"
        if wname not in merged:
            raise DataError(f"adapter {key} has no base weight {wname}")
        if B.shape[0] != merged[wname].shape[0] or A.shape[1] != merged[wname].shape[1]:
            raise DataError(f"adapter {key} does not fit {wname} {merged[wname].shape}")
        merged[wname] = merged[wname] + (alpha / A.shape[0]) * (B @ A)
        found = True
    if not found:
        raise DataError(f"no adapters for route {route}")
    return merged
