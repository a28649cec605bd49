"""Bit-exact weight and config serialization.

Weight file layout (all integers little-endian):
    magic "MUIE" | u32 version=1 | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u32 rank | u64 dims[rank]
                | raw little-endian f32 payload
    trailer: u64 checksum = sum of all payload bytes mod 2**64

The model config travels alongside as a JSON document holding exactly the
ModelConfig fields.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .network import ModelConfig
from .tensor import Tensor

__all__ = ["save_weights", "load_weights", "save_config", "load_config",
           "WeightFormatError"]

MAGIC = b"MUIE"
VERSION = 1


class WeightFormatError(ValueError):
    """Malformed or corrupted weight file."""


def _payload_checksum(chunks) -> int:
    total = 0
    for chunk in chunks:
        total = (total + int(np.frombuffer(chunk, dtype=np.uint8)
                             .sum(dtype=np.uint64))) & 0xFFFFFFFFFFFFFFFF
    return total


def save_weights(store, path) -> None:
    """Write a name -> tensor/array mapping in the MUIE binary format."""
    path = Path(path)
    payloads = []
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(store)))
        for name, value in store.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.ascontiguousarray(arr, dtype="<f4")
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            payload = arr.tobytes()
            payloads.append(payload)
            f.write(payload)
        f.write(struct.pack("<Q", _payload_checksum(payloads)))


def _read(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise WeightFormatError("truncated weight file")
    return buf


def load_weights(path) -> "OrderedDict[str, np.ndarray]":
    """Read a MUIE weight file; validates magic, version and checksum."""
    store: "OrderedDict[str, np.ndarray]" = OrderedDict()
    payloads = []
    with open(path, "rb") as f:
        if _read(f, 4) != MAGIC:
            raise WeightFormatError("bad magic bytes")
        version, count = struct.unpack("<II", _read(f, 8))
        if version != VERSION:
            raise WeightFormatError(f"unsupported version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read(f, 4))
            name = _read(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read(f, 4))
            dims = struct.unpack(f"<{rank}Q", _read(f, 8 * rank))
            numel = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read(f, 4 * numel)
            payloads.append(payload)
            store[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        (expected,) = struct.unpack("<Q", _read(f, 8))
    if _payload_checksum(payloads) != expected:
        raise WeightFormatError("checksum mismatch (corrupted payload)")
    return store


def save_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(dataclasses.asdict(cfg), indent=2) + "\n")


def load_config(path) -> ModelConfig:
    doc = json.loads(Path(path).read_text())
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValueError(f"unknown model config fields: {unknown}")
    return ModelConfig(**doc)
