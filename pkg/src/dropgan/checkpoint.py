"""Versioned binary checkpoint container.

Layout (little-endian)::

    b"UFG1"            magic
    u32                format version
    32 bytes           sha256 of the canonical config JSON
    u32 + bytes        config JSON
    u32 + bytes        metadata JSON
    u32                number of arrays
    per array:
        u16 + bytes    utf-8 name
        u8             ndim
        u32 * ndim     shape
        f32 * prod     data

All arrays are stored as float32.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"UFG1"
VERSION = 1


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_digest(config: dict) -> bytes:
    return hashlib.sha256(canonical_json(config)).digest()


def _as_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    return np.array(value, dtype="<f4", order="C")


def encode(config: dict, arrays: dict, meta: dict | None = None) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    out += config_digest(config)
    for blob in (canonical_json(config), canonical_json(meta or {})):
        out += struct.pack("<I", len(blob)) + blob
    out += struct.pack("<I", len(arrays))
    for name, value in arrays.items():
        arr = _as_array(value)
        raw_name = name.encode("utf-8")
        out += struct.pack("<H", len(raw_name)) + raw_name
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes(order="C")
    return bytes(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(raw: bytes, expected_config: dict | None = None):
    """Parse a container; returns ``(config, arrays, meta)``.

    Raises :class:`CheckpointError` on a bad magic/version, a digest that
    does not match the embedded config, or a config different from
    ``expected_config``.
    """
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a UFG1 checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = r.take(32)
    (n,) = r.unpack("<I")
    config_blob = r.take(n)
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n))
    if hashlib.sha256(config_blob).digest() != digest:
        raise CheckpointError("config digest mismatch: checkpoint is corrupt")
    config = json.loads(config_blob)
    if expected_config is not None and config_digest(expected_config) != digest:
        raise CheckpointError("config digest mismatch: checkpoint was written for a different configuration")
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        arrays[name] = data.copy()
    if r.pos != len(raw):
        raise CheckpointError("trailing bytes after the last array")
    return config, arrays, meta


def save(path, config: dict, arrays: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(config, arrays, meta))
    return path


def load(path, expected_config: dict | None = None):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode(path.read_bytes(), expected_config)


def module_arrays(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def load_module(module: torch.nn.Module, arrays: dict, prefix: str) -> None:
    state = module.state_dict()
    wanted = {k: arrays.get(f"{prefix}.{k}") for k in state}
    missing = [k for k, v in wanted.items() if v is None]
    if missing:
        raise CheckpointError(f"checkpoint lacks {len(missing)} tensors for {prefix!r}, e.g. {missing[:3]}")
    for k, ref in state.items():
        if tuple(wanted[k].shape) != tuple(ref.shape):
            raise CheckpointError(f"{prefix}.{k}: shape {wanted[k].shape} != {tuple(ref.shape)}")
    module.load_state_dict({k: torch.from_numpy(v).to(state[k].dtype) for k, v in wanted.items()})
