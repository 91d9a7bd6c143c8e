"""Binary checkpoint / named-tensor container.

Layout (all integers unsigned 32-bit little-endian):

    magic "S2TP" | version | config byte length | config utf-8 text
    tensor count | per tensor: name length, name utf-8, rank, dims...,
    raw float32 little-endian values, row-major

The config snapshot is the flat ``key = value`` text from
:mod:`s2tp.config`. Attention records reuse the same container with
tensors named Z, A and frame_mask (0/1 floats).
"""

from __future__ import annotations

import struct

import numpy as np

from . import config as config_mod
from .errors import CheckpointError

MAGIC = b"S2TP"
VERSION = 1


def _write_u32(fh, value):
    fh.write(struct.pack("<I", value))


def _read_u32(fh):
    raw = fh.read(4)
    if len(raw) != 4:
        raise CheckpointError("truncated checkpoint file")
    return struct.unpack("<I", raw)[0]


def save_tensors(path, config_text: str, tensors: dict):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write_u32(fh, VERSION)
        payload = config_text.encode("utf-8")
        _write_u32(fh, len(payload))
        fh.write(payload)
        _write_u32(fh, len(tensors))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            _write_u32(fh, len(encoded))
            fh.write(encoded)
            _write_u32(fh, arr.ndim)
            for dim in arr.shape:
                _write_u32(fh, dim)
            fh.write(arr.tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes")
        version = _read_u32(fh)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        config_text = fh.read(_read_u32(fh)).decode("utf-8")
        tensors = {}
        for _ in range(_read_u32(fh)):
            name = fh.read(_read_u32(fh)).decode("utf-8")
            rank = _read_u32(fh)
            shape = tuple(_read_u32(fh) for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError(f"{path}: truncated tensor data for {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        return config_text, tensors


def save_checkpoint(path, cfg: dict, tensors: dict):
    save_tensors(path, config_mod.dump(cfg), tensors)


def load_checkpoint(path):
    config_text, tensors = load_tensors(path)
    try:
        cfg = config_mod.parse_text(config_text)
    except Exception as exc:
        raise CheckpointError(f"{path}: invalid embedded config: {exc}") from exc
    return cfg, tensors


def save_attention_record(path, Z, A, frame_mask=None):
    A = np.asarray(A, dtype=np.float32)
    if frame_mask is None:
        frame_mask = np.ones(A.shape[1], dtype=np.float32)
    tensors = {
        "Z": np.asarray(Z, dtype=np.float32),
        "A": A,
        "frame_mask": np.asarray(frame_mask, dtype=np.float32),
    }
    save_tensors(path, "# attention record\n", tensors)


def load_attention_record(path):
    _, tensors = load_tensors(path)
    for name in ("Z", "A", "frame_mask"):
        if name not in tensors:
            raise CheckpointError(f"{path}: attention record missing tensor {name!r}")
    return tensors["Z"], tensors["A"], tensors["frame_mask"].astype(bool)
