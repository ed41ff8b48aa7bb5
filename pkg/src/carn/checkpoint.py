"""Flat binary container for named tensors plus a JSON metadata block.

Layout: magic, u32 version, u32 metadata length, metadata JSON (UTF-8),
u32 tensor count, then per tensor: u16 name length + name, u8 dtype-string
length + numpy dtype str (little-endian), u8 ndim, u32 dims, u64 payload
size, raw row-major payload. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import CARNConfig, ModelParams, build_model

MAGIC = b"CARNBIN\x00"
VERSION = 1


def write_container(path, meta, arrays):
    """Write ``arrays`` (name -> ndarray) with a metadata dict to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            name_b = name.encode("utf-8")
            dtype_b = le.dtype.str.encode("ascii")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", len(dtype_b)))
            fh.write(dtype_b)
            fh.write(struct.pack("<B", le.ndim))
            for dim in le.shape:
                fh.write(struct.pack("<I", dim))
            payload = le.tobytes()
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def read_container(path):
    """Read back (meta, arrays) written by ``write_container``."""
    path = Path(path)
    raw = path.read_bytes()

    def take(n, off):
        if off + n > len(raw):
            raise ValueError(f"truncated container: {path}")
        return raw[off:off + n], off + n

    head, off = take(len(MAGIC), 0)
    if head != MAGIC:
        raise ValueError(f"not a tensor container: {path}")
    buf, off = take(4, off)
    version = struct.unpack("<I", buf)[0]
    if version != VERSION:
        raise ValueError(f"unsupported container version {version} in {path}")
    buf, off = take(4, off)
    meta_len = struct.unpack("<I", buf)[0]
    buf, off = take(meta_len, off)
    meta = json.loads(buf.decode("utf-8"))
    buf, off = take(4, off)
    count = struct.unpack("<I", buf)[0]
    arrays = {}
    for _ in range(count):
        buf, off = take(2, off)
        name_len = struct.unpack("<H", buf)[0]
        buf, off = take(name_len, off)
        name = buf.decode("utf-8")
        buf, off = take(1, off)
        buf, off = take(struct.unpack("<B", buf)[0], off)
        dtype = np.dtype(buf.decode("ascii"))
        buf, off = take(1, off)
        ndim = struct.unpack("<B", buf)[0]
        shape = []
        for _ in range(ndim):
            buf, off = take(4, off)
            shape.append(struct.unpack("<I", buf)[0])
        buf, off = take(8, off)
        nbytes = struct.unpack("<Q", buf)[0]
        buf, off = take(nbytes, off)
        arrays[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    if off != len(raw):
        raise ValueError(f"trailing bytes in container: {path}")
    return meta, arrays


def save_model(path, params, extra_meta=None):
    """Persist ModelParams (trainables plus bn running moments)."""
    meta = {"kind": "model", "config": params.config.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    arrays = {name: t.data for name, t in params.trainable().items()}
    for name, state in params.states().items():
        arrays[f"{name}.running_mean"] = state.mean
        arrays[f"{name}.running_var"] = state.var
    write_container(path, meta, arrays)


def load_model(path):
    """Rebuild ModelParams from a checkpoint, bit-exactly."""
    meta, arrays = read_container(path)
    if meta.get("kind") != "model":
        raise ValueError(f"container {path} does not hold a model")
    config = CARNConfig.from_dict(meta["config"])
    dtype = arrays["stem.w"].dtype.type
    params = build_model(config, seed=0, dtype=dtype)
    named = params.trainable()
    states = params.states()
    expected = set(named) | {
        f"{n}.{suffix}" for n in states for suffix in ("running_mean", "running_var")
    }
    if expected != set(arrays):
        missing = sorted(expected - set(arrays))
        surplus = sorted(set(arrays) - expected)
        raise ValueError(
            f"checkpoint {path} does not match its config: missing={missing} surplus={surplus}"
        )
    for name, t in named.items():
        if arrays[name].shape != t.data.shape:
            raise ValueError(
                f"checkpoint tensor {name} has shape {arrays[name].shape}, "
                f"expected {t.data.shape}"
            )
        t.data = arrays[name]
    for name, state in states.items():
        state.mean = arrays[f"{name}.running_mean"]
        state.var = arrays[f"{name}.running_var"]
    return params, meta
