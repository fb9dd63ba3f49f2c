"""Binary checkpoint container for named float64 tensors.

Layout (little-endian): magic "AGRF", u32 version=1, u32 tensor count, then
per-tensor records of (u32 name length, UTF-8 name, u32 rank, u64 extents,
raw f64 payload). Round-trips byte-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"AGRF"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(path, tensors):
    """Write an ordered {name: ndarray} mapping."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for ext in arr.shape:
                fh.write(struct.pack("<Q", ext))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
            n = int(np.prod(shape)) if shape else 1
            payload = fh.read(8 * n)
            if len(payload) != 8 * n:
                raise CheckpointError(f"{path}: truncated payload for '{name}'")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        return out
