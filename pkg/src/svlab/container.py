"""Versioned flat binary container for named arrays plus JSON metadata.

Layout (all integers little-endian):

    magic   b"SVLB"
    uint32  format version
    uint32  metadata length, followed by that many UTF-8 JSON bytes
    uint32  array count
    per array:
        uint16  name length + name bytes
        uint16  dtype string length + dtype bytes (numpy dtype str)
        uint8   ndim, then ndim * int64 shape
        raw C-order data bytes

Writing is fully deterministic: metadata keys are sorted and no timestamps
are stored, so identical content produces identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

__all__ = ["save_container", "load_container", "FORMAT_VERSION"]

MAGIC = b"SVLB"
FORMAT_VERSION = 1


def save_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            name_b = name.encode("utf-8")
            dtype_b = arr.dtype.str.encode("ascii")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<H", len(dtype_b)))
            fh.write(dtype_b)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<q", dim))
            fh.write(arr.tobytes())


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a svlab container")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (dtype_len,) = struct.unpack("<H", fh.read(2))
            dtype = np.dtype(fh.read(dtype_len).decode("ascii"))
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<q", fh.read(8))[0] for _ in range(ndim))
            n_bytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
            data = np.frombuffer(fh.read(n_bytes), dtype=dtype).reshape(shape)
            arrays[name] = data.copy()
    return meta, arrays
