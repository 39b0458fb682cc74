"""Flat checkpoint files: JSON header plus raw little-endian float payload.

Layout: 8-byte little-endian header length, UTF-8 JSON header (format tag,
free-form metadata, ordered tensor table with names/shapes/dtypes), then the
tensor payloads concatenated in table order.
"""

from __future__ import annotations

import json

import numpy as np

_FORMAT = "relightkit-checkpoint/1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors, meta=None):
    """Write an ordered {name: array} mapping with optional JSON metadata."""
    table = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in (np.float32, np.float64):
            raise CheckpointError(f"tensor {name!r} has non-float dtype {arr.dtype}")
        dt = "<f4" if arr.dtype == np.float32 else "<f8"
        table.append({"name": name, "shape": list(arr.shape), "dtype": dt})
        blobs.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    header = json.dumps({"format": _FORMAT, "meta": meta or {},
                         "tensors": table}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Read back (tensors: ordered {name: array}, meta: dict)."""
    with open(path, "rb") as f:
        hlen = int.from_bytes(f.read(8), "little")
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt checkpoint header: {e}") from None
        if header.get("format") != _FORMAT:
            raise CheckpointError(f"unknown checkpoint format {header.get('format')!r}")
        tensors = {}
        for row in header["tensors"]:
            shape = tuple(row["shape"])
            count = int(np.prod(shape)) if shape else 1
            itemsize = np.dtype(row["dtype"]).itemsize
            raw = f.read(count * itemsize)
            if len(raw) != count * itemsize:
                raise CheckpointError(f"payload truncated at tensor {row['name']!r}")
            tensors[row["name"]] = np.frombuffer(raw, dtype=row["dtype"]) \
                .reshape(shape).copy()
    return tensors, header["meta"]
