"""Tensor container files (``.fstn``).

Layout: the 8-byte magic ``FSTN0001``, a little-endian uint64 header length,
a UTF-8 JSON header ``{"shape": [...], "dtype": "f64", "name": "..."}`` and
the row-major little-endian float64 payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FSTN0001"


class ContainerError(ValueError):
    pass


def dumps(array, name: str = "") -> bytes:
    # ascontiguousarray would promote 0-d arrays to shape (1,)
    arr = np.array(array, dtype="<f8", order="C")
    header = json.dumps(
        {"shape": list(arr.shape), "dtype": "f64", "name": name},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + arr.tobytes(order="C")


def loads(blob: bytes) -> tuple[np.ndarray, str]:
    if blob[:8] != MAGIC:
        raise ContainerError(f"bad magic {blob[:8]!r}")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from None
    if header.get("dtype") != "f64":
        raise ContainerError(f"unsupported dtype {header.get('dtype')!r}")
    shape = tuple(int(s) for s in header["shape"])
    payload = blob[16 + hlen :]
    count = int(np.prod(shape)) if shape else 1
    if len(payload) != 8 * count:
        raise ContainerError(f"payload holds {len(payload)} bytes, shape {shape} needs {8 * count}")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return arr, header.get("name", "")


def save(path, array, name: str = "") -> None:
    Path(path).write_bytes(dumps(array, name))


def load(path) -> tuple[np.ndarray, str]:
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise ContainerError(f"{p}: {exc}") from None
    try:
        return loads(blob)
    except ContainerError as exc:
        raise ContainerError(f"{p}: {exc}") from None
