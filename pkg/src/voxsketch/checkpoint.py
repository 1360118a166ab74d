"""Binary container for named float32 arrays (model checkpoints).

Layout: magic ``SKFCKPT1``, then a uint32 record count, then per record a
uint32 name length, the UTF-8 name, a uint32 rank, that many uint32 dims, and
the float32 payload. All integers and floats are little-endian. A save
followed by a load is bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SKFCKPT1"


class FormatError(ValueError):
    """File does not follow the declared binary layout."""


def save_checkpoint(path, arrays):
    """Write a {name: ndarray} mapping; values are stored as float32."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    """Read a checkpoint back into an ordered {name: float32 ndarray} dict."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "record count"))
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(fh, 4 * size, f"payload of {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        if fh.read(1):
            raise FormatError("trailing bytes after final record")
    return out
