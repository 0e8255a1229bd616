"""PALX checkpoint files.

Layout, all integers little-endian::

    b"PALX"  uint32 version  uint32 record_count
    record_count x ( uint32 name_len, utf-8 name, uint32 rank,
                     rank x uint64 dim, prod(dims) x float64 )

Records are written in the order given, so identical state produces
identical bytes.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"PALX"
VERSION = 1


class CheckpointError(DataError):
    pass


def dumps(arrays):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.require(arr, dtype="<f8", requirements="C")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob):
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a PALX checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", view, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 12
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", view, off)
            off += 4
            name = bytes(view[off : off + nlen]).decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", view, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", view, off)
            off += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(view, dtype="<f8", count=n, offset=off).reshape(dims)
            off += 8 * n
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(view):
        raise CheckpointError(f"{len(view) - off} trailing bytes after last record")
    return out


def save(path, arrays):
    Path(path).write_bytes(dumps(arrays))


def load(path):
    return loads(Path(path).read_bytes())
