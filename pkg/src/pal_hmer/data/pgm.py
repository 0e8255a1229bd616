"""Binary PGM (P5) images, maxval 255; pixel byte = round(255 * value)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DataError


def encode_pgm(image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    raw = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = raw.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + raw.tobytes()


def decode_pgm(blob):
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PGM header")
        fields.append(blob[start:pos])
    if fields[0] != b"P5":
        raise DataError(f"not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise DataError("bad PGM header") from None
    if not 0 < maxval < 256:
        raise DataError(f"unsupported PGM maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos) if len(blob) - pos >= w * h else None
    if data is None:
        raise DataError("truncated PGM pixel data")
    return data.reshape(h, w).astype(np.float64) / maxval


def write_pgm(path, image):
    Path(path).write_bytes(encode_pgm(image))


def read_pgm(path):
    try:
        return decode_pgm(Path(path).read_bytes())
    except FileNotFoundError:
        raise DataError(f"missing image {path}") from None
