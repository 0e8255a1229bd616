"""Paired (handwritten, printed, label) samples and their on-disk layout."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .inkml import strip_math_delimiters
from .layout import render_printed
from .pgm import read_pgm, write_pgm
from .raster import rasterize
from .vocab import BOS, EOS, PAD, build_vocab, split_latex, tokenize


@dataclass
class PairedSample:
    a_h: np.ndarray
    a_p: np.ndarray
    b: list  # ids, BOS first and EOS last
    label: str = ""
    id: str = ""


def with_markers(ids):
    return [BOS, *ids, EOS]


def make_pairs(records, vocab, height=64, width=256, pen_width=2):
    out = []
    for rec in records:
        label = strip_math_delimiters(rec.label)
        try:
            ids = tokenize(label, vocab)
            tokens = split_latex(label)
            printed = render_printed(tokens, height, width)
        except DataError as exc:
            raise DataError(f"record {rec.id!r}: {exc}") from None
        hand = rasterize(rec.strokes, height, width, pen_width)
        out.append(PairedSample(hand, printed, with_markers(ids), " ".join(tokens), rec.id))
    return out


def batch_arrays(samples):
    """Stack a batch: (a_h, a_p) image arrays plus right-padded ids and lengths."""
    a_h = np.stack([s.a_h for s in samples])
    a_p = np.stack([s.a_p for s in samples])
    lengths = np.array([len(s.b) for s in samples])
    ids = np.full((len(samples), lengths.max()), PAD, dtype=np.int64)
    for i, s in enumerate(samples):
        ids[i, : len(s.b)] = s.b
    return a_h, a_p, ids, lengths


MANIFEST = "manifest.csv"


def save_dataset(samples, out_dir, splits=None):
    """Write ``manifest.csv`` (id,label,split) and ``images/<id>_h.pgm`` / ``<id>_p.pgm``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    splits = splits or ["train"] * len(samples)
    with open(out / MANIFEST, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "split"])
        for s, split in zip(samples, splits):
            w.writerow([s.id, s.label, split])
            write_pgm(out / "images" / f"{s.id}_h.pgm", s.a_h)
            write_pgm(out / "images" / f"{s.id}_p.pgm", s.a_p)


def read_manifest(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"id", "label", "split"} <= set(rows[0]):
        raise DataError(f"{path}: manifest needs columns id,label,split")
    return rows


def load_dataset(data_dir, vocab=None, split=None):
    """Load a directory written by :func:`save_dataset`.

    Returns ``(samples, vocab)``; when no vocabulary is given one is built
    from every label in the manifest.
    """
    root = Path(data_dir)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise DataError(f"{root}: no {MANIFEST}")
    rows = read_manifest(manifest)
    vocab = vocab or build_vocab(r["label"] for r in rows)
    samples = []
    for r in rows:
        if split is not None and r["split"] != split:
            continue
        try:
            ids = tokenize(r["label"], vocab)
        except DataError as exc:
            raise DataError(f"record {r['id']!r}: {exc}") from None
        hand = read_pgm(root / "images" / f"{r['id']}_h.pgm")
        printed = read_pgm(root / "images" / f"{r['id']}_p.pgm")
        samples.append(PairedSample(hand, printed, with_markers(ids), r["label"], r["id"]))
    return samples, vocab
