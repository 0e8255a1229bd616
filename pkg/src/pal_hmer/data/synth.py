"""Seeded synthetic paired corpus.

Labels come from a small expression grammar; the printed image is the
atlas rendering, and the "handwritten" image re-draws the same glyph
strokes with per-glyph offsets, a global rotation and shear, and a random
pen width.
"""
from __future__ import annotations

import math
import string

import numpy as np

from .glyphs import STRUCTURAL
from .layout import place, placement_strokes, render_placement
from .pairs import PairedSample, with_markers
from .raster import rasterize
from .vocab import Vocabulary

ATOMS = tuple(string.ascii_lowercase + string.digits)
TOP_OPS = ("+", "-", "=")
NESTED_OPS = ("+", "-")

# number of terms in an expression -> probability
TOP_TERMS = {1: 0.35, 2: 0.45, 3: 0.20}
NESTED_TERMS = {1: 0.75, 2: 0.25}
P_COMPOUND = 0.35
COMPOUNDS = {"sup": 0.35, "sub": 0.25, "frac": 0.25, "sqrt": 0.15}

MAX_ROTATION_DEG = 8.0
MAX_SHEAR = 0.15
MAX_GLYPH_JITTER = 2.0
PEN_WIDTHS = (1, 2, 3)


def synth_vocabulary():
    return Vocabulary(sorted(set(ATOMS) | set(TOP_OPS) | set(STRUCTURAL)))


def _choice(rng, table):
    keys = list(table)
    return keys[rng.choice(len(keys), p=np.array([table[k] for k in keys]))]


def sample_expression(rng, depth, top=True):
    """Token list of a random expression with at most ``depth`` levels of nesting."""
    n = _choice(rng, TOP_TERMS if top else NESTED_TERMS)
    ops = TOP_OPS if top else NESTED_OPS
    out = []
    for i in range(n):
        if i:
            out.append(ops[rng.integers(len(ops))])
        out += _sample_term(rng, depth)
    return out


def _sample_term(rng, depth):
    atom = ATOMS[rng.integers(len(ATOMS))]
    if depth <= 0 or rng.random() >= P_COMPOUND:
        return [atom]
    kind = _choice(rng, COMPOUNDS)
    if kind in ("sup", "sub"):
        op = "^" if kind == "sup" else "_"
        return [atom, op, "{", *sample_expression(rng, depth - 1, False), "}"]
    if kind == "frac":
        num = sample_expression(rng, depth - 1, False)
        den = sample_expression(rng, depth - 1, False)
        return [r"\frac", "{", *num, "}", "{", *den, "}"]
    return [r"\sqrt", "{", *sample_expression(rng, depth - 1, False), "}"]


def handwrite(tokens, height, width, rng):
    """Jittered stroke re-rendering of the printed layout of ``tokens``."""
    placement = place(tokens, height, width)
    groups = placement_strokes(placement)
    theta = math.radians(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG))
    shear = rng.uniform(-MAX_SHEAR, MAX_SHEAR)
    pen = int(PEN_WIDTHS[rng.integers(len(PEN_WIDTHS))])
    cos, sin = math.cos(theta), math.sin(theta)
    affine = np.array([[cos, -sin], [sin, cos]]) @ np.array([[1.0, shear], [0.0, 1.0]])
    centre = np.array([width / 2.0, height / 2.0])
    strokes = []
    for group in groups:
        offset = rng.uniform(-MAX_GLYPH_JITTER, MAX_GLYPH_JITTER, size=2)
        for stroke in group:
            pts = np.asarray(stroke, dtype=np.float64) + offset
            strokes.append((pts - centre) @ affine.T + centre)
    return rasterize(strokes, height, width, pen_width=pen, upscale=False)


def synth_generate(grammar_depth, count, seed, height=64, width=256, vocab=None):
    if count < 1:
        raise ValueError("count must be >= 1")
    vocab = vocab or synth_vocabulary()
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        tokens = sample_expression(rng, grammar_depth)
        printed = render_placement(place(tokens, height, width))
        hand = handwrite(tokens, height, width, rng)
        while np.array_equal(hand, printed):
            hand = handwrite(tokens, height, width, rng)
        label = " ".join(tokens)
        samples.append(PairedSample(hand, printed, with_markers(vocab.encode(tokens)), label, f"s{seed}-{i:05d}"))
    return samples
