"""Built-in stroke font and the 16x16 bitmap atlas rendered from it.

Glyphs are polylines in a 16-unit cell, x to the right and y downward.
Letters without ascenders sit between y=6 and the baseline at y=13;
digits and tall letters start near y=2. The printed template uses the
bitmaps; synthetic handwriting re-draws the same polylines with jitter.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import UnsupportedTokenError
from .raster import draw_polylines

CELL = 16
BASELINE = 13.0
# vertical centre of "-", "+", "=" and of fraction rules, in cell units
AXIS = 8.0
ATLAS_PEN = 2


def _arc(cx, cy, rx, ry, a0, a1, n=14):
    t = np.radians(np.linspace(a0, a1, n))
    return [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in t]


def _ring(cx, cy, rx, ry, n=18):
    return _arc(cx, cy, rx, ry, 0, 360, n)


_STROKES = {
    "a": [_ring(7.5, 9.5, 3, 3.5), [(10.5, 6), (10.5, 13)]],
    "b": [[(5, 2), (5, 13)], _ring(8, 9.5, 3, 3.5)],
    "c": [_arc(8.2, 9.5, 3.5, 3.5, 45, 315)],
    "d": [_ring(7.5, 9.5, 3, 3.5), [(10.5, 2), (10.5, 13)]],
    "e": [[(4.5, 9.5), (11.5, 9.5)], _arc(8, 9.5, 3.5, 3.5, 360, 45)],
    "f": [[(11, 3), (9.5, 2), (8, 2.5), (7, 4), (7, 13)], [(5, 7), (10, 7)]],
    "g": [_ring(7.5, 9, 3, 3), [(10.5, 6), (10.5, 13.5), (8.5, 15.5), (5, 14.5)]],
    "h": [[(5, 2), (5, 13)], [(5, 9), (6.5, 6.5), (9, 6), (11, 8), (11, 13)]],
    "i": [[(8, 6), (8, 13)], [(8, 3.5)]],
    "j": [[(9, 6), (9, 14), (8, 15.5), (5.5, 15)], [(9, 3.5)]],
    "k": [[(5, 2), (5, 13)], [(11, 6), (5, 10)], [(7, 9), (11, 13)]],
    "l": [[(7, 2), (8, 2), (8, 13), (10, 13)]],
    "m": [[(3, 6), (3, 13)], [(3, 8), (4.5, 6), (6.5, 6.5), (8, 8), (8, 13)],
          [(8, 8), (9.5, 6), (11.5, 6.5), (13, 8), (13, 13)]],
    "n": [[(5, 6), (5, 13)], [(5, 8), (7, 6), (9.5, 6.2), (11, 8), (11, 13)]],
    "o": [_ring(8, 9.5, 3.5, 3.5)],
    "p": [[(5, 6), (5, 15.5)], _ring(8, 9.5, 3, 3.5)],
    "q": [_ring(7.5, 9.5, 3, 3.5), [(10.5, 6), (10.5, 15.5), (12, 14.5)]],
    "r": [[(5.5, 6), (5.5, 13)], [(5.5, 9), (7, 6.8), (9, 6), (11, 6.5)]],
    "s": [[(11, 7), (9.5, 6), (6.5, 6), (5, 7.3), (6, 9), (10, 10), (11, 11.7), (9.5, 13), (6.5, 13), (5, 12)]],
    "t": [[(7, 3), (7, 12), (8, 13), (10.5, 12.5)], [(4.5, 6.5), (10.5, 6.5)]],
    "u": [[(5, 6), (5, 11), (6.5, 13), (9.5, 13), (11, 11)], [(11, 6), (11, 13)]],
    "v": [[(4.5, 6), (8, 13), (11.5, 6)]],
    "w": [[(2.5, 6), (5, 13), (8, 8), (11, 13), (13.5, 6)]],
    "x": [[(4.5, 6), (11.5, 13)], [(11.5, 6), (4.5, 13)]],
    "y": [[(4.5, 6), (8, 12.5)], [(11.5, 6), (8, 12.5), (6, 15.5)]],
    "z": [[(4.5, 6), (11.5, 6), (4.5, 13), (11.5, 13)]],
    "0": [_ring(8, 7.5, 3.5, 5.5)],
    "1": [[(5.5, 4.5), (8.5, 2), (8.5, 13)], [(5.5, 13), (11.5, 13)]],
    "2": [[(4.5, 5), (5.5, 3), (8, 2), (10.5, 3), (11.5, 5), (10.5, 7.5), (4.5, 13), (11.5, 13)]],
    "3": [[(4.5, 3), (6.5, 2), (9.5, 2), (11, 3.5), (10.5, 6), (7.5, 7.3)],
          [(7.5, 7.3), (10.5, 8.5), (11.5, 10.5), (10.5, 12.5), (8, 13.2), (5.5, 13), (4.5, 12)]],
    "4": [[(9.5, 13), (9.5, 2), (4, 10), (12, 10)]],
    "5": [[(11, 2), (5.5, 2), (5, 7), (8, 6.3), (10.5, 7.2), (11.5, 9.7), (10.5, 12.3), (8, 13.2), (5.5, 12.8),
           (4.5, 11.5)]],
    "6": [[(10.5, 2.5), (8, 2), (5.5, 4), (4.5, 8), (5, 11.5), (7.5, 13.2), (10, 12.5), (11.3, 10), (10.2, 7.8),
           (7.8, 7.2), (5.5, 8.5), (4.6, 10)]],
    "7": [[(4.5, 2), (11.5, 2), (7, 13)]],
    "8": [_ring(8, 4.8, 3, 2.8), _ring(8, 10.3, 3.5, 2.9)],
    "9": [_ring(7.8, 5.5, 3.2, 3.3), [(11, 5.5), (10.5, 10), (8.5, 13), (5.5, 13)]],
    "+": [[(8, 4.5), (8, 11.5)], [(4.5, 8), (11.5, 8)]],
    "-": [[(4, 8), (12, 8)]],
    "=": [[(4.5, 6.5), (11.5, 6.5)], [(4.5, 10), (11.5, 10)]],
    "(": [_arc(12.5, 8, 5.5, 6.5, 120, 240)],
    ")": [_arc(3.5, 8, 5.5, 6.5, 60, -60)],
}

# multi-letter commands typeset as a run of plain glyphs
_WORDS = {r"\sin": "sin", r"\cos": "cos", r"\tan": "tan", r"\log": "log"}

# tokens laid out structurally rather than drawn from the atlas
STRUCTURAL = {"^", "_", "{", "}", r"\frac", r"\sqrt"}


def glyph_names():
    return sorted(_STROKES)


def has_glyph(token):
    return token in _STROKES or token in _WORDS or token in STRUCTURAL


def word_letters(token):
    return _WORDS.get(token)


def glyph_strokes(token):
    try:
        return _STROKES[token]
    except KeyError:
        raise UnsupportedTokenError(token) from None


@lru_cache(maxsize=None)
def _bitmap(token):
    img = draw_polylines(np.zeros((CELL, CELL)), glyph_strokes(token), ATLAS_PEN)
    img.setflags(write=False)
    return img


def glyph_bitmap(token):
    """Read-only 16x16 atlas bitmap for ``token``."""
    return _bitmap(token)


def supported_tokens():
    return sorted(set(_STROKES) | set(_WORDS) | STRUCTURAL)
