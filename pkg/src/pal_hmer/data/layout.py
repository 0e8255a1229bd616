"""Two-dimensional layout of LaTeX token sequences.

The supported grammar is a small TeX subset: glyph tokens, ``{...}``
groups, ``^``/``_`` scripts, ``\\frac{..}{..}`` and ``\\sqrt{..}``. Layout
happens in glyph-cell units (a glyph cell is 16 units tall) and produces a
list of placed items relative to the baseline; :func:`place` then fits the
whole expression into a canvas, never enlarging it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, UnsupportedTokenError
from . import glyphs
from .glyphs import AXIS, BASELINE, CELL
from .raster import MARGIN, draw_polylines

SCRIPT_SCALE = 0.7
# scripts move by this fraction of the (parent) glyph height
SCRIPT_SHIFT = 0.35
RULE_GAP = 1.5


class LayoutError(DataError):
    pass


@dataclass
class Glyph:
    token: str


@dataclass
class Row:
    children: list = field(default_factory=list)


@dataclass
class Script:
    base: object
    sup: object = None
    sub: object = None


@dataclass
class Frac:
    num: object
    den: object


@dataclass
class Sqrt:
    body: object


def parse(tokens):
    """Parse a token list into a layout tree, raising on unsupported tokens or unbalanced braces."""
    for tok in tokens:
        if not glyphs.has_glyph(tok):
            raise UnsupportedTokenError(tok)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take():
        nonlocal pos
        tok = peek()
        if tok is None:
            raise LayoutError(f"unexpected end of label {' '.join(tokens)!r}")
        pos += 1
        return tok

    def row(closing):
        items = []
        while peek() is not None and peek() != "}":
            node = atom()
            while peek() in ("^", "_"):
                op = take()
                arg = group()
                if not isinstance(node, Script):
                    node = Script(node)
                slot = "sup" if op == "^" else "sub"
                if getattr(node, slot) is not None:
                    raise LayoutError(f"double {op} in {' '.join(tokens)!r}")
                setattr(node, slot, arg)
            items.append(node)
        if closing:
            if take() != "}":
                raise LayoutError("missing }")
        elif peek() is not None:
            raise LayoutError(f"unbalanced }} in {' '.join(tokens)!r}")
        return Row(items)

    def group():
        if peek() == "{":
            take()
            return row(closing=True)
        return atom()

    def atom():
        tok = take()
        if tok == "{":
            return row(closing=True)
        if tok == r"\frac":
            return Frac(group(), group())
        if tok == r"\sqrt":
            return Sqrt(group())
        if tok in ("^", "_"):
            # script with no base, e.g. a label starting with ^
            nonlocal pos
            pos -= 1
            return Row([])
        if tok == "}":
            raise LayoutError(f"unbalanced }} in {' '.join(tokens)!r}")
        letters = glyphs.word_letters(tok)
        if letters:
            return Row([Glyph(ch) for ch in letters])
        return Glyph(tok)

    return row(closing=False)


@dataclass
class Box:
    width: float
    ascent: float
    descent: float
    # ("glyph", token, x, y_top, scale) | ("rule", x0, x1, y, scale) | ("path", [(x, y), ...], scale)
    items: list


def _shift(items, dx, dy):
    out = []
    for it in items:
        if it[0] == "glyph":
            out.append(("glyph", it[1], it[2] + dx, it[3] + dy, it[4]))
        elif it[0] == "rule":
            out.append(("rule", it[1] + dx, it[2] + dx, it[3] + dy, it[4]))
        else:
            out.append(("path", [(x + dx, y + dy) for x, y in it[1]], it[2]))
    return out


def layout(node, s=1.0):
    if isinstance(node, Glyph):
        return Box(CELL * s, BASELINE * s, (CELL - BASELINE) * s, [("glyph", node.token, 0.0, -BASELINE * s, s)])
    if isinstance(node, Row):
        x, asc, desc, items = 0.0, 0.0, 0.0, []
        for child in node.children:
            b = layout(child, s)
            items += _shift(b.items, x, 0.0)
            x += b.width
            asc, desc = max(asc, b.ascent), max(desc, b.descent)
        return Box(x, asc, desc, items)
    if isinstance(node, Script):
        base = layout(node.base, s)
        items = list(base.items)
        width, asc, desc = base.width, base.ascent, base.descent
        shift = SCRIPT_SHIFT * CELL * s
        extra = 0.0
        if node.sup is not None:
            b = layout(node.sup, s * SCRIPT_SCALE)
            items += _shift(b.items, base.width, -shift)
            asc = max(asc, b.ascent + shift)
            desc = max(desc, b.descent - shift)
            extra = max(extra, b.width)
        if node.sub is not None:
            b = layout(node.sub, s * SCRIPT_SCALE)
            items += _shift(b.items, base.width, shift)
            asc = max(asc, b.ascent - shift)
            desc = max(desc, b.descent + shift)
            extra = max(extra, b.width)
        return Box(width + extra, asc, desc, items)
    if isinstance(node, Frac):
        num, den = layout(node.num, s), layout(node.den, s)
        pad = 2.0 * s
        width = max(num.width, den.width) + 2 * pad
        rule_y = -(BASELINE - AXIS) * s
        num_base = rule_y - RULE_GAP * s - num.descent
        den_base = rule_y + RULE_GAP * s + den.ascent
        items = _shift(num.items, (width - num.width) / 2, num_base)
        items += _shift(den.items, (width - den.width) / 2, den_base)
        items.append(("rule", pad / 2, width - pad / 2, rule_y, s))
        return Box(width, num.ascent - num_base, den_base + den.descent, items)
    if isinstance(node, Sqrt):
        body = layout(node.body, s)
        lead = 8.0 * s
        top = -(body.ascent + RULE_GAP * s)
        bottom = body.descent
        h = bottom - top
        x0 = 1.0 * s
        width = lead + body.width + 1.0 * s
        path = [(x0, top + 0.6 * h), (x0 + 1.5 * s, top + 0.5 * h), (x0 + 3.5 * s, bottom),
                (x0 + 6.5 * s, top), (width, top)]
        items = _shift(body.items, lead, 0.0) + [("path", path, s)]
        return Box(width, -top + 1.0 * s, bottom, items)
    raise TypeError(f"unknown layout node {node!r}")


@dataclass
class Placement:
    """An expression fitted into a canvas: every item in canvas pixel coordinates."""

    height: int
    width: int
    scale: float
    items: list

    def glyph_boxes(self):
        """(token, x0, y0, x1, y1) cell rectangles of the placed glyphs, in drawing order."""
        out = []
        for it in self.items:
            if it[0] == "glyph":
                size = CELL * it[4]
                out.append((it[1], it[2], it[3], it[2] + size, it[3] + size))
        return out

    def rules(self):
        return [it for it in self.items if it[0] == "rule"]


def place(tokens, height, width):
    box = layout(parse(list(tokens)))
    total_h = box.ascent + box.descent
    cands = [1.0]
    if box.width > 0:
        cands.append((width - 2 * MARGIN) / box.width)
    if total_h > 0:
        cands.append((height - 2 * MARGIN) / total_h)
    S = min(cands)
    ox = width / 2.0 - box.width * S / 2.0
    oy = height / 2.0 - (box.descent - box.ascent) * S / 2.0
    items = []
    for it in box.items:
        if it[0] == "glyph":
            items.append(("glyph", it[1], ox + it[2] * S, oy + it[3] * S, it[4] * S))
        elif it[0] == "rule":
            items.append(("rule", ox + it[1] * S, ox + it[2] * S, oy + it[3] * S, it[4] * S))
        else:
            items.append(("path", [(ox + x * S, oy + y * S) for x, y in it[1]], it[2] * S))
    return Placement(height, width, S, items)


def _paste(canvas, bitmap, x, y, k):
    """Max-composite ``bitmap`` with its top-left at (x, y), scaled by k <= 1."""
    n = bitmap.shape[0]
    centers = np.arange(n) + 0.5
    rows = np.floor(y + centers * k + 1e-9).astype(int)
    cols = np.floor(x + centers * k + 1e-9).astype(int)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    ok = (rr >= 0) & (rr < canvas.shape[0]) & (cc >= 0) & (cc < canvas.shape[1]) & (bitmap > 0)
    np.maximum.at(canvas, (rr[ok], cc[ok]), bitmap[ok])


def render_placement(placement):
    canvas = np.zeros((placement.height, placement.width))
    for it in placement.items:
        if it[0] == "glyph":
            _paste(canvas, glyphs.glyph_bitmap(it[1]), it[2], it[3], it[4])
        elif it[0] == "rule":
            draw_polylines(canvas, [[(it[1], it[3]), (it[2], it[3])]], glyphs.ATLAS_PEN * it[4])
        else:
            draw_polylines(canvas, [it[1]], glyphs.ATLAS_PEN * it[2])
    return canvas


def render_printed(tokens, height, width):
    """Printed template of a token sequence, composed from the fixed glyph bitmaps."""
    return render_placement(place(tokens, height, width))


def placement_strokes(placement):
    """Polylines of every placed item, grouped per glyph/rule/path, in canvas coordinates."""
    groups = []
    for it in placement.items:
        if it[0] == "glyph":
            k = it[4]
            groups.append([[(it[2] + x * k, it[3] + y * k) for x, y in stroke]
                           for stroke in glyphs.glyph_strokes(it[1])])
        elif it[0] == "rule":
            groups.append([[(it[1], it[3]), (it[2], it[3])]])
        else:
            groups.append([list(it[1])])
    return groups
