"""Polyline rasterization onto ink-on-black canvases.

Pixel (r, c) covers the unit square whose centre is (c + 0.5, r + 0.5) in
(x, y) canvas coordinates. A pixel is inked when its centre lies within the
pen radius of a stroke segment. The radius is ``pen_width / 2`` but never
below half a pixel diagonal, so a lone point always inks the pixel it falls in.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError

MARGIN = 4


def pen_radius(pen_width):
    return max(pen_width / 2.0, math.sqrt(0.5))


def draw_polylines(canvas, strokes, pen_width, value=1.0):
    """Ink ``strokes`` (sequences of (x, y)) into ``canvas`` in place. Returns the canvas."""
    h, w = canvas.shape
    r = pen_radius(pen_width)
    r2 = r * r
    for stroke in strokes:
        pts = np.asarray(stroke, dtype=np.float64).reshape(-1, 2)
        if len(pts) == 1:
            pts = np.vstack([pts, pts])
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            c0 = max(int(math.floor(min(x0, x1) - r - 0.5)), 0)
            c1 = min(int(math.ceil(max(x0, x1) + r + 0.5)), w)
            r0 = max(int(math.floor(min(y0, y1) - r - 0.5)), 0)
            r1 = min(int(math.ceil(max(y0, y1) + r + 0.5)), h)
            if c0 >= c1 or r0 >= r1:
                continue
            px = np.arange(c0, c1) + 0.5
            py = np.arange(r0, r1)[:, None] + 0.5
            dx, dy = x1 - x0, y1 - y0
            seg2 = dx * dx + dy * dy
            if seg2 > 0:
                t = np.clip(((px - x0) * dx + (py - y0) * dy) / seg2, 0.0, 1.0)
            else:
                t = 0.0
            ex = px - (x0 + t * dx)
            ey = py - (y0 + t * dy)
            hit = ex * ex + ey * ey <= r2
            patch = canvas[r0:r1, c0:c1]
            patch[hit] = np.maximum(patch[hit], value)
    return canvas


def fit_transform(points, height, width, margin=MARGIN, upscale=True):
    """Scale and offset mapping the bounding box of ``points`` centred into the canvas.

    Returns ``(scale, ox, oy)`` with canvas point = (x * scale + ox, y * scale + oy).
    The scale is uniform, so the aspect ratio is preserved.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    bw, bh = hi - lo
    avail_w, avail_h = width - 2 * margin, height - 2 * margin
    cands = []
    if bw > 0:
        cands.append(avail_w / bw)
    if bh > 0:
        cands.append(avail_h / bh)
    scale = min(cands) if cands else 1.0
    if not upscale:
        scale = min(scale, 1.0)
    cx, cy = (lo + hi) / 2.0
    return scale, width / 2.0 - cx * scale, height / 2.0 - cy * scale


def rasterize(strokes, height, width, pen_width=2, upscale=True):
    """Draw strokes scaled uniformly into an ``height`` x ``width`` image with a 4-pixel margin."""
    if not strokes:
        raise ContractError("rasterize needs at least one stroke")
    if height < 8 or width < 8:
        raise ContractError(f"target {height}x{width} is too small (minimum 8x8)")
    arrays = [np.asarray(getattr(s, "points", s), dtype=np.float64).reshape(-1, 2) for s in strokes]
    if any(len(a) == 0 for a in arrays):
        raise ContractError("every stroke needs at least one point")
    scale, ox, oy = fit_transform(np.vstack(arrays), height, width, upscale=upscale)
    placed = [a * scale + (ox, oy) for a in arrays]
    return draw_polylines(np.zeros((height, width)), placed, pen_width)
