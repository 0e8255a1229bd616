"""Sinusoidal position encodings for token sequences and feature grids."""
import numpy as np

from .errors import ConfigError

DEFAULT_BASE = 10000.0


def word_positional_encoding(x, d, n=DEFAULT_BASE):
    """Encoding of position(s) ``x``: even slot 2i is sin(x / n**(2i/d)), odd slot 2i+1 the cosine.

    ``x`` may be a scalar or an array of positions; the encoding is along a
    new last axis of length ``d``.
    """
    if d % 2:
        raise ConfigError(f"word positional encoding needs an even width, got d={d}")
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ConfigError("positions must be non-negative")
    i = np.arange(d // 2, dtype=np.float64)
    angles = x[..., None] / n ** (2.0 * i / d)
    out = np.empty(x.shape + (d,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def image_positional_encoding(h, w, d_model, n=DEFAULT_BASE):
    """2-D encoding of an h x w grid, shape (h, w, d_model).

    The first half encodes the row index normalized by ``h``, the second half
    the column index normalized by ``w``.
    """
    if d_model % 4:
        raise ConfigError(f"image positional encoding needs d_model divisible by 4, got {d_model}")
    half = d_model // 2
    rows = word_positional_encoding(np.arange(h) / h, half, n)
    cols = word_positional_encoding(np.arange(w) / w, half, n)
    out = np.empty((h, w, d_model))
    out[:, :, :half] = rows[:, None, :]
    out[:, :, half:] = cols[None, :, :]
    return out
