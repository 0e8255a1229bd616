"""Transformer decoder over an encoder feature grid.

Each layer is pre-norm: masked self-attention, cross-attention over the
grid (features plus image positional encoding), then a position-wise FFN,
each wrapped in a residual connection. ``d`` (the per-step features handed
to the discriminator) is the final LayerNorm output; the classifier head
maps it to logits.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .nn import Embedding, LayerNorm, Linear, Module, Parameter, he_normal
from .positional import word_positional_encoding
from .tensor import Tensor


def causal_mask(length):
    if length < 1:
        raise ContractError("causal mask needs length >= 1")
    return np.tri(length, dtype=bool)


def _swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return T.transpose(x, tuple(axes))


def scaled_dot_attention(q, k, v, mask=None, dropout=0.0, rng=None, training=False, weights_out=None):
    """softmax(q k^T / sqrt(d_k) + bias) v, batched over leading axes.

    ``mask`` is boolean, True where attention is allowed, broadcastable to
    (..., L_q, L_k). When ``weights_out`` is a list the attention weights
    (as an ndarray) are appended to it.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    scores = (q @ _swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != (q.shape[-2], k.shape[-2]):
            raise DimensionError(f"mask shape {mask.shape} does not match {q.shape[-2]}x{k.shape[-2]} scores")
        if not mask.any(axis=-1).all():
            raise ContractError("attention mask has a fully masked row")
        scores = scores + np.where(mask, 0.0, -np.inf)
    weights = T.softmax(scores, axis=-1)
    if weights_out is not None:
        weights_out.append(weights.data)
    if training and dropout > 0:
        weights = T.dropout(weights, dropout, rng)
    return weights @ v


def _split_heads(x, h):
    b, n, d = x.shape
    return T.transpose(x.reshape(b, n, h, d // h), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, n, dk = x.shape
    return T.transpose(x, (0, 2, 1, 3)).reshape(b, n, h * dk)


def multi_head_attention(query, key, value, heads, w_q, w_k, w_v, w_o, mask=None, **attn_kwargs):
    """Multi-head attention with one fused projection per role.

    Head i reads columns ``[i*d_k, (i+1)*d_k)`` of ``query @ w_q`` (likewise for
    keys and values); the concatenated heads are projected by ``w_o``.
    Inputs are (B, L, d_model) or unbatched (L, d_model).
    """
    d_model = w_q.shape[1]
    if d_model % heads:
        raise ConfigError(f"d_model={d_model} is not divisible by {heads} heads")
    unbatched = query.ndim == 2
    if unbatched:
        query, key, value = (x.reshape(1, *x.shape) for x in (query, key, value))
    q = _split_heads(query @ w_q, heads)
    k = _split_heads(key @ w_k, heads)
    v = _split_heads(value @ w_v, heads)
    out = _merge_heads(scaled_dot_attention(q, k, v, mask, **attn_kwargs)) @ w_o
    return out.reshape(out.shape[1], out.shape[2]) if unbatched else out


def ffn(x, w1, b1, w2, b2, dropout=0.0, rng=None, training=False):
    hidden = T.relu(x @ w1 + b1)
    if training and dropout > 0:
        hidden = T.dropout(hidden, dropout, rng)
    return hidden @ w2 + b2


class MultiHeadAttention(Module):
    def __init__(self, d_model, heads, rng):
        super().__init__()
        if d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        self.heads = heads
        self.w_q = Parameter(he_normal(rng, (d_model, d_model), d_model))
        self.w_k = Parameter(he_normal(rng, (d_model, d_model), d_model))
        self.w_v = Parameter(he_normal(rng, (d_model, d_model), d_model))
        self.w_o = Parameter(he_normal(rng, (d_model, d_model), d_model))
        self.last_weights = None

    def forward(self, query, key, value, mask=None, dropout=0.0, rng=None, keep_weights=False):
        sink = [] if keep_weights else None
        out = multi_head_attention(query, key, value, self.heads, self.w_q, self.w_k, self.w_v, self.w_o, mask,
                                   dropout=dropout, rng=rng, training=self.training, weights_out=sink)
        if keep_weights:
            self.last_weights = sink[0]
        return out


class FeedForward(Module):
    def __init__(self, d_model, d_ff, rng):
        super().__init__()
        self.lin1 = Linear(d_model, d_ff, rng)
        self.lin2 = Linear(d_ff, d_model, rng)

    def forward(self, x, dropout=0.0, rng=None):
        return ffn(x, self.lin1.weight, self.lin1.bias, self.lin2.weight, self.lin2.bias,
                   dropout, rng, self.training)


class DecoderLayer(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        d = cfg.d_model
        self.norm1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.heads, rng)
        self.norm2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, cfg.heads, rng)
        self.norm3 = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.d_ff, rng)
        self.dropout = cfg.dropout

    def forward(self, x, memory, mask, rng=None, keep_weights=False):
        p = self.dropout
        h = self.norm1(x)
        x = x + self.self_attn(h, h, h, mask, p, rng, keep_weights)
        h = self.norm2(x)
        x = x + self.cross_attn(h, memory, memory, None, p, rng, keep_weights)
        return x + self.ffn(self.norm3(x), p, rng)


class ClassifierHead(Module):
    def __init__(self, d_in, width, d_out, layers, rng):
        super().__init__()
        dims = [d_in] + [width] * (layers - 1) + [d_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


class DecoderCache:
    """Per-layer self-attention keys/values and projected memory for incremental decoding."""

    def __init__(self, n_layers):
        self.keys = [None] * n_layers
        self.values = [None] * n_layers
        self.mem_k = [None] * n_layers
        self.mem_v = [None] * n_layers
        self.memory = None
        self.length = 0

    def select(self, rows):
        """Keep (and reorder) batch rows, e.g. after a beam-search step."""
        rows = np.asarray(rows)
        for lst in (self.keys, self.values, self.mem_k, self.mem_v):
            for i, arr in enumerate(lst):
                if arr is not None:
                    lst[i] = arr[rows]
        if self.memory is not None:
            self.memory = self.memory[rows]
        return self


class Decoder(Module):
    def __init__(self, cfg, vocab_size, rng):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.embed = Embedding(vocab_size, cfg.d_model, rng)
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.decoder_layers)]
        self.final_norm = LayerNorm(cfg.d_model)
        self.head = ClassifierHead(cfg.d_model, cfg.head_width, vocab_size, cfg.head_layers, rng)
        self.dropout_rng = np.random.default_rng(rng.integers(2 ** 63))

    def embed_tokens(self, ids, offset=0):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IndexError(f"token id outside vocabulary of size {self.vocab_size}")
        d = self.cfg.d_model
        pos = word_positional_encoding(np.arange(offset, offset + ids.shape[-1]), d, self.cfg.pe_base)
        return self.embed(ids) * math.sqrt(d) + pos

    def forward(self, grid, ids, keep_weights=False):
        """Teacher-forced pass. ``ids`` is (B, L) (or (L,) for one sequence).

        Returns ``(logits, d)`` with shapes (B, L, V) and (B, L, d_model).
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[-1] == 0:
            raise ContractError("decoder needs at least one input token")
        memory = grid.memory()
        if memory.shape[0] != ids.shape[0]:
            raise DimensionError(f"{memory.shape[0]} grids but {ids.shape[0]} token sequences")
        if memory.shape[-1] != self.cfg.d_model:
            raise DimensionError(f"grid width {memory.shape[-1]} != d_model {self.cfg.d_model}")
        x = self.embed_tokens(ids)
        mask = causal_mask(ids.shape[1])
        for layer in self.layers:
            x = layer(x, memory, mask, self.dropout_rng, keep_weights)
        d = self.final_norm(x)
        return self.head(d), d

    # -- incremental decoding (inference only) --------------------------------
    def start(self, grid):
        cache = DecoderCache(len(self.layers))
        cache.memory = grid.memory().data
        return cache

    def step(self, cache, ids):
        """Feed one token per batch row; returns logits (B, V) for the next position.

        Must be called under :func:`tensor.no_grad` with the module in eval mode.
        """
        ids = np.asarray(ids, dtype=np.int64).reshape(-1, 1)
        x = self.embed_tokens(ids, offset=cache.length).data
        mem = cache.memory
        for i, layer in enumerate(self.layers):
            sa, ca = layer.self_attn, layer.cross_attn
            h = layer.norm1(Tensor(x)).data
            k_new, v_new = h @ sa.w_k.data, h @ sa.w_v.data
            cache.keys[i] = k_new if cache.keys[i] is None else np.concatenate([cache.keys[i], k_new], axis=1)
            cache.values[i] = v_new if cache.values[i] is None else np.concatenate([cache.values[i], v_new], axis=1)
            x = x + _cached_attention(h @ sa.w_q.data, cache.keys[i], cache.values[i], sa)
            h = layer.norm2(Tensor(x)).data
            if cache.mem_k[i] is None:
                cache.mem_k[i], cache.mem_v[i] = mem @ ca.w_k.data, mem @ ca.w_v.data
            x = x + _cached_attention(h @ ca.w_q.data, cache.mem_k[i], cache.mem_v[i], ca)
            x = x + layer.ffn(Tensor(layer.norm3(Tensor(x)).data)).data
        cache.length += 1
        d = self.final_norm(Tensor(x))
        return self.head(d).data[:, 0, :]


def _cached_attention(q, k, v, attn):
    """Attention of pre-projected (B, Lq, d) queries against (B, Lk, d) keys/values, then W_O."""
    h = attn.heads
    b, lq, dm = q.shape
    dk = dm // h
    qh = q.reshape(b, lq, h, dk).transpose(0, 2, 1, 3)
    kh = k.reshape(b, -1, h, dk).transpose(0, 2, 1, 3)
    vh = v.reshape(b, -1, h, dk).transpose(0, 2, 1, 3)
    scores = qh @ kh.transpose(0, 1, 3, 2) * (1.0 / math.sqrt(dk))
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    out = (w @ vh).transpose(0, 2, 1, 3).reshape(b, lq, dm)
    return out @ attn.w_o.data


def decoder_forward(decoder, grid, b):
    """Teacher-forced decode of one sequence: ``(logits[L, V], d[L, d_model])``.

    ``grid`` must hold a single image; batched callers use ``decoder(grid, ids)``.
    """
    b = np.asarray(b, dtype=np.int64)
    if b.ndim != 1:
        raise DimensionError(f"decoder_forward takes a 1-D token sequence, got shape {b.shape}")
    logits, d = decoder(grid, b[None])
    return logits.reshape(*logits.shape[1:]), d.reshape(*d.shape[1:])
