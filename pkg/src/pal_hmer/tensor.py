"""Dense float64 tensors with a dynamic, single-use reverse-mode tape.

Every op returns a new :class:`Tensor`. When gradient recording is enabled
and any input requires a gradient, the result remembers its parents and a
closure mapping the output gradient to one gradient per parent. Calling
:meth:`Tensor.backward` on a scalar walks that graph once; afterwards the
graph is released and cannot be replayed.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, TapeStateError

DTYPE = np.float64

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "__weakref__")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # -- reverse pass -------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise TapeStateError("this tape was already consumed by an earlier backward()")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires a gradient")

        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            pgrads = node._backward(g)
            for parent, pg in zip(node._parents, pgrads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = None
            node._consumed = True

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        for p in parents:
            if p._consumed:
                raise TapeStateError("cannot extend a tape that was already consumed")
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ------------------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), back)


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    exponent = float(exponent)

    def back(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(a.data ** exponent, (a,), back)


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a):
    mask = a.data > 0
    # np.maximum keeps NaN, so a diverged input is not silently zeroed
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log_sigmoid(a):
    """log(sigmoid(a)) without overflow for large |a|."""
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _sigmoid(-x),))


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), back)


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), back)


# -- reductions and shape ---------------------------------------------------
def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, index):
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise DimensionError(f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), back)


# -- linear algebra --------------------------------------------------------
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back)


def conv2d(x, w, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` (N,C,H,W) with ``w`` (C',C,k,k), zero padded."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels but kernel {w.shape} expects {w.shape[1]}")
    out = conv2d_nhwc(transpose(x, (0, 2, 3, 1)), w, bias, stride, padding)
    return transpose(out, (0, 3, 1, 2))


def conv2d_nhwc(x, w, bias=None, stride=1, padding=0):
    """Channels-last variant of :func:`conv2d`: ``x`` is (N,H,W,C), the kernel stays (C',C,k,k)."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, h, wd, c = x.shape
    co, ci, kh, kw = w.shape
    if c != ci:
        raise DimensionError(f"conv2d: input has {c} channels but kernel {w.shape} expects {ci}")
    s, p = int(stride), int(padding)
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {xp.shape[1:3]}")
    if s == 1 and (kh > 1 or kw > 1):
        return _conv2d_shift(x, w, bias, xp, p, ho, wo)
    if kh == 1 and kw == 1:
        src = xp[:, ::s, ::s][:, :ho, :wo] if s > 1 else xp
        cols = src.reshape(-1, c)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s][:, :ho, :wo]
        # (N, Ho, Wo, C, kh, kw) -> rows ordered (kh, kw, C)
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(co, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, co)
    parents = (x, w) if bias is None else (x, w, bias)

    def back(g):
        g2 = g.reshape(-1, co)
        gw = None
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(co, kh, kw, c).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            gcols = g2 @ wmat
            if kh == 1 and kw == 1 and s == 1:
                gx = gcols.reshape(n, h, wd, c)
            else:
                gxp = np.zeros_like(xp)
                gcols = gcols.reshape(n, ho, wo, kh, kw, c)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += gcols[:, :, :, i, j, :]
                gx = gxp[:, p : p + h, p : p + wd, :] if p else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, back)


def _conv2d_shift(x, w, bias, xp, p, ho, wo):
    """Stride-1 convolution as one matmul against every kernel tap, then shifted sums.

    Cheaper than im2col when C_out is small next to C_in, which is the
    dense-block case (growth-rate outputs over a wide concatenation).
    """
    n, h, wd, c = x.shape
    co, _, kh, kw = w.shape
    hp, wp = xp.shape[1:3]
    # (C, kh*kw*C') with tap-major columns
    wall = w.data.transpose(1, 2, 3, 0).reshape(c, kh * kw * co)
    y = (xp.reshape(-1, c) @ wall).reshape(n, hp, wp, kh * kw, co)
    out = np.zeros((n, ho, wo, co))
    for i in range(kh):
        for j in range(kw):
            out += y[:, i : i + ho, j : j + wo, i * kw + j]
    if bias is not None:
        out += bias.data
    parents = (x, w) if bias is None else (x, w, bias)

    def back(g):
        gy = np.zeros((n, hp, wp, kh * kw, co))
        for i in range(kh):
            for j in range(kw):
                gy[:, i : i + ho, j : j + wo, i * kw + j] = g
        gy = gy.reshape(-1, kh * kw * co)
        gw = None
        if w.requires_grad:
            gw = (xp.reshape(-1, c).T @ gy).reshape(c, kh, kw, co).transpose(3, 0, 1, 2)
        gx = None
        if x.requires_grad:
            gxp = (gy @ wall.T).reshape(n, hp, wp, c)
            gx = gxp[:, p : p + h, p : p + wd, :] if p else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, co).sum(axis=0)

    return _make(out, parents, back)


def avg_pool2d(x, size=2, channels_last=False):
    """Non-overlapping ``size`` x ``size`` mean pooling; trailing rows/columns that do not fill a window are dropped."""
    if channels_last:
        n, h, w, c = x.shape
    else:
        n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise DimensionError(f"avg_pool2d: input {x.shape} smaller than window {size}")
    if channels_last:
        view = x.data[:, : ho * size, : wo * size].reshape(n, ho, size, wo, size, c)
        axes = (2, 4)
    else:
        view = x.data[:, :, : ho * size, : wo * size].reshape(n, c, ho, size, wo, size)
        axes = (3, 5)
    out = view.mean(axis=axes)

    def back(g):
        gx = np.zeros_like(x.data)
        spread = np.broadcast_to(np.expand_dims(g, axes), view.shape) / (size * size)
        if channels_last:
            gx[:, : ho * size, : wo * size] = spread.reshape(n, ho * size, wo * size, c)
        else:
            gx[:, :, : ho * size, : wo * size] = spread.reshape(n, c, ho * size, wo * size)
        return (gx,)

    return _make(out, (x,), back)


# -- normalization ----------------------------------------------------------
def batch_norm(x, gamma, beta, running_mean=None, running_var=None, training=True,
               momentum=0.9, eps=1e-5, update_stats=True, channels_last=False):
    """Per-channel normalization over every axis except the channel axis (1, or -1 if ``channels_last``).

    In training mode the batch statistics are used and, when
    ``update_stats`` is true, folded into the running buffers in place
    (``running = momentum * running + (1 - momentum) * batch``).
    """
    cax = x.ndim - 1 if channels_last else 1
    c = x.shape[cax]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    axes = tuple(i for i in range(x.ndim) if i != cax)
    bshape = tuple(c if i == cax else 1 for i in range(x.ndim))
    if training:
        m = x.data.size // c
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_stats and running_mean is not None:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
            running_var *= momentum
            running_var += (1.0 - momentum) * var * (m / max(m - 1, 1))
    else:
        m = None
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (inv.reshape(bshape) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, gg, gb

    return _make(out, (x, gamma, beta), back)


def layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        red = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        gxhat = g * gamma.data
        gx = (inv / d) * (d * gxhat - gxhat.sum(axis=-1, keepdims=True)
                          - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, gg, gb

    return _make(out, (x, gamma, beta), back)


# -- misc ----------------------------------------------------------------------
def embedding(ids, weight):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding: id out of range [0, {weight.shape[0]})")
    out = weight.data[ids]

    def back(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _make(out, (weight,), back)


def dropout(x, p, rng, training=True):
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy(logits, targets, weights=None):
    """Weighted mean over rows of -log_softmax(logits)[row, target].

    ``logits`` is (L, V). With ``weights`` omitted every row counts 1/L;
    otherwise the loss is ``sum(weights * nll)`` and the caller owns the
    normalization (rows with zero weight drop out entirely).
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (L, V) logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, v = logits.shape
    if targets.shape[0] != n:
        raise ContractError(f"cross_entropy: {n} rows of logits but {targets.shape[0]} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        bad = targets[(targets < 0) | (targets >= v)][0]
        raise IndexError(f"cross_entropy: target id {bad} outside vocabulary of size {v}")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=DTYPE).reshape(-1)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    loss = -(w * logp[rows, targets]).sum()

    def back(g):
        grad = np.exp(logp) * w[:, None]
        grad[rows, targets] -= w
        return (grad * g,)

    return _make(np.array(loss), (logits,), back)
