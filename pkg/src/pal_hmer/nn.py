"""Parameter containers and the basic layers built on :mod:`pal_hmer.tensor`."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Attribute-scanning container in the usual style.

    Parameters, sub-modules and lists of sub-modules assigned as attributes
    are discovered in assignment order, so names are stable across runs.
    Running statistics live in ``self.buffers`` (a name -> ndarray dict).
    """

    def __init__(self):
        self.training = True
        self.buffers = {}

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, arr in self.buffers.items():
            yield prefix + name, arr
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, arr in self.named_buffers():
            state[name] = arr.copy()
        return state

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - set(own) - set(bufs)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, arr in bufs.items():
            arr[...] = state[name]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        super().__init__()
        self.weight = Parameter(he_normal(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        y = x @ self.weight
        return y if self.bias is None else y + self.bias


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, bias=False, channels_last=False):
        super().__init__()
        self.channels_last = channels_last
        self.weight = Parameter(he_normal(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        op = T.conv2d_nhwc if self.channels_last else T.conv2d
        return op(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    momentum = 0.9
    eps = 1e-5

    def __init__(self, channels, channels_last=False):
        super().__init__()
        self.channels_last = channels_last
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}
        self.update_stats = True

    def forward(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.buffers["running_mean"], self.buffers["running_var"],
                            training=self.training, momentum=self.momentum, eps=self.eps,
                            update_stats=self.update_stats, channels_last=self.channels_last)


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, num, d, rng):
        super().__init__()
        self.weight = Parameter(rng.normal(0.0, d ** -0.5, size=(num, d)))

    def forward(self, ids):
        return T.embedding(ids, self.weight)


def freeze_running_stats(module, frozen=True):
    """Stop (or resume) BatchNorm running-stat updates under ``module``."""
    for m in module.modules():
        if isinstance(m, BatchNorm2d):
            m.update_stats = not frozen
