"""DenseNet feature extractor producing a flattened feature grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import BatchNorm2d, Conv2d, Module
from .positional import image_positional_encoding
from .tensor import Tensor


@dataclass
class FeatureGrid:
    """Encoder output for a batch of images.

    ``features`` is (N, H'*W', d_model), flattened row-major from the
    spatial grid. ``pos`` is the (H', W', d_model) image encoding; it
    depends only on the grid shape and is added by the decoder.
    """

    features: Tensor
    pos: np.ndarray
    height: int
    width: int

    @property
    def flat_pos(self):
        return self.pos.reshape(self.height * self.width, -1)

    def memory(self):
        return self.features + self.flat_pos


class DenseLayer(Module):
    """BN -> ReLU -> 3x3 conv over the channel-concatenation of all inputs.

    Inputs are channels-last (N, H, W, C_i); the output has ``growth`` channels.
    """

    def __init__(self, c_in, growth, rng):
        super().__init__()
        self.norm = BatchNorm2d(c_in, channels_last=True)
        self.conv = Conv2d(c_in, growth, 3, rng, padding=1, channels_last=True)

    def forward(self, inputs):
        ref = inputs[0].shape
        for x in inputs[1:]:
            if x.shape[:3] != ref[:3]:
                raise DimensionError(f"dense layer inputs disagree: {ref} vs {x.shape}")
        x = inputs[0] if len(inputs) == 1 else T.concat(inputs, axis=3)
        return self.conv(T.relu(self.norm(x)))


class DenseBlock(Module):
    def __init__(self, c_in, layers, growth, rng):
        super().__init__()
        self.layers = [DenseLayer(c_in + i * growth, growth, rng) for i in range(layers)]
        self.out_channels = c_in + layers * growth

    def forward(self, x):
        feats = [x]
        for layer in self.layers:
            feats.append(layer(feats))
        return T.concat(feats, axis=3)


class Transition(Module):
    def __init__(self, channels, rng):
        super().__init__()
        self.norm = BatchNorm2d(channels, channels_last=True)
        self.conv = Conv2d(channels, channels, 1, rng, channels_last=True)

    def forward(self, x):
        return T.avg_pool2d(self.conv(T.relu(self.norm(x))), 2, channels_last=True)


class Encoder(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.stem = Conv2d(1, cfg.stem_channels, 3, rng, stride=2, padding=1, channels_last=True)
        self.blocks = []
        self.transitions = []
        c = cfg.stem_channels
        for b in range(cfg.num_blocks):
            block = DenseBlock(c, cfg.block_layers, cfg.growth, rng)
            self.blocks.append(block)
            c = block.out_channels
            if b < cfg.num_blocks - 1:
                self.transitions.append(Transition(c, rng))
        self.out_norm = BatchNorm2d(c, channels_last=True)
        self.proj = Conv2d(c, cfg.d_model, 1, rng, bias=True, channels_last=True)
        self.out_channels = c
        self._pos_cache = {}

    def positional(self, h, w):
        key = (h, w)
        if key not in self._pos_cache:
            self._pos_cache[key] = image_positional_encoding(h, w, self.cfg.d_model, self.cfg.image_pe_base)
        return self._pos_cache[key]

    def forward(self, images):
        """``images``: array or Tensor of shape (N, H, W) or (N, 1, H, W)."""
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
        if x.ndim == 3:
            x = x.reshape(x.shape[0], 1, x.shape[1], x.shape[2])
        want = (self.cfg.image_height, self.cfg.image_width)
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != want:
            raise DimensionError(f"encoder expects single-channel {want[0]}x{want[1]} images, got {x.shape}")
        # channels-last from here on; a single input channel makes this a reshape
        x = self.stem(x.reshape(x.shape[0], want[0], want[1], 1))
        for b, block in enumerate(self.blocks):
            x = block(x)
            if b < len(self.transitions):
                x = self.transitions[b](x)
        x = self.proj(T.relu(self.out_norm(x)))
        n, h, w, d = x.shape
        flat = x.reshape(n, h * w, d)
        return FeatureGrid(flat, self.positional(h, w), h, w)


def encode(encoder, image):
    """Encode a single (H, W) image."""
    return encoder(np.asarray(image)[None])
