"""The recognizer (encoder + decoder + classifier head) and its checkpoint files.

A checkpoint is a PALX file of named parameters and BatchNorm buffers, plus a
``<ckpt>.json`` sidecar carrying the config and the vocabulary so a file can
be decoded without the training corpus at hand.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import from_dict
from .data.vocab import Vocabulary
from .decoder import Decoder
from .encoder import Encoder
from .errors import DataError
from .nn import Module


class Recognizer(Module):
    def __init__(self, cfg, vocab_size, seed=0):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, vocab_size, rng)

    def forward(self, images, ids):
        """Teacher-forced pass; returns ``(logits, d)`` for every step of ``ids``."""
        return self.decoder(self.encoder(images), ids)


def sidecar_path(path):
    return Path(str(path) + ".json")


def save_checkpoint(path, config, vocab, recognizer, discriminator=None):
    arrays = {f"R.{k}": v for k, v in recognizer.state_dict().items()}
    if discriminator is not None:
        arrays.update({f"D.{k}": v for k, v in discriminator.state_dict().items()})
    checkpoint.save(path, arrays)
    meta = {"config": config.to_dict(), "vocab": list(vocab.itos)}
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Return ``(config, vocab, recognizer, discriminator_state)``.

    The discriminator state is a plain dict (possibly empty); inference never needs it.
    """
    side = sidecar_path(path)
    if not side.exists():
        raise DataError(f"missing checkpoint sidecar {side}")
    try:
        meta = json.loads(side.read_text())
        config = from_dict(meta["config"])
        vocab = Vocabulary.from_itos(meta["vocab"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{side}: bad sidecar ({exc})") from None
    if not Path(path).exists():
        raise DataError(f"missing checkpoint {path}")
    arrays = checkpoint.load(path)
    recognizer = Recognizer(config.model, len(vocab))
    try:
        recognizer.load_state_dict({k[2:]: v for k, v in arrays.items() if k.startswith("R.")})
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: checkpoint does not match its config ({exc})") from None
    disc = {k[2:]: v for k, v in arrays.items() if k.startswith("D.")}
    return config, vocab, recognizer, disc
