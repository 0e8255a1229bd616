"""Model and training configuration, plus the flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class ModelConfig:
    image_height: int = 64
    image_width: int = 256
    stem_channels: int = 16
    num_blocks: int = 3
    block_layers: int = 4
    growth: int = 12
    d_model: int = 64
    heads: int = 4
    decoder_layers: int = 2
    d_ff: int = 256
    dropout: float = 0.1
    head_layers: int = 2
    head_width: int = 64
    # None means "same depth as the classifier head"
    disc_layers: int | None = None
    disc_width: int = 64
    pe_base: float = 10000.0
    # base n of the image encoding; coordinates are normalized to [0, 1), so a
    # base far below 1 is what spreads its frequencies over the grid
    image_pe_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % 4:
            raise ConfigError(f"d_model must be divisible by 4, got {self.d_model}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.num_blocks < 1 or self.block_layers < 1:
            raise ConfigError("need at least one dense block with at least one layer")
        if self.head_layers < 1:
            raise ConfigError("classifier head needs at least one layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        down = 2 ** self.num_blocks
        if self.image_height % down or self.image_width % down:
            raise ConfigError(f"image size {self.image_height}x{self.image_width} must be divisible by {down}")

    @property
    def discriminator_layers(self):
        return self.head_layers if self.disc_layers is None else self.disc_layers

    @property
    def grid_shape(self):
        down = 2 ** self.num_blocks
        return self.image_height // down, self.image_width // down


@dataclass
class TrainConfig:
    delta: float = 0.1
    batch_size: int = 16
    disc_steps: int = 1
    epochs: int = 200
    max_iters: int = 3000
    lr_r: float = 1e-3
    lr_d: float = 1e-3
    seed: int = 0
    patience: int = 10
    log_every: int = 10
    # training-set exprate at which to stop early; > 1 disables
    target_train_exprate: float = 2.0
    pen_width: int = 2

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        if self.batch_size < 1 or self.disc_steps < 1:
            raise ConfigError("batch_size and disc_steps must be >= 1")
        if self.lr_r <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be positive")


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        return {**dataclasses.asdict(self.model), **dataclasses.asdict(self.train)}


def _coerce(raw, typ, key):
    typ = str(typ)
    try:
        if "None" in typ and raw.lower() in ("none", ""):
            return None
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None
    return raw


def from_dict(values):
    model_keys = {f.name: f for f in fields(ModelConfig)}
    train_keys = {f.name: f for f in fields(TrainConfig)}
    m, t = {}, {}
    for key, value in values.items():
        if key in model_keys:
            target, spec = m, model_keys[key]
        elif key in train_keys:
            target, spec = t, train_keys[key]
        else:
            raise ConfigError(f"unknown config key {key!r}")
        target[key] = _coerce(value, spec.type, key) if isinstance(value, str) else value
    return Config(ModelConfig(**m), TrainConfig(**t))


def parse_config(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return from_dict(values)


def load_config(path):
    return parse_config(Path(path).read_text())


def dump_config(cfg):
    return "".join(f"{k} = {'none' if v is None else v}\n" for k, v in cfg.to_dict().items())
