"""Discriminator, the recognition / adversarial losses, and the alternating trainer.

Convention: the discriminator outputs the probability that a per-step
feature vector came from the printed template. Losses work on its logits
through ``log_sigmoid`` so saturated discriminators stay finite.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data.pairs import batch_arrays
from .data.vocab import PAD
from .decoder import ClassifierHead
from .errors import ConfigError, ContractError, DimensionError, NumericalError
from .model import Recognizer
from .nn import Module, freeze_running_stats
from .optim import Adam
from .tensor import Tensor

METRIC_COLUMNS = ("iter", "epoch", "P_Ch", "P_Cp", "P_D", "P_Dadv", "P_R", "disc_acc", "val_exprate")


class Discriminator(Module):
    """MLP over single decoder-step features; ``forward`` returns logits."""

    def __init__(self, d_in, width, layers, rng):
        super().__init__()
        self.d_in = d_in
        self.mlp = ClassifierHead(d_in, width, 1, layers, rng)

    @property
    def num_layers(self):
        return len(self.mlp.layers)

    def forward(self, d):
        if d.shape[-1] != self.d_in:
            raise DimensionError(f"discriminator expects width {self.d_in}, got {d.shape[-1]}")
        z = self.mlp(d)
        return z.reshape(*z.shape[:-1])


def build_discriminator(cfg, rng):
    return Discriminator(cfg.d_model, cfg.disc_width, cfg.discriminator_layers, rng)


def discriminate(disc, d_l):
    """Probability (in (0, 1)) that the feature vector(s) ``d_l`` came from a printed image."""
    x = d_l if isinstance(d_l, Tensor) else Tensor(np.asarray(d_l, dtype=np.float64))
    return T.sigmoid(disc(x))


def _step_weights(mask, shape):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise DimensionError(f"step mask shape {mask.shape} != feature shape {shape}")
    if not mask.any():
        raise ContractError("step mask selects no steps")
    return mask


def _masked_mean(x, mask):
    if mask is None:
        return T.mean(x)
    return T.tsum(x * (mask / mask.sum()))


def loss_discriminator(disc, d_printed, d_hand, mask=None):
    """P_D: mean over valid (sample, step) of log D(d_p) + log(1 - D(d_h)).

    ``d_printed`` and ``d_hand`` are (B, L, C) and aligned by step; ``mask``
    (B, L) marks valid steps. The result is <= 0 and is maximized by the
    discriminator.
    """
    if d_printed.shape != d_hand.shape:
        raise DimensionError(f"paired features differ in shape: {d_printed.shape} vs {d_hand.shape}")
    z_p, z_h = disc(d_printed), disc(d_hand)
    mask = _step_weights(mask, z_p.shape)
    return _masked_mean(T.log_sigmoid(z_p) + T.log_sigmoid(-z_h), mask)


def loss_adversarial(disc, d_hand, mask=None):
    """P_Dadv: -mean log D(d_h); small when handwritten features pass for printed ones."""
    z_h = disc(d_hand)
    mask = _step_weights(mask, z_h.shape)
    return -_masked_mean(T.log_sigmoid(z_h), mask)


def loss_recognition(logits, targets):
    """Teacher-forced cross-entropy, per-sequence mean over non-PAD steps, then batch mean.

    ``logits`` is (B, L, V) or (L, V); ``targets`` the matching ids (the
    ground truth shifted one step left of the decoder input).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim == 2:
        logits = logits.reshape(1, *logits.shape)
        targets = targets.reshape(1, -1)
    b, l, v = logits.shape
    if targets.shape != (b, l):
        raise ContractError(f"{b}x{l} logit steps but targets of shape {targets.shape}")
    valid = targets != PAD
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise ContractError("a target sequence has no non-PAD steps")
    weights = valid / (counts[:, None] * b)
    return T.cross_entropy(logits.reshape(b * l, v), targets.reshape(-1), weights.reshape(-1))


def loss_total(p_ch, p_cp, p_dadv, delta):
    """P_R = P_Ch + P_Cp + delta * P_Dadv."""
    if delta < 0:
        raise ConfigError(f"delta must be >= 0, got {delta}")
    return p_ch + p_cp + p_dadv * delta


def teacher_forcing(ids):
    """Split padded BOS..EOS rows into decoder inputs, targets and the valid-step mask."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape[1] < 2:
        raise ContractError("sequences need at least BOS and EOS")
    inputs, targets = ids[:, :-1], ids[:, 1:]
    return inputs, targets, targets != PAD


def disc_accuracy(z_printed, z_hand, mask):
    """Fraction of valid steps the discriminator labels correctly, both branches pooled."""
    m = np.asarray(mask, dtype=bool)
    correct = (z_printed[m] > 0).sum() + (z_hand[m] < 0).sum()
    return correct / (2 * m.sum())


def _check(term, value, it):
    if not math.isfinite(value):
        raise NumericalError(term, it)


def recognizer_losses(recognizer, disc, a_h, a_p, ids, delta):
    """Forward both branches through the shared recognizer and build every loss term.

    Returns a dict with Tensors P_Ch, P_Cp, P_Dadv, P_R, the handwritten and
    printed step features, discriminator logits and the step mask.
    """
    n = len(a_h)
    inputs, targets, mask = teacher_forcing(ids)
    images = np.concatenate([np.asarray(a_h), np.asarray(a_p)])
    logits, d = recognizer(images, np.concatenate([inputs, inputs]))
    d_h, d_p = d[:n], d[n:]
    p_ch = loss_recognition(logits[:n], targets)
    p_cp = loss_recognition(logits[n:], targets)
    p_dadv = loss_adversarial(disc, d_h, mask)
    return {
        "P_Ch": p_ch,
        "P_Cp": p_cp,
        "P_Dadv": p_dadv,
        "P_R": loss_total(p_ch, p_cp, p_dadv, delta),
        "d_h": d_h,
        "d_p": d_p,
        "mask": mask,
    }


@dataclass
class TrainResult:
    recognizer: Recognizer
    discriminator: Discriminator
    history: list = field(default_factory=list)
    epochs: int = 0  # completed epochs
    stop_reason: str = ""


class _EpochSampler:
    """Minibatches drawn without replacement from a fresh permutation each epoch."""

    def __init__(self, size, batch, rng):
        self.size, self.batch, self.rng = size, min(batch, size), rng
        self.epoch, self._order, self._pos = 0, None, size

    def next(self):
        if self._pos + self.batch > self.size:
            if self._order is not None:
                self.epoch += 1
            self._order, self._pos = self.rng.permutation(self.size), 0
        idx = self._order[self._pos : self._pos + self.batch]
        self._pos += self.batch
        return idx, self._pos + self.batch > self.size


def train(dataset, config, vocab_size, val_set=None, metrics_path=None, on_epoch=None):
    """Alternating recognizer / discriminator training over paired samples.

    Each iteration samples ``n`` pairs, takes one Adam step on the recognizer
    for P_R, then ``disc_steps`` Adam steps on the discriminator ascending
    P_D over features recomputed for the same pairs with the recognizer
    frozen (BatchNorm running statistics included). Stops after ``max_iters``
    iterations, ``epochs`` epochs, when validation exprate has not improved
    for ``patience`` epochs, or once the training exprate reaches
    ``target_train_exprate``.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    tc, mc = config.train, config.model
    rng = np.random.default_rng(tc.seed)
    recognizer = Recognizer(mc, vocab_size, seed=int(rng.integers(2 ** 31)))
    disc = build_discriminator(mc, np.random.default_rng(int(rng.integers(2 ** 31))))
    opt_r = Adam(recognizer.parameters(), lr=tc.lr_r)
    opt_d = Adam(disc.parameters(), lr=tc.lr_d)
    sampler = _EpochSampler(len(dataset), tc.batch_size, np.random.default_rng(int(rng.integers(2 ** 31))))
    result = TrainResult(recognizer, disc)
    writer = None
    fh = open(metrics_path, "w", newline="") if metrics_path else None
    if fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
    best_val, stale = -1.0, 0
    try:
        for it in range(1, tc.max_iters + 1):
            idx, epoch_end = sampler.next()
            a_h, a_p, ids, _ = batch_arrays([dataset[i] for i in idx])
            row = _train_step(recognizer, disc, opt_r, opt_d, a_h, a_p, ids, tc, it)
            row["epoch"] = sampler.epoch
            row["val_exprate"] = float("nan")
            stop = ""
            if epoch_end:
                result.epochs = sampler.epoch + 1
                stop, best_val, stale = _end_of_epoch(recognizer, dataset, val_set, tc, row, best_val, stale)
                if on_epoch is not None:
                    on_epoch(result.epochs, row)
                if result.epochs >= tc.epochs and not stop:
                    stop = "epoch budget"
            result.history.append(row)
            if writer and (it % tc.log_every == 0 or it == 1 or stop or it == tc.max_iters):
                writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
                fh.flush()
            if stop:
                result.stop_reason = stop
                break
        else:
            result.stop_reason = "iteration budget"
    finally:
        if fh:
            fh.close()
    recognizer.eval()
    return result


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def _train_step(recognizer, disc, opt_r, opt_d, a_h, a_p, ids, tc, it):
    recognizer.train()
    terms = recognizer_losses(recognizer, disc, a_h, a_p, ids, tc.delta)
    for name in ("P_Ch", "P_Cp", "P_Dadv", "P_R"):
        _check(name, terms[name].item(), it)
    mask = terms["mask"]
    with T.no_grad():
        d_p, d_h = Tensor(terms["d_p"].data), Tensor(terms["d_h"].data)
        z_p, z_h = disc(d_p).data, disc(d_h).data
        p_d = loss_discriminator(disc, d_p, d_h, mask).item()
    _check("P_D", p_d, it)
    row = {"iter": it, **{k: terms[k].item() for k in ("P_Ch", "P_Cp", "P_Dadv", "P_R")},
           "P_D": p_d, "disc_acc": float(disc_accuracy(z_p, z_h, mask))}

    recognizer.zero_grad()
    disc.zero_grad()
    terms["P_R"].backward()
    opt_r.step()
    # P_Dadv also reached the discriminator's parameters; that gradient is not used
    disc.zero_grad()

    inputs = np.concatenate([ids[:, :-1], ids[:, :-1]])
    images = np.concatenate([a_h, a_p])
    n = len(a_h)
    freeze_running_stats(recognizer, True)
    try:
        for _ in range(tc.disc_steps):
            with T.no_grad():
                _, d = recognizer(images, inputs)
            loss = -loss_discriminator(disc, Tensor(d.data[n:]), Tensor(d.data[:n]), mask)
            _check("P_D", -loss.item(), it)
            loss.backward()
            opt_d.step()
            disc.zero_grad()
    finally:
        freeze_running_stats(recognizer, False)
    return row


def _end_of_epoch(recognizer, dataset, val_set, tc, row, best_val, stale):
    # imported here: inference depends on the model, not on training
    from .inference import evaluate

    stop = ""
    if val_set:
        val = evaluate(recognizer, val_set, beam=1).exprate
        row["val_exprate"] = val
        if val > best_val:
            best_val, stale = val, 0
        else:
            stale += 1
            if stale >= tc.patience:
                stop = "validation plateau"
    if tc.target_train_exprate <= 1.0 and not stop:
        if evaluate(recognizer, dataset, beam=1).exprate >= tc.target_train_exprate:
            stop = "training exprate target"
    return stop, best_val, stale
