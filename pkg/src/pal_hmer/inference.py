"""Greedy and beam-search decoding plus the expression-rate metric.

Decoders drive a *step model*: an object with

* ``start(image) -> state`` for a single image,
* ``step(state, tokens) -> log-probs`` taking one token per live row and
  returning a (rows, V) array of next-token log-probabilities,
* ``reorder(state, rows) -> state`` keeping / duplicating rows.

:class:`RecognizerStepper` adapts a trained :class:`~pal_hmer.model.Recognizer`;
tests plug in small table-driven models.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data.pairs import batch_arrays
from .data.vocab import BOS, EOS, PAD
from .errors import ContractError

DEFAULT_BEAM = 10
DEFAULT_MAX_LEN = 64


@dataclass
class Hypothesis:
    tokens: list  # BOS first; ends with EOS when finished
    score: float = 0.0
    finished: bool = False

    @property
    def truncated(self):
        return not self.finished

    @property
    def body(self):
        """Generated tokens without BOS and the closing EOS."""
        end = -1 if self.finished else len(self.tokens)
        return self.tokens[1:end]


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class RecognizerStepper:
    """Step-model view of a recognizer; PAD and BOS are never emitted."""

    def __init__(self, recognizer):
        self.recognizer = recognizer

    def start(self, image):
        self.recognizer.eval()
        with T.no_grad():
            grid = self.recognizer.encoder(np.asarray(image)[None])
        return self.recognizer.decoder.start(grid)

    def step(self, state, tokens):
        with T.no_grad():
            logits = self.recognizer.decoder.step(state, tokens)
        logits = logits.copy()
        logits[:, [PAD, BOS]] = -np.inf
        return _log_softmax(logits)

    def reorder(self, state, rows):
        return state.select(rows)


def _stepper(model):
    return model if hasattr(model, "step") and hasattr(model, "reorder") else RecognizerStepper(model)


def greedy_decode(model, image, max_len=DEFAULT_MAX_LEN):
    """Append the arg-max token (lowest id on ties) until EOS or ``max_len`` tokens."""
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    model = _stepper(model)
    state = model.start(image)
    hyp = Hypothesis([BOS])
    for _ in range(max_len):
        logp = model.step(state, np.array([hyp.tokens[-1]]))[0]
        tok = int(np.argmax(logp))
        hyp.tokens.append(tok)
        hyp.score += float(logp[tok])
        if tok == EOS:
            hyp.finished = True
            break
    return hyp


def beam_search(model, image, beam=DEFAULT_BEAM, max_len=DEFAULT_MAX_LEN):
    """Beam search ranked by raw summed log-probability (no length normalization).

    Every live hypothesis is expanded over the whole vocabulary and the best
    ``beam`` candidates are kept; those ending in EOS retire to the finished
    pool. Ties are broken by (parent rank, token id), so ``beam=1`` retraces
    greedy decoding exactly. The best finished hypothesis is returned, or
    the best live one if nothing finished within ``max_len`` tokens.
    """
    if beam < 1:
        raise ContractError("beam width must be >= 1")
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    model = _stepper(model)
    state = model.start(image)
    live = [Hypothesis([BOS])]
    scores = np.zeros(1)
    done = []
    for _ in range(max_len):
        logp = model.step(state, np.array([h.tokens[-1] for h in live]))
        cand = (scores[:, None] + logp).ravel()
        order = np.lexsort((np.arange(cand.size), -cand))[:beam]
        order = order[np.isfinite(cand[order])]
        v = logp.shape[1]
        keep_rows, new_live = [], []
        for flat in order:
            row, tok = divmod(int(flat), v)
            hyp = Hypothesis(live[row].tokens + [tok], float(cand[flat]), tok == EOS)
            if hyp.finished:
                done.append(hyp)
            else:
                keep_rows.append(row)
                new_live.append(hyp)
        if not new_live:
            live = []
            break
        state = model.reorder(state, np.array(keep_rows))
        live, scores = new_live, np.array([h.score for h in new_live])
        # scores never increase, so nothing live can overtake the best finished one
        if done and max(h.score for h in done) >= scores.max():
            break
    pool = done or live
    best = pool[0]
    for h in pool[1:]:
        if h.score > best.score:
            best = h
    return best


def decode(model, image, beam=1, max_len=DEFAULT_MAX_LEN):
    return greedy_decode(model, image, max_len) if beam == 1 else beam_search(model, image, beam, max_len)


def greedy_decode_batch(recognizer, images, max_len=DEFAULT_MAX_LEN):
    """Greedy decoding of many images at once; one :class:`Hypothesis` per image."""
    recognizer.eval()
    images = np.asarray(images)
    with T.no_grad():
        grid = recognizer.encoder(images)
        state = recognizer.decoder.start(grid)
    stepper = RecognizerStepper(recognizer)
    hyps = [Hypothesis([BOS]) for _ in range(len(images))]
    last = np.full(len(images), BOS)
    for _ in range(max_len):
        logp = stepper.step(state, last)
        toks = np.argmax(logp, axis=1)
        for i, h in enumerate(hyps):
            if not h.finished:
                h.tokens.append(int(toks[i]))
                h.score += float(logp[i, toks[i]])
                h.finished = toks[i] == EOS
        if all(h.finished for h in hyps):
            break
        last = toks
    return hyps


def _strip(seq):
    """Token sequence without BOS/PAD, cut at the first EOS; strings split on spaces."""
    if isinstance(seq, str):
        seq = seq.split()
    out = []
    for t in seq:
        if isinstance(t, (int, np.integer)):
            if t == EOS:
                break
            if t in (PAD, BOS):
                continue
        elif t in ("<eos>",):
            break
        elif t in ("<pad>", "<bos>"):
            continue
        out.append(t if isinstance(t, str) else int(t))
    return out


@dataclass
class EvalRecord:
    id: str
    prediction: str
    reference: str
    exact_match: bool


@dataclass
class EvalReport:
    exprate: float
    records: list = field(default_factory=list)

    @property
    def matches(self):
        return sum(r.exact_match for r in self.records)

    def __str__(self):
        return f"exprate {self.exprate:.4f} ({self.matches}/{len(self.records)})"


def exprate(predictions, references, ids=None):
    """Whole-expression exact match rate over token sequences (ids or strings)."""
    if len(predictions) != len(references):
        raise ContractError(f"{len(predictions)} predictions for {len(references)} references")
    if not predictions:
        raise ContractError("exprate of an empty set is undefined")
    ids = ids or [str(i) for i in range(len(predictions))]
    records = []
    for i, p, r in zip(ids, predictions, references):
        ps, rs = _strip(p), _strip(r)
        records.append(EvalRecord(i, " ".join(map(str, ps)), " ".join(map(str, rs)), ps == rs))
    return EvalReport(sum(r.exact_match for r in records) / len(records), records)


def evaluate(recognizer, samples, beam=1, max_len=DEFAULT_MAX_LEN, vocab=None, batch_size=64):
    """Decode every sample's handwritten image and score against its label.

    With ``vocab`` the records carry LaTeX token strings, otherwise ids.
    """
    if not samples:
        raise ContractError("nothing to evaluate")
    preds = []
    if beam == 1:
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            a_h, _, _, _ = batch_arrays(chunk)
            preds += [h.tokens for h in greedy_decode_batch(recognizer, a_h, max_len)]
    else:
        preds = [beam_search(recognizer, s.a_h, beam, max_len).tokens for s in samples]
    refs = [s.b for s in samples]
    if vocab is not None:
        preds = [vocab.decode(p) for p in preds]
        refs = [vocab.decode(r) for r in refs]
    return exprate(preds, refs, [s.id for s in samples])
