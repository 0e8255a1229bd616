"""Acceptance suite: one printed PASS/FAIL line per criterion, at the stated tolerances.

Criteria 6 and 7 train the desk configuration in ``configs/desk.cfg`` twice
(delta = 0.1 and delta = 0); the two runs are shared through a session fixture.
"""
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from pal_hmer import tensor as T
from pal_hmer.adversarial import (Discriminator, build_discriminator, disc_accuracy, discriminate, loss_adversarial,
                                  loss_discriminator, loss_recognition, teacher_forcing, train)
from pal_hmer.config import Config, ModelConfig, TrainConfig, load_config
from pal_hmer.data import batch_arrays, parse_inkml, rasterize, synth_generate, synth_vocabulary, tokenize
from pal_hmer.data.synth import sample_expression
from pal_hmer.decoder import Decoder, causal_mask, decoder_forward, multi_head_attention, scaled_dot_attention
from pal_hmer.encoder import Encoder, FeatureGrid
from pal_hmer.inference import beam_search, evaluate, greedy_decode
from pal_hmer.model import Recognizer, load_checkpoint, save_checkpoint
from pal_hmer.optim import Adam
from pal_hmer.positional import image_positional_encoding, word_positional_encoding
from pal_hmer.tensor import Tensor

from gradcheck import TOL, check_module, check_op
from test_data import FIXTURES, GOLDEN_SHA256
from test_decoder import per_head_reference
from test_inference import exhaustive_best, toy
from test_tensor import OP_NAMES, _ops

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.cfg"
V = len(synth_vocabulary())


@pytest.fixture
def say(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {title}: {detail}")
        return ok
    return emit


# -- 1 ------------------------------------------------------------------------------------
def test_criterion_1_gradient_correctness(say):
    start = time.perf_counter()
    worst = {}

    def record(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    enc_cfg = ModelConfig(image_height=16, image_width=32, stem_channels=4, num_blocks=3, block_layers=2,
                          growth=3, d_model=8, heads=2, d_ff=16, head_width=8, dropout=0.0)
    dec_cfg = ModelConfig(image_height=16, image_width=32, d_model=16, heads=4, decoder_layers=2, d_ff=32,
                          head_width=16, dropout=0.0)
    for seed in range(10):
        for name in OP_NAMES:
            f, args = _ops(np.random.default_rng(seed))[name]
            record(name, check_op(f, *args))
        rng = np.random.default_rng(seed)
        enc = Encoder(enc_cfg, rng)
        img = rng.random((2, 16, 32))
        probe = rng.normal(size=(2, 8, 8))
        record("encoder 16x32", check_module(lambda: T.tsum(enc(img).features * probe),
                                             dict(enc.named_parameters()), rng, per_param=3))
        dec = Decoder(dec_cfg, 11, rng).train()
        grid = FeatureGrid(Tensor(rng.normal(size=(1, 6, 16))), image_positional_encoding(2, 3, 16), 2, 3)
        ids = rng.integers(0, 11, 3)
        record("decoder d16 L3", check_module(lambda: T.tsum(decoder_forward(dec, grid, ids)[0]),
                                              dict(dec.named_parameters()), rng))
        disc = Discriminator(6, 5, 2, rng)
        x = Tensor(rng.normal(size=(3, 4, 6)))
        w = rng.normal(size=(3, 4))
        record("discriminator", check_module(lambda: T.tsum(discriminate(disc, x) * w),
                                             dict(disc.named_parameters()), rng))
        mask = rng.random((3, 4)) < 0.7
        mask[0, 0] = True
        record("P_D", check_op(lambda p, h: loss_discriminator(disc, p, h, mask), rng.normal(size=(3, 4, 6)),
                               rng.normal(size=(3, 4, 6))))
        record("P_Dadv", check_op(lambda h: loss_adversarial(disc, h, mask), rng.normal(size=(3, 4, 6))))
        targets = rng.integers(1, 7, (2, 4))
        targets[1, 2:] = 0
        record("P_Ch/P_Cp", check_op(lambda z: loss_recognition(z, targets), rng.normal(size=(2, 4, 7))))
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if not v < TOL}
    ok = not bad and elapsed < 120
    say(1, "finite differences over 10 seeds", ok,
        f"{len(worst)} checks, worst rel. error {max(worst.values()):.2e} (< {TOL:g}), {elapsed:.0f}s (< 120s)"
        + (f", failing {sorted(bad)}" if bad else ""))
    assert ok


# -- 2 ------------------------------------------------------------------------------------
def test_criterion_2_attention_invariants(say):
    rng = np.random.default_rng(0)
    worst_row = 0.0
    for _ in range(50):
        lq, lk = rng.integers(1, 9, 2)
        mask = rng.random((lq, lk)) < 0.5
        mask[np.arange(lq), rng.integers(0, lk, lq)] = True
        sink = []
        scaled_dot_attention(Tensor(rng.normal(size=(lq, 4)) * 4), Tensor(rng.normal(size=(lk, 4)) * 4),
                             Tensor(rng.normal(size=(lk, 3))), mask, weights_out=sink)
        worst_row = max(worst_row, np.abs(sink[0].sum(axis=-1) - 1).max())
    cfg = ModelConfig(image_height=16, image_width=32, d_model=16, heads=4, decoder_layers=2, d_ff=32,
                      head_width=16, dropout=0.0)
    causal_ok = True
    for length in range(2, 9):
        dec = Decoder(cfg, 11, np.random.default_rng(length)).eval()
        grid = FeatureGrid(Tensor(rng.normal(size=(1, 6, 16))), image_positional_encoding(2, 3, 16), 2, 3)
        ids = rng.integers(0, 11, length)
        base, _ = decoder_forward(dec, grid, ids)
        for t in range(length - 1):
            mutated = ids.copy()
            mutated[t + 1:] = (mutated[t + 1:] + rng.integers(1, 11, length - t - 1)) % 11
            out, _ = decoder_forward(dec, grid, mutated)
            causal_ok &= out.data[: t + 1].tobytes() == base.data[: t + 1].tobytes()
    ok = worst_row <= 1e-9 and causal_ok
    say(2, "softmax rows and causal mutation", ok,
        f"max |row sum - 1| = {worst_row:.1e} (<= 1e-9); logits[<=t] bit-identical for L=2..8: {causal_ok}")
    assert ok


# -- 3 ------------------------------------------------------------------------------------
def test_criterion_3_positional_encodings(say):
    d = 16
    zero_ok = np.array_equal(word_positional_encoding(0, d), np.tile([0.0, 1.0], d // 2))
    separable, worst = True, 0.0
    for h, w in [(2, 8), (4, 16), (8, 32), (3, 5)]:
        pe = image_positional_encoding(h, w, d)
        separable &= bool(np.all(pe[:, :, : d // 2] == pe[:, :1, : d // 2]))
        separable &= bool(np.all(pe[:, :, d // 2:] == pe[:1, :, d // 2:]))
        for x, y, i in itertools.product(range(h), range(w), range(d // 4)):
            half = d // 2
            for off, val in ((0, x / h), (half, y / w)):
                ang = val / 10000 ** (2 * i / half)
                worst = max(worst, abs(pe[x, y, off + 2 * i] - math.sin(ang)), abs(pe[x, y, off + 2 * i + 1] - math.cos(ang)))
    ok = zero_ok and separable and worst <= 1e-12
    say(3, "word/image positional encodings", ok,
        f"x=0 alternating: {zero_ok}; halves separable: {separable}; max |grid - formula| = {worst:.1e} (<= 1e-12)")
    assert ok


# -- 4 ------------------------------------------------------------------------------------
def test_criterion_4_multi_head_equivalence(say):
    worst = 0.0
    for heads in (2, 4):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            q, k, v = rng.normal(size=(4, 8)), rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
            ws = [rng.normal(size=(8, 8)) / math.sqrt(8) for _ in range(4)]
            got = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), heads, *map(Tensor, ws)).data
            worst = max(worst, np.abs(got - per_head_reference(q, k, v, heads, *ws)).max())
    ok = worst <= 1e-10
    say(4, "fused vs per-head attention, h=2,4, 20 inputs", ok, f"max deviation {worst:.1e} (<= 1e-10)")
    assert ok


# -- 5 ------------------------------------------------------------------------------------
def test_criterion_5_beam_oracle(say):
    oracle_hits, greedy_hits = 0, 0
    for seed in range(50):
        want, _ = exhaustive_best(toy(seed), 3)
        oracle_hits += beam_search(toy(seed), None, 64, 3).tokens == want
        same = True
        for max_len in (1, 2, 3):
            g, b = greedy_decode(toy(seed), None, max_len), beam_search(toy(seed), None, 1, max_len)
            same &= (g.tokens, g.score) == (b.tokens, b.score)
        greedy_hits += same
    ok = oracle_hits == 50 and greedy_hits == 50
    say(5, "beam B=64 vs exhaustive (V=4, max_len=3); B=1 vs greedy", ok,
        f"oracle agreement {oracle_hits}/50, greedy agreement {greedy_hits}/50")
    assert ok


# -- 6 and 7 ------------------------------------------------------------------------------
def desk_config(delta):
    cfg = load_config(DESK)
    return Config(cfg.model, TrainConfig(**{**cfg.train.__dict__, "delta": delta}))


@pytest.fixture(scope="session")
def desk_corpus():
    mc = load_config(DESK).model
    data = synth_generate(2, 360, 7, height=mc.image_height, width=mc.image_width)
    return data[:300], data[300:]


@pytest.fixture(scope="session")
def desk_runs(desk_corpus):
    train_set, _ = desk_corpus
    runs = {}
    for delta in (0.1, 0.0):
        start = time.perf_counter()
        res = train(train_set, desk_config(delta), V)
        runs[delta] = (res, time.perf_counter() - start)
    return runs


def ema(values, beta=0.98):
    out, acc = [], values[0]
    for v in values:
        acc = beta * acc + (1 - beta) * v
        out.append(acc)
    return np.array(out)


def test_criterion_6_desk_training(say, desk_runs, desk_corpus):
    train_set, held_out = desk_corpus
    res, seconds = desk_runs[0.1]
    p_r = np.array([r["P_R"] for r in res.history])
    drop = 1 - ema(p_r)[-1] / p_r[0]
    train_rate = evaluate(res.recognizer, train_set).exprate
    held_rate = evaluate(res.recognizer, held_out).exprate
    checks = {"a": drop >= 0.80, "b": train_rate >= 0.90, "c": held_rate >= 0.50}
    ok = all(checks.values())
    say(6, "desk-scale training, delta=0.1, m=1, n=16", ok,
        f"(a) smoothed P_R drop {drop:.1%} (>= 80%) {'ok' if checks['a'] else 'MISS'}; "
        f"(b) train exprate {train_rate:.3f} (>= 0.90) {'ok' if checks['b'] else 'MISS'}; "
        f"(c) held-out exprate {held_rate:.3f} (>= 0.50) {'ok' if checks['c'] else 'MISS'}; "
        f"{len(res.history)} iterations in {seconds / 60:.1f} min (target < 30)")
    assert ok


def step_features(recognizer, samples):
    """Frozen per-step features of both branches plus the valid-step mask."""
    a_h, a_p, ids, _ = batch_arrays(samples)
    inputs, _, mask = teacher_forcing(ids)
    recognizer.eval()
    with T.no_grad():
        _, d_h = recognizer(a_h, inputs)
        _, d_p = recognizer(a_p, inputs)
    return d_h.data, d_p.data, mask


def train_probe(recognizer, cfg, train_set, test_set, epochs=300, seed=0):
    d_h, d_p, mask = step_features(recognizer, train_set)
    probe = build_discriminator(cfg, np.random.default_rng(seed))
    opt = Adam(probe.parameters(), lr=3e-3)
    for _ in range(epochs):
        probe.zero_grad()
        (-loss_discriminator(probe, Tensor(d_p), Tensor(d_h), mask)).backward()
        opt.step()
    t_h, t_p, t_mask = step_features(recognizer, test_set)
    with T.no_grad():
        return disc_accuracy(probe(Tensor(t_p)).data, probe(Tensor(t_h)).data, t_mask)


def test_criterion_7_adversarial_mechanism(say, desk_runs, desk_corpus):
    train_set, held_out = desk_corpus
    plain, _ = desk_runs[0.0]
    adv, _ = desk_runs[0.1]
    probe_acc = train_probe(plain.recognizer, load_config(DESK).model, train_set, held_out)
    online = float(np.mean([r["disc_acc"] for r in adv.history[-200:]]))
    ok = probe_acc >= 0.75 and online <= 0.65
    say(7, "delta controls domain separability", ok,
        f"delta=0 probe accuracy on held-out features {probe_acc:.3f} (>= 0.75); "
        f"delta=0.1 online disc accuracy, last 200 iterations {online:.3f} (<= 0.65)")
    assert ok


# -- 8 ------------------------------------------------------------------------------------
def test_criterion_8_determinism(say, tmp_path):
    cfg = Config(ModelConfig(image_height=16, image_width=32, stem_channels=4, num_blocks=3, block_layers=1,
                             growth=4, d_model=8, heads=2, decoder_layers=1, d_ff=16, head_width=8, disc_width=8),
                 TrainConfig(batch_size=4, max_iters=6, disc_steps=2))
    data = synth_generate(2, 12, seed=3, height=16, width=32)
    blobs = []
    for k in range(2):
        res = train(data, cfg, V)
        save_checkpoint(tmp_path / f"c{k}.palx", cfg, synth_vocabulary(), res.recognizer, res.discriminator)
        blobs.append((tmp_path / f"c{k}.palx").read_bytes() + (tmp_path / f"c{k}.palx.json").read_bytes())
    ckpt_ok = blobs[0] == blobs[1]
    a, b = synth_generate(2, 20, 7), synth_generate(2, 20, 7)
    data_ok = all(x.a_h.tobytes() == y.a_h.tobytes() and x.a_p.tobytes() == y.a_p.tobytes() and x.b == y.b
                  for x, y in zip(a, b))
    import hashlib
    from pal_hmer.data.pgm import encode_pgm
    rec = parse_inkml((FIXTURES / "crohme_sample.inkml").read_text())
    raster_ok = hashlib.sha256(encode_pgm(rasterize(rec.strokes, 64, 256, 2))).hexdigest() == GOLDEN_SHA256
    ok = ckpt_ok and data_ok and raster_ok
    say(8, "determinism", ok,
        f"checkpoints bit-identical: {ckpt_ok}; synth byte-identical: {data_ok}; raster golden: {raster_ok}")
    assert ok


# -- 9 ------------------------------------------------------------------------------------
def test_criterion_9_round_trips(say, tmp_path):
    cfg = Config(ModelConfig(image_height=16, image_width=32, stem_channels=4, num_blocks=3, block_layers=1,
                             growth=4, d_model=8, heads=2, decoder_layers=1, d_ff=16, head_width=8, disc_width=8))
    rec = Recognizer(cfg.model, V, seed=5)
    disc = build_discriminator(cfg.model, np.random.default_rng(5))
    rec.encoder.blocks[0].layers[0].norm.buffers["running_mean"][:] = 0.125
    save_checkpoint(tmp_path / "m.palx", cfg, synth_vocabulary(), rec, disc)
    _, vocab, loaded, disc_state = load_checkpoint(tmp_path / "m.palx")
    state, back = rec.state_dict(), loaded.state_dict()
    ckpt_ok = set(state) == set(back) and all(state[k].tobytes() == back[k].tobytes() for k in state)
    ckpt_ok &= all(v.tobytes() == disc_state[k].tobytes() for k, v in disc.state_dict().items())
    save_checkpoint(tmp_path / "n.palx", cfg, vocab, loaded, disc)
    ckpt_ok &= (tmp_path / "m.palx").read_bytes() == (tmp_path / "n.palx").read_bytes()

    vocab = synth_vocabulary()
    rng = np.random.default_rng(0)
    tok_ok, count = True, 0
    for depth in range(4):
        for _ in range(500):
            tokens = sample_expression(rng, depth)
            tok_ok &= vocab.decode(tokenize(" ".join(tokens), vocab)) == tokens
            count += 1
    tok_ok &= vocab.decode(tokenize(" ".join(vocab.tokens), vocab)) == vocab.tokens

    rec_ink = parse_inkml((FIXTURES / "crohme_sample.inkml").read_text())
    counts = [len(s.points) for s in rec_ink.strokes]
    ink_ok = len(counts) == 4 and sum(counts) == 12 and counts == [5, 2, 2, 3]
    ok = ckpt_ok and tok_ok and ink_ok
    say(9, "round trips", ok,
        f"checkpoint bit-exact: {ckpt_ok}; tokenize/detokenize on {count} grammar samples + full vocab: {tok_ok}; "
        f"InkML fixture strokes {counts} (hand count 4 strokes / 12 points): {ink_ok}")
    assert ok
