import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pal_hmer import tensor as T
from pal_hmer.config import ModelConfig
from pal_hmer.decoder import (Decoder, causal_mask, decoder_forward, ffn, multi_head_attention,
                              scaled_dot_attention)
from pal_hmer.encoder import FeatureGrid
from pal_hmer.errors import ConfigError, ContractError, DimensionError
from pal_hmer.positional import image_positional_encoding
from pal_hmer.tensor import Tensor

from gradcheck import TOL, check_module, check_op

V = 11


def cfg(**kw):
    base = dict(image_height=16, image_width=32, d_model=16, heads=4, decoder_layers=2, d_ff=32,
                head_width=16, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def random_grid(rng, n=1, h=2, w=3, d=16):
    return FeatureGrid(Tensor(rng.normal(size=(n, h * w, d))), image_positional_encoding(h, w, d), h, w)


def reference_attention(q, k, v, mask=None):
    s = q @ k.T / math.sqrt(q.shape[1])
    if mask is not None:
        s = np.where(mask, s, -np.inf)
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)) @ v


def per_head_reference(q, k, v, h, wq, wk, wv, wo, mask=None):
    """Materialize each head separately from column slices of the projections."""
    dk = wq.shape[1] // h
    heads = []
    for i in range(h):
        cols = slice(i * dk, (i + 1) * dk)
        heads.append(reference_attention(q @ wq[:, cols], k @ wk[:, cols], v @ wv[:, cols], mask))
    return np.concatenate(heads, axis=1) @ wo


# -- causal mask ---------------------------------------------------------------
def test_causal_mask_small():
    assert causal_mask(1).tolist() == [[True]]
    m = causal_mask(3)
    assert m[np.tril_indices(3)].all() and (~m[np.triu_indices(3, 1)]).sum() == 3


@pytest.mark.parametrize("length", range(1, 10))
def test_causal_mask_row_counts(length):
    m = causal_mask(length)
    assert m.sum(axis=1).tolist() == list(range(1, length + 1))
    assert all(m[i, j] == (j <= i) for i in range(length) for j in range(length))


def test_causal_mask_needs_length():
    with pytest.raises(ContractError):
        causal_mask(0)


# -- scaled dot attention ---------------------------------------------------------
def test_attention_single_key():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(1, 5))
    out = scaled_dot_attention(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(1, 3))), Tensor(v))
    assert np.allclose(out.data, np.repeat(v, 4, axis=0), atol=1e-15)


def test_attention_zero_query_averages():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(4, 2))
    mask = causal_mask(4)
    out = scaled_dot_attention(Tensor(np.zeros((4, 3))), Tensor(rng.normal(size=(4, 3))), Tensor(v), mask).data
    for i in range(4):
        assert np.allclose(out[i], v[: i + 1].mean(axis=0), atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_attention_matches_formula(seed):
    rng = np.random.default_rng(seed)
    q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
    mask = rng.random((3, 5)) < 0.7
    mask[:, 0] = True
    got = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), mask).data
    assert np.abs(got - reference_attention(q, k, v, mask)).max() <= 1e-12
    assert np.abs(scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v)).data - reference_attention(q, k, v)).max() <= 1e-12


def test_attention_errors():
    z = Tensor(np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        scaled_dot_attention(z, Tensor(np.zeros((2, 4))), z)
    with pytest.raises(DimensionError):
        scaled_dot_attention(z, z, z, np.ones((3, 3), bool))
    with pytest.raises(ContractError):
        scaled_dot_attention(z, z, z, np.array([[True, False], [False, False]]))


@settings(max_examples=40, deadline=None)
@given(lq=st.integers(1, 6), lk=st.integers(1, 6), seed=st.integers(0, 10 ** 6))
def test_attention_weight_rows(lq, lk, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((lq, lk)) < 0.5
    mask[np.arange(lq), rng.integers(0, lk, lq)] = True
    sink = []
    scaled_dot_attention(Tensor(rng.normal(size=(lq, 4)) * 5), Tensor(rng.normal(size=(lk, 4)) * 5),
                         Tensor(rng.normal(size=(lk, 3))), mask, weights_out=sink)
    w = sink[0]
    assert np.abs(w.sum(axis=-1) - 1).max() <= 1e-9
    assert np.all(w[~mask] == 0.0)


# -- multi-head ------------------------------------------------------------------
def _mha_inputs(rng, d=8, lq=3, lk=4):
    q, k, v = rng.normal(size=(lq, d)), rng.normal(size=(lk, d)), rng.normal(size=(lk, d))
    ws = [rng.normal(size=(d, d)) / math.sqrt(d) for _ in range(4)]
    return q, k, v, ws


def test_single_head_is_attention_between_linear_maps():
    rng = np.random.default_rng(0)
    q, k, v, (wq, wk, wv, wo) = _mha_inputs(rng)
    got = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), 1, *map(Tensor, (wq, wk, wv, wo))).data
    want = reference_attention(q @ wq, k @ wk, v @ wv) @ wo
    assert np.abs(got - want).max() <= 1e-12


def test_zero_output_projection():
    rng = np.random.default_rng(1)
    q, k, v, (wq, wk, wv, _) = _mha_inputs(rng)
    out = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), 2, *map(Tensor, (wq, wk, wv, np.zeros((8, 8)))))
    assert not out.data.any()


@pytest.mark.parametrize("heads", [2, 4])
@pytest.mark.parametrize("seed", range(20))
def test_fused_heads_match_per_head_reference(heads, seed):
    rng = np.random.default_rng(seed)
    q, k, v, ws = _mha_inputs(rng, lq=4, lk=4)
    mask = causal_mask(4) if seed % 2 else None
    got = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), heads, *map(Tensor, ws), mask).data
    assert np.abs(got - per_head_reference(q, k, v, heads, *ws, mask)).max() <= 1e-10


def test_batched_heads_match_per_sample():
    rng = np.random.default_rng(2)
    ws = [Tensor(rng.normal(size=(8, 8))) for _ in range(4)]
    x = rng.normal(size=(3, 5, 8))
    mem = rng.normal(size=(3, 6, 8))
    batched = multi_head_attention(Tensor(x), Tensor(mem), Tensor(mem), 4, *ws).data
    for b in range(3):
        one = multi_head_attention(Tensor(x[b]), Tensor(mem[b]), Tensor(mem[b]), 4, *ws).data
        assert np.abs(batched[b] - one).max() <= 1e-12


def test_head_divisibility():
    rng = np.random.default_rng(3)
    q, k, v, ws = _mha_inputs(rng)
    with pytest.raises(ConfigError):
        multi_head_attention(Tensor(q), Tensor(k), Tensor(v), 3, *map(Tensor, ws))
    with pytest.raises(ConfigError):
        ModelConfig(d_model=16, heads=3)


# -- FFN ---------------------------------------------------------------------------
def test_ffn_zero_weights_gives_bias():
    b2 = np.array([1.0, -2.0, 3.0])
    out = ffn(Tensor(np.ones((4, 3))), Tensor(np.zeros((3, 5))), Tensor(np.ones(5)), Tensor(np.zeros((5, 3))), Tensor(b2))
    assert np.array_equal(out.data, np.tile(b2, (4, 1)))


def test_ffn_dead_relu_gives_bias():
    rng = np.random.default_rng(0)
    b2 = rng.normal(size=3)
    out = ffn(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(3, 5))), Tensor(np.full(5, -1e3)),
              Tensor(rng.normal(size=(5, 3))), Tensor(b2))
    assert np.array_equal(out.data, np.tile(b2, (4, 1)))


def test_ffn_is_positionwise():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 3))
    params = [Tensor(rng.normal(size=s)) for s in [(3, 5), (5,), (5, 3), (3,)]]
    perm = rng.permutation(6)
    assert np.array_equal(ffn(Tensor(x[perm]), *params).data, ffn(Tensor(x), *params).data[perm])


@pytest.mark.parametrize("seed", range(10))
def test_attention_and_ffn_gradients(seed):
    rng = np.random.default_rng(seed)
    mask = causal_mask(3)
    w = rng.normal(size=(3, 4))
    assert check_op(lambda q, k, v: T.tsum(scaled_dot_attention(q, k, v, mask) * w),
                    rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), rng.normal(size=(3, 4))) < TOL
    wo = rng.normal(size=(4, 4))
    assert check_op(lambda x, a, b: T.tsum(multi_head_attention(x, x, x, 2, a, b, a, Tensor(wo), mask) * w),
                    rng.normal(size=(3, 4)), rng.normal(size=(4, 4)), rng.normal(size=(4, 4))) < TOL
    assert check_op(lambda x, w1, b1, w2, b2: T.tsum(ffn(x, w1, b1, w2, b2) * w),
                    rng.normal(size=(3, 4)), rng.normal(size=(4, 6)), rng.normal(size=6),
                    rng.normal(size=(6, 4)), rng.normal(size=4)) < TOL


# -- full decoder -------------------------------------------------------------------
def make_decoder(seed=0, **kw):
    dec = Decoder(cfg(**kw), V, np.random.default_rng(seed))
    return dec.eval()


@pytest.mark.parametrize("length", [1, 2, 5, 9])
def test_decoder_shapes(length):
    rng = np.random.default_rng(0)
    dec = make_decoder()
    ids = rng.integers(0, V, length)
    logits, d = decoder_forward(dec, random_grid(rng), ids)
    assert logits.shape == (length, V) and d.shape == (length, 16)


def test_decoder_contracts():
    rng = np.random.default_rng(0)
    dec = make_decoder()
    with pytest.raises(ContractError):
        decoder_forward(dec, random_grid(rng), [])
    with pytest.raises(DimensionError):
        decoder_forward(dec, random_grid(rng, d=8), [1, 2])
    with pytest.raises(IndexError):
        decoder_forward(dec, random_grid(rng), [1, V])


def test_logits_are_linear_map_of_d():
    rng = np.random.default_rng(1)
    dec = make_decoder(head_layers=1)
    logits, d = decoder_forward(dec, random_grid(rng), [1, 4, 5])
    lin = dec.head.layers[0]
    assert np.abs(logits.data - (d.data @ lin.weight.data + lin.bias.data)).max() <= 1e-12


@pytest.mark.parametrize("length", range(2, 9))
def test_future_tokens_do_not_change_past_logits(length):
    rng = np.random.default_rng(length)
    dec = make_decoder(seed=length)
    grid = random_grid(rng)
    ids = rng.integers(0, V, length)
    base, _ = decoder_forward(dec, grid, ids)
    for j in range(1, length):
        mutated = ids.copy()
        mutated[j:] = (mutated[j:] + rng.integers(1, V, length - j)) % V
        out, _ = decoder_forward(dec, grid, mutated)
        assert out.data[:j].tobytes() == base.data[:j].tobytes()


def test_attention_inspection_rows():
    rng = np.random.default_rng(2)
    dec = make_decoder()
    dec(random_grid(rng), rng.integers(0, V, (1, 6)), keep_weights=True)
    for layer in dec.layers:
        w = layer.self_attn.last_weights
        assert w.shape == (1, 4, 6, 6)
        assert np.abs(w.sum(axis=-1) - 1).max() <= 1e-9
        assert np.all(w[..., ~causal_mask(6)] == 0.0)
        c = layer.cross_attn.last_weights
        assert np.abs(c.sum(axis=-1) - 1).max() <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_incremental_decoding_matches_teacher_forcing(seed):
    rng = np.random.default_rng(seed)
    dec = make_decoder(seed=seed)
    grid = random_grid(rng, n=3)
    ids = rng.integers(0, V, (3, 7))
    full, _ = dec(grid, ids)
    with T.no_grad():
        cache = dec.start(grid)
        steps = np.stack([dec.step(cache, ids[:, t]) for t in range(7)], axis=1)
    assert np.abs(steps - full.data).max() <= 1e-10


def test_cache_select_reorders_rows():
    rng = np.random.default_rng(3)
    dec = make_decoder()
    grid = random_grid(rng, n=2)
    ids = rng.integers(0, V, (2, 4))
    with T.no_grad():
        cache = dec.start(grid)
        for t in range(3):
            dec.step(cache, ids[:, t])
        cache.select([1, 1, 0])
        got = dec.step(cache, ids[[1, 1, 0], 3])
    full, _ = dec(grid, ids)
    assert np.abs(got - full.data[[1, 1, 0], 3]).max() <= 1e-10


def test_dropout_only_in_training():
    rng = np.random.default_rng(4)
    dec = Decoder(cfg(dropout=0.5), V, np.random.default_rng(0))
    grid = random_grid(rng)
    ids = [1, 3, 4]
    dec.train()
    a, _ = decoder_forward(dec, grid, ids)
    b, _ = decoder_forward(dec, grid, ids)
    assert not np.array_equal(a.data, b.data)
    dec.eval()
    c, _ = decoder_forward(dec, grid, ids)
    d, _ = decoder_forward(dec, grid, ids)
    assert np.array_equal(c.data, d.data)


@pytest.mark.parametrize("seed", range(10))
def test_decoder_gradient(seed):
    rng = np.random.default_rng(seed)
    dec = Decoder(cfg(), V, rng).train()
    grid = random_grid(rng)
    ids = rng.integers(0, V, 3)
    params = dict(dec.named_parameters())
    err = check_module(lambda: T.tsum(decoder_forward(dec, grid, ids)[0]), params, rng)
    assert err < TOL


@pytest.mark.parametrize("seed", range(3))
def test_decoder_gradient_reaches_grid(seed):
    rng = np.random.default_rng(seed)
    dec = make_decoder(seed=seed)
    pos = image_positional_encoding(2, 3, 16)
    w = rng.normal(size=(3, V))
    ids = rng.integers(0, V, 3)

    def f(feats):
        grid = FeatureGrid(feats.reshape(1, 6, 16), pos, 2, 3)
        return T.tsum(decoder_forward(dec, grid, ids)[0] * w)

    assert check_op(f, rng.normal(size=(6, 16))) < TOL
