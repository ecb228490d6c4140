import math

import numpy as np
import pytest

from stretchtime import numcore as nc
from stretchtime.attention import (HeadParams, LayerParams, PEMode, attention_head, attention_scores,
                                   encoder_layer, feed_forward, multi_head, stack_heads)
from stretchtime.verify import random_head
from stretchtime.warp import WarpParams


def single_head(rng, dh=4, d=6, pe_scale=1.0):
    h = random_head(rng, 1, dh, d)
    return HeadParams(*(nc.Tensor(t.data[0]) for t in (h.w_q, h.w_k, h.w_v, h.alpha, h.beta, h.gamma)),
                      h.freqs[0])


def test_pe_mode_validation_and_auto():
    assert PEMode("sype").adaptive and not PEMode("rope").adaptive
    assert PEMode("rope", "adaptive").adaptive
    with pytest.raises(ValueError):
        PEMode("alibi")
    with pytest.raises(ValueError):
        PEMode("sype", "sometimes")


def test_none_mode_orthonormal_rows():
    Q = np.eye(4)
    s = attention_scores(Q, Q, np.arange(1.0, 5.0), HeadParams(*[None] * 3), PEMode("none")).data
    assert np.allclose(np.diag(s), 0.5) and np.allclose(s - np.diag(np.diag(s)), 0)


def test_sype_two_token_hand_value():
    head = HeadParams(None, None, None, nc.Tensor(np.zeros(1)), nc.Tensor(np.zeros(1)), nc.Tensor(np.zeros(1)))
    Q = np.array([[1.0, 0.0], [0.0, 0.0]])
    K = np.array([[0.0, 0.0], [0.0, 1.0]])
    s = attention_scores(Q, K, np.array([0.3, 0.7]), head, PEMode("sype", "identity")).data
    assert s[0, 1] * math.sqrt(2) == pytest.approx(math.cos(0.4), abs=1e-12)
    assert math.cos(0.4) == pytest.approx(0.921061, abs=1e-6)


@pytest.mark.parametrize("pe", ["sype", "rope"])
def test_clock_shift_invariance(rng, pe):
    head = single_head(rng)
    Q, K = rng.normal(size=(2, 7, 4))
    clock = np.cumsum(rng.uniform(0.2, 2, size=7))
    a = attention_scores(Q, K, clock, head, PEMode(pe)).data
    b = attention_scores(Q, K, clock + 5.0, head, PEMode(pe)).data
    assert np.abs(a - b).max() <= 1e-10


def test_sype_diagonal_structure(rng):
    head = single_head(rng)
    Q = rng.normal(size=(5, 4))
    clock = np.cumsum(rng.uniform(0.2, 2, size=5))
    s = attention_scores(Q, Q, clock, head, PEMode("sype")).data
    assert np.abs(np.diag(s)).max() <= 1e-12
    K = rng.normal(size=(5, 4))
    s = attention_scores(Q, K, clock, head, PEMode("sype")).data
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    expect = [sum(Q[m, 2 * i:2 * i + 2] @ J @ K[m, 2 * i:2 * i + 2] for i in range(2)) / 2 for m in range(5)]
    assert np.allclose(np.diag(s), expect, atol=1e-12)


def test_rope_matches_complex_reference(rng):
    head = single_head(rng, dh=6)
    Q, K = rng.normal(size=(2, 9, 6))
    n = np.arange(1, 10, dtype=float)
    s = attention_scores(Q, K, n, head, PEMode("rope")).data
    zq = (Q[:, 0::2] + 1j * Q[:, 1::2]) * np.exp(-1j * np.outer(n, head.freqs))
    zk = (K[:, 0::2] + 1j * K[:, 1::2]) * np.exp(-1j * np.outer(n, head.freqs))
    ref = np.real(zq @ np.conj(zk).T) / math.sqrt(6)
    assert np.abs(s - ref).max() <= 1e-10


def test_score_shape_errors(rng):
    head = single_head(rng)
    with pytest.raises(nc.ShapeError):
        attention_scores(rng.normal(size=(3, 4)), rng.normal(size=(4, 4)), np.arange(3.0), head, PEMode())
    with pytest.raises(nc.ShapeError):
        attention_scores(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), np.arange(5.0), head, PEMode())
    with pytest.raises(nc.ShapeError):
        attention_scores(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), np.arange(3.0), head, PEMode())


@pytest.mark.parametrize("pe", ["sype", "rope", "none"])
def test_single_token_returns_value(rng, pe):
    head = single_head(rng)
    x = rng.normal(size=(1, 6))
    out = attention_head(x, np.array([1.0]), head, PEMode(pe)).data
    assert np.allclose(out, x @ head.w_v.data.T, atol=1e-14)


def test_uniform_scores_average_values(rng):
    head = single_head(rng)
    head.w_q = nc.Tensor(np.zeros((4, 6)))
    x = rng.normal(size=(5, 6))
    out = attention_head(x, np.arange(1.0, 6.0), head, PEMode("sype")).data
    v = x @ head.w_v.data.T
    assert np.allclose(out, np.broadcast_to(v.mean(0), (5, 4)), atol=1e-14)


def test_softmax_rows_normalised(rng):
    head = single_head(rng)
    Q, K = rng.normal(scale=3, size=(2, 8, 4))
    probs = nc.softmax(attention_scores(Q, K, np.arange(1.0, 9.0), head, PEMode("sype"))).data
    assert np.abs(probs.sum(-1) - 1).max() <= 1e-12


def test_multi_head_single_head_identity_projection(rng):
    head = single_head(rng, dh=6, d=6)
    x = rng.normal(size=(5, 6))
    clock = np.arange(1.0, 6.0)
    a = multi_head(x, clock, [head], np.eye(6), PEMode("sype")).data
    b = attention_head(x, clock, head, PEMode("sype")).data
    assert np.abs(a - b).max() <= 1e-14


def test_multi_head_permutation_invariance(rng):
    heads = [single_head(rng, dh=2, d=8) for _ in range(4)]
    w_o = rng.normal(size=(8, 8))
    x = rng.normal(size=(6, 8))
    clock = np.cumsum(rng.uniform(0.5, 1.5, size=6))
    perm = [2, 0, 3, 1]
    cols = np.concatenate([np.arange(2 * p, 2 * p + 2) for p in perm])
    a = multi_head(x, clock, heads, w_o, PEMode("sype")).data
    b = multi_head(x, clock, [heads[p] for p in perm], w_o[:, cols], PEMode("sype")).data
    assert np.abs(a - b).max() <= 1e-13


def test_multi_head_dimension_errors(rng):
    heads = [single_head(rng, dh=2, d=8) for _ in range(4)]
    with pytest.raises(nc.ShapeError):
        multi_head(rng.normal(size=(6, 8)), np.arange(1.0, 7.0), heads, np.eye(6), PEMode())


@pytest.mark.parametrize("pe", ["sype", "rope", "none"])
def test_multi_head_gradcheck(rng, pe):
    stacked = random_head(rng, 4, 2, 8)
    x = nc.Tensor(rng.normal(size=(6, 8)))
    w_o = nc.Tensor(rng.normal(scale=0.5, size=(8, 8)))
    clock = nc.Tensor(np.cumsum(rng.uniform(0.5, 1.5, size=6)))
    w = rng.normal(size=(6, 8))
    params = [stacked.w_q, stacked.w_k, stacked.w_v, stacked.alpha, stacked.beta, stacked.gamma]

    def f(x, w_o, clock, *p):
        return nc.sum_(multi_head(x, clock, HeadParams(*p, stacked.freqs), w_o, PEMode(pe, "identity")) * w)

    inputs = [x, w_o] + ([clock] if pe != "none" else [])
    if pe == "sype":
        inputs += params
        fn = f
    else:
        inputs += params[:3]
        fn = (lambda x, w_o, *rest: f(x, w_o, *rest, *params[3:])) if pe == "rope" else \
             (lambda x, w_o, *rest: f(x, w_o, clock, *rest, *params[3:]))
    assert nc.gradcheck(fn, inputs) <= 1e-5


def _layer(rng, d=8, heads=2, zero=False, warp=True):
    dh = d // heads
    stacked = random_head(rng, heads, dh, d)
    scale = 0.0 if zero else 0.4
    t = lambda *s: nc.Tensor(scale * rng.normal(size=s))
    if zero:
        stacked.w_v = nc.Tensor(np.zeros_like(stacked.w_v.data))
    return LayerParams(nc.Tensor(1 + 0.1 * rng.normal(size=d)), nc.Tensor(0.1 * rng.normal(size=d)), stacked,
                       t(d, d), nc.Tensor(1 + 0.1 * rng.normal(size=d)), nc.Tensor(0.1 * rng.normal(size=d)),
                       t(4 * d, d), t(4 * d), t(d, 4 * d), t(d),
                       WarpParams(nc.Tensor(0.3 * rng.normal(size=d)), nc.Tensor(np.array([0.5]))) if warp else None)


def test_encoder_layer_zero_weights_is_identity(rng):
    x = rng.normal(size=(6, 8))
    out = encoder_layer(x, None, _layer(rng, zero=True), PEMode("sype"))
    assert np.array_equal(out.data, x)


def test_encoder_layer_without_mlp(rng):
    layer = _layer(rng)
    x = nc.Tensor(rng.normal(size=(6, 8)))
    mode = PEMode("sype")
    out = encoder_layer(x, None, layer, mode, use_mlp=False).data
    h = nc.layer_norm(x, layer.ln1_weight, layer.ln1_bias)
    from stretchtime.attention import layer_clock
    clock = layer_clock(h.reshape(1, 6, 8), layer, mode)
    expect = x.data + multi_head(h, clock.reshape(6), layer.heads, layer.w_o, mode).data
    assert np.abs(out - expect).max() <= 1e-14
    with_mlp = encoder_layer(x, None, layer, mode, use_mlp=True).data
    assert np.abs(with_mlp - out).max() > 1e-3


def test_encoder_layer_masks_zero_sublayers(rng):
    layer = _layer(rng)
    x = rng.normal(size=(1, 6, 8))
    zeros = np.zeros((1, 6, 8))
    out = encoder_layer(x, None, layer, PEMode("sype"), masks={"attn": zeros, "ffn": zeros}).data
    assert np.array_equal(out, x)


def test_feed_forward_shape(rng):
    layer = _layer(rng)
    assert feed_forward(nc.Tensor(rng.normal(size=(3, 6, 8))), layer).shape == (3, 6, 8)


@pytest.mark.parametrize("pe", ["sype", "rope", "none"])
def test_encoder_layer_gradcheck(rng, pe):
    layer = _layer(rng)
    x = nc.Tensor(rng.normal(size=(6, 8)))
    w = rng.normal(size=(6, 8))
    leaves = [layer.ln1_weight, layer.ln1_bias, layer.heads.w_q, layer.heads.w_k, layer.heads.w_v,
              layer.heads.alpha, layer.heads.beta, layer.heads.gamma, layer.w_o, layer.ff_w1, layer.ff_b1,
              layer.ff_w2, layer.ff_b2, layer.warp.weight, layer.warp.bias]

    def f(x, *_):
        return nc.sum_(encoder_layer(x, None, layer, PEMode(pe, "adaptive")) * w)

    assert nc.gradcheck(f, [x, *leaves]) <= 1e-4


def test_stack_heads_shapes(rng):
    heads = [single_head(rng) for _ in range(3)]
    s = stack_heads(heads)
    assert s.w_q.shape == (3, 4, 6) and s.alpha.shape == (3, 2) and s.freqs.shape == (3, 2)
