"""Attention heads with symplectic, rotary or no position modulation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .sype import flow_tensor
from .warp import WarpParams, identity_clock, warp_clock, warp_increments

PE_MODES = ("sype", "rope", "none")
WARP_MODES = ("adaptive", "identity", "auto")


@dataclass(frozen=True)
class PEMode:
    pe: str = "sype"
    warp: str = "auto"

    def __post_init__(self):
        if self.pe not in PE_MODES:
            raise ValueError(f"pe_mode must be one of {PE_MODES}, got {self.pe!r}")
        if self.warp not in WARP_MODES:
            raise ValueError(f"warp_mode must be one of {WARP_MODES}, got {self.warp!r}")

    @property
    def adaptive(self) -> bool:
        if self.warp == "auto":
            return self.pe == "sype"
        return self.warp == "adaptive"


@dataclass
class HeadParams:
    """Projections for one head ``(d_h, d)`` or a stack of heads ``(H, d_h, d)``.

    ``alpha``/``beta``/``gamma`` carry learnable bands (sype); ``freqs`` the
    fixed rotary frequencies (rope).  Band arrays have one entry per pair.
    """

    w_q: nc.Tensor
    w_k: nc.Tensor
    w_v: nc.Tensor
    alpha: nc.Tensor | None = None
    beta: nc.Tensor | None = None
    gamma: nc.Tensor | None = None
    freqs: np.ndarray | None = None

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[-2]


def stack_heads(heads: Sequence[HeadParams]) -> HeadParams:
    """Stack single-head parameters along a new leading head axis."""
    if isinstance(heads, HeadParams):
        return heads

    def stack(ts):
        if ts[0] is None:
            return None
        return nc.concat([t.reshape(1, *t.shape) for t in ts], axis=0)

    freqs = None if heads[0].freqs is None else np.stack([h.freqs for h in heads])
    return HeadParams(stack([h.w_q for h in heads]), stack([h.w_k for h in heads]),
                      stack([h.w_v for h in heads]), stack([h.alpha for h in heads]),
                      stack([h.beta for h in heads]), stack([h.gamma for h in heads]), freqs)


def _as_batched_clock(clock, batch: int, n: int) -> nc.Tensor:
    if hasattr(clock, "clock"):
        clock = clock.clock
    clock = nc.as_tensor(clock)
    if clock.shape == (n,):
        if batch == 1:
            return clock.reshape(1, n)
        return nc.Tensor(np.broadcast_to(clock.data, (batch, n))) if not clock.requires_grad \
            else nc.add(clock.reshape(1, n), np.zeros((batch, n)))
    if clock.shape != (batch, n):
        raise nc.ShapeError(f"attention: clock {clock.shape} does not match {batch} sequences of length {n}")
    return clock


def _modulate(q4: nc.Tensor, k4: nc.Tensor, clock: nc.Tensor, head: HeadParams, mode: PEMode):
    if mode.pe == "none":
        return q4, k4
    if mode.pe == "sype":
        if head.alpha is None:
            raise ValueError("sype mode needs band parameters")
        params = [p if p.ndim == 2 else p.reshape(1, p.shape[0]) for p in (head.alpha, head.beta, head.gamma)]
        return (nc.symplectic_flow(q4, clock, *params, conjugate=False),
                nc.symplectic_flow(k4, clock, *params, conjugate=True))
    if head.freqs is None:
        raise ValueError("rope mode needs rotary frequencies")
    freqs = np.atleast_2d(head.freqs)
    log_w = nc.Tensor(np.log(freqs))
    zero = nc.Tensor(np.zeros_like(freqs))
    return (nc.symplectic_flow(q4, clock, log_w, log_w, zero),
            nc.symplectic_flow(k4, clock, log_w, log_w, zero))


def _to4(t: nc.Tensor) -> nc.Tensor:
    if t.ndim == 2:
        return t.reshape(1, 1, *t.shape)
    if t.ndim == 3:
        return t.reshape(1, *t.shape)
    return t


def attention_scores(Q, K, clock, head: HeadParams, mode: PEMode) -> nc.Tensor:
    """Scaled, position-modulated bilinear scores.

    ``Q``/``K`` are ``(N, d_h)``, ``(H, N, d_h)`` or ``(B, H, N, d_h)``.
    """
    Q = nc.as_tensor(Q)
    K = nc.as_tensor(K)
    if Q.shape != K.shape:
        raise nc.ShapeError(f"attention_scores: Q {Q.shape} and K {K.shape} differ")
    q4, k4 = _to4(Q), _to4(K)
    b, _, n, dh = q4.shape
    if dh % 2 and mode.pe != "none":
        raise nc.ShapeError(f"attention_scores: head dim {dh} must be even")
    clock = _as_batched_clock(clock, b, n)
    qt, kt = _modulate(q4, k4, clock, head, mode)
    scores = nc.scale(nc.matmul(qt, nc.transpose(kt)), 1.0 / math.sqrt(dh))
    return scores.reshape(Q.shape[:-1] + (n,))


def _project(tokens4: nc.Tensor, w: nc.Tensor) -> nc.Tensor:
    return nc.matmul(tokens4, nc.transpose(w))


def _project_heads(x: nc.Tensor, w: nc.Tensor) -> nc.Tensor:
    """``(B, N, d)`` by stacked ``(H, d_h, d)`` into ``(B, H, N, d_h)`` with a single GEMM."""
    b, n, d = x.shape
    h, dh, _ = w.shape
    flat = nc.matmul(x, nc.transpose(w.reshape(h * dh, d)))  # (B, N, H*dh)
    return nc.transpose(flat.reshape(b, n, h, dh), (0, 2, 1, 3))


def attention_head(tokens, clock, head: HeadParams, mode: PEMode) -> nc.Tensor:
    """Single-head attention output ``(N, d_h)`` (or ``(B, N, d_h)``)."""
    tokens = nc.as_tensor(tokens)
    if head.w_q.ndim != 2:
        raise ValueError("attention_head takes single-head parameters; use multi_head for stacks")
    x = tokens.reshape(1, *tokens.shape) if tokens.ndim == 2 else tokens
    b, n, d = x.shape
    if head.w_q.shape[1] != d:
        raise nc.ShapeError(f"attention_head: tokens {tokens.shape} vs W_Q {head.w_q.shape}")
    x4 = x.reshape(b, 1, n, d)
    q, k, v = (_project(x4, w) for w in (head.w_q, head.w_k, head.w_v))
    scores = attention_scores(q, k, _as_batched_clock(clock, b, n), head, mode)
    out = nc.matmul(nc.softmax(scores), v)
    return out.reshape(tokens.shape[:-1] + (head.head_dim,))


def multi_head(tokens, clock, heads, w_o, mode: PEMode) -> nc.Tensor:
    """Concatenate head outputs along features and project by ``W_O``."""
    tokens = nc.as_tensor(tokens)
    heads = stack_heads(heads)
    x = tokens.reshape(1, *tokens.shape) if tokens.ndim == 2 else tokens
    b, n, d = x.shape
    n_heads, dh, d_in = heads.w_q.shape
    if d_in != d:
        raise nc.ShapeError(f"multi_head: tokens {tokens.shape} vs W_Q {heads.w_q.shape}")
    w_o = nc.as_tensor(w_o)
    if w_o.shape != (d, n_heads * dh):
        raise nc.ShapeError(f"multi_head: W_O {w_o.shape} must be ({d}, {n_heads * dh})")
    q, k, v = (_project_heads(x, w) for w in (heads.w_q, heads.w_k, heads.w_v))
    scores = attention_scores(q, k, _as_batched_clock(clock, b, n), heads, mode)
    o = nc.matmul(nc.softmax(scores), v)  # (B, H, N, dh)
    o = nc.transpose(o, (0, 2, 1, 3)).reshape(b, n, n_heads * dh)
    out = nc.matmul(o, nc.transpose(w_o))
    return out.reshape(tokens.shape)


@dataclass
class LayerParams:
    ln1_weight: nc.Tensor
    ln1_bias: nc.Tensor
    heads: HeadParams
    w_o: nc.Tensor
    ln2_weight: nc.Tensor | None = None
    ln2_bias: nc.Tensor | None = None
    ff_w1: nc.Tensor | None = None
    ff_b1: nc.Tensor | None = None
    ff_w2: nc.Tensor | None = None
    ff_b2: nc.Tensor | None = None
    warp: WarpParams | None = None


def layer_clock(h: nc.Tensor, layer: LayerParams, mode: PEMode) -> nc.Tensor:
    """Clock for a batch of normalized tokens ``(B, N, d)``."""
    b, n, _ = h.shape
    if mode.adaptive and mode.pe != "none":
        if layer.warp is None:
            raise ValueError("adaptive warp requested but the layer has no warp parameters")
        return warp_clock(warp_increments(h, layer.warp)).clock
    return identity_clock(n, batch=b).clock


def feed_forward(x: nc.Tensor, layer: LayerParams) -> nc.Tensor:
    hidden = nc.gelu(nc.matmul(x, nc.transpose(layer.ff_w1)) + layer.ff_b1)
    return nc.matmul(hidden, nc.transpose(layer.ff_w2)) + layer.ff_b2


def encoder_layer(tokens, clock, layer: LayerParams, mode: PEMode, use_mlp: bool = True,
                  masks: dict | None = None) -> nc.Tensor:
    """Pre-norm block: ``x + MHA(LN(x))`` then optionally ``x + FFN(LN(x))``.

    ``clock=None`` derives the clock from the normalized tokens (adaptive warp)
    or uses the identity clock, according to ``mode``.  ``masks`` may hold
    ``"attn"`` and ``"ffn"`` arrays applied to the sublayer outputs.
    """
    x = nc.as_tensor(tokens)
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    h = nc.layer_norm(x, layer.ln1_weight, layer.ln1_bias)
    if clock is None:
        clock = layer_clock(h, layer, mode)
    a = multi_head(h, clock, layer.heads, layer.w_o, mode)
    if masks is not None and masks.get("attn") is not None:
        a = nc.masked_zero(a, masks["attn"])
    x = x + a
    if use_mlp:
        f = feed_forward(nc.layer_norm(x, layer.ln2_weight, layer.ln2_bias), layer)
        if masks is not None and masks.get("ffn") is not None:
            f = nc.masked_zero(f, masks["ffn"])
        x = x + f
    return x.reshape(x.shape[1:]) if single else x
