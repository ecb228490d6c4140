"""Content-dependent clock: positive per-token increments and their running sum."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc

# softplus(IDENTITY_BIAS) == 1.0 exactly in float64
IDENTITY_BIAS = math.log(math.e - 1.0)


@dataclass
class WarpParams:
    weight: nc.Tensor  # (d_model,)
    bias: nc.Tensor  # (1,)

    @classmethod
    def identity(cls, d_model: int) -> "WarpParams":
        return cls(nc.Tensor(np.zeros(d_model), requires_grad=True, name="warp.weight"),
                   nc.Tensor(np.full(1, IDENTITY_BIAS), requires_grad=True, name="warp.bias"))


@dataclass
class WarpClock:
    increments: nc.Tensor
    clock: nc.Tensor


def warp_increments(tokens, params: WarpParams) -> nc.Tensor:
    """``softplus(tokens @ weight + bias)`` over the last axis of ``tokens``."""
    tokens = nc.as_tensor(tokens)
    d = params.weight.shape[0]
    if tokens.shape[-1] != d:
        raise nc.ShapeError(f"warp: tokens {tokens.shape} do not match weight ({d},)")
    proj = nc.matmul(tokens, params.weight.reshape(d, 1))
    proj = proj.reshape(tokens.shape[:-1])
    return nc.softplus(proj + params.bias)


def warp_clock(increments) -> WarpClock:
    increments = nc.as_tensor(increments)
    if np.any(increments.data <= 0) or not np.all(np.isfinite(increments.data)):
        raise ValueError("warp increments must be finite and strictly positive")
    clock = nc.cumsum(increments, axis=-1)
    nudge = _strict_nudge(clock.data)
    if nudge is not None:
        clock = clock + nc.Tensor(nudge)
    return WarpClock(increments, clock)


def _strict_nudge(clock: np.ndarray) -> np.ndarray | None:
    """Offsets lifting steps absorbed by rounding to the next representable float.

    An increment below half an ulp of the running sum vanishes in float64; the
    clock must still be strictly increasing, so such steps advance by one ulp.
    Returns ``None`` when no step was absorbed (the usual case).
    """
    if np.all(np.diff(clock, axis=-1) > 0):
        return None
    rows = clock.reshape(-1, clock.shape[-1])
    fixed = rows.copy()
    for r in range(fixed.shape[0]):
        for i in range(1, fixed.shape[1]):
            if fixed[r, i] <= fixed[r, i - 1]:
                fixed[r, i] = np.nextafter(fixed[r, i - 1], np.inf)
    return (fixed - rows).reshape(clock.shape)


def identity_clock(n: int, batch: int | None = None) -> WarpClock:
    if n < 1:
        raise ValueError("clock length must be at least 1")
    ones = np.ones(n) if batch is None else np.ones((batch, n))
    clock = np.arange(1, n + 1, dtype=np.float64)
    if batch is not None:
        clock = np.broadcast_to(clock, (batch, n))
    return WarpClock(nc.Tensor(ones), nc.Tensor(clock))
