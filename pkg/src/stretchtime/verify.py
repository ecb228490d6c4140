"""Invariant suites behind ``stretchtime verify``.

Every check returns a :class:`CheckResult` row; the CLI writes them as CSV
and exits non-zero if any row fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numcore as nc
from .attention import HeadParams, PEMode, attention_scores
from .data import oscillating_warp
from .model import ModelConfig, channel_dropout, forward, init_params, param_specs
from .sype import (J, Feasible, HamiltonianBand, apply_flow, conjugate_key_flow, expm_oracle,
                   flow_matrix, flow_tensor, generator, rope_feasibility_check, rope_flow)
from .warp import IDENTITY_BIAS

REPORT_COLUMNS = ("check", "samples", "max_error", "threshold", "pass")


@dataclass(frozen=True)
class CheckResult:
    check: str
    samples: int
    max_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.threshold)

    def row(self) -> str:
        return f"{self.check},{self.samples},{float(self.max_error)!r},{float(self.threshold)!r},{str(self.passed).lower()}"


def random_bands(rng: np.random.Generator, n: int, low: float = -3.0, high: float = 3.0) -> list[HamiltonianBand]:
    raw = rng.uniform(low, high, size=(n, 3))
    return [HamiltonianBand(*r) for r in raw]


# ---------------------------------------------------------------- flow identities


def check_symplectic(seed: int = 0, n: int = 1000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    bands = random_bands(rng, n)
    times = rng.uniform(-10, 10, size=n)
    conserve = det = 0.0
    for band, t in zip(bands, times):
        S = flow_matrix(band, t)
        conserve = max(conserve, np.abs(S.T @ J @ S - J).max())
        det = max(det, abs(np.linalg.det(S) - 1.0))
    return [CheckResult("symplectic_conservation", n, conserve, 1e-10),
            CheckResult("unit_determinant", n, det, 1e-10)]


def check_group_law(seed: int = 1, n: int = 1000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    bands = random_bands(rng, n)
    t, u = rng.uniform(-10, 10, size=(2, n))
    law = inv = 0.0
    for band, a, b in zip(bands, t, u):
        law = max(law, np.abs(flow_matrix(band, a) @ flow_matrix(band, b) - flow_matrix(band, a + b)).max())
        inv = max(inv, np.abs(flow_matrix(band, a) @ flow_matrix(band, -a) - np.eye(2)).max())
    return [CheckResult("group_law", n, law, 1e-9), CheckResult("group_inverse", n, inv, 1e-10)]


def oracle_sample(seed: int = 2, n: int = 1000, small: int = 200):
    """Bands and times with ``|omega t| <= 10``; the last ``small`` hit the sinc branch."""
    rng = np.random.default_rng(seed)
    bands = random_bands(rng, n)
    out = []
    for k, band in enumerate(bands):
        limit = 1e-5 if k >= n - small else 10.0
        out.append((band, rng.uniform(-limit, limit) / band.omega))
    return out


def check_closed_form(seed: int = 2, n: int = 1000) -> list[CheckResult]:
    sample = oracle_sample(seed, n)
    err = max(np.abs(flow_matrix(b, t) - expm_oracle(generator(b), t)).max() for b, t in sample)
    small = [(b, t) for b, t in sample if abs(b.omega * t) <= 1e-5]
    err_small = max(np.abs(flow_matrix(b, t) - expm_oracle(generator(b), t)).max() for b, t in small)
    return [CheckResult("closed_form_vs_expm", n, err, 1e-8),
            CheckResult("closed_form_vs_expm_sinc_branch", len(small), err_small, 1e-8)]


def check_rope_reduction(seed: int = 3, n: int = 100) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    omegas = rng.uniform(1e-3, 5.0, size=n)
    times = rng.uniform(-10, 10, size=n)
    err = max(np.abs(flow_matrix(HamiltonianBand.from_entries(w, w, 0.0), t) - rope_flow(w, t)).max()
              for w, t in zip(omegas, times))
    return [CheckResult("rope_reduction", n, err, 1e-12)]


def check_relative_identity(seed: int = 4, n: int = 1000) -> list[CheckResult]:
    """``<S(tm) q, J S(tn) k> = q^T J S(tn - tm) k`` per block."""
    rng = np.random.default_rng(seed)
    bands = random_bands(rng, n)
    q, k = rng.normal(size=(2, n, 2))
    tm, tn = rng.uniform(-10, 10, size=(2, n))
    err = 0.0
    for i, band in enumerate(bands):
        lhs = apply_flow([band], q[i], tm[i]) @ conjugate_key_flow([band], k[i], tn[i])
        rhs = q[i] @ J @ flow_matrix(band, tn[i] - tm[i]) @ k[i]
        err = max(err, abs(lhs - rhs))
    return [CheckResult("relative_time_identity", n, err, 1e-10)]


def random_head(rng: np.random.Generator, n_heads: int, head_dim: int, d_model: int) -> HeadParams:
    w = [nc.Tensor(rng.normal(0, 0.5, size=(n_heads, head_dim, d_model))) for _ in range(3)]
    bands = [nc.Tensor(rng.uniform(-2, 1, size=(n_heads, head_dim // 2))) for _ in range(2)]
    gamma = nc.Tensor(rng.uniform(-2, 2, size=(n_heads, head_dim // 2)))
    freqs = np.exp(rng.uniform(-4, 0, size=(n_heads, head_dim // 2)))
    return HeadParams(*w, bands[0], bands[1], gamma, freqs)


def check_shift_invariance(seed: int = 5, trials: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    rows = []
    for pe in ("sype", "rope"):
        err = 0.0
        for _ in range(trials):
            head = random_head(rng, 2, 4, 6)
            Q, K = rng.normal(size=(2, 2, 7, 4))
            clock = np.cumsum(rng.uniform(0.2, 2.0, size=7))
            shift = rng.uniform(-20, 20)
            mode = PEMode(pe, "identity")
            a = attention_scores(Q, K, clock, head, mode).data
            b = attention_scores(Q, K, clock + shift, head, mode).data
            err = max(err, np.abs(a - b).max())
        rows.append(CheckResult(f"score_shift_invariance_{pe}", trials, err, 1e-10))
    return rows


def check_basis_sign(seed: int = 6, n: int = 100) -> list[CheckResult]:
    """For the isotropic unit band, ``q=[0,1]``, ``k=[1,0]`` the score is ``-cos(theta)``.

    Recorded as a row so the sign convention is visible in the report.
    """
    rng = np.random.default_rng(seed)
    band = HamiltonianBand.rotary(1.0)
    q, k = np.array([0.0, 1.0]), np.array([1.0, 0.0])
    err = 0.0
    for theta in rng.uniform(-math.pi, math.pi, size=n):
        score = apply_flow([band], q, 0.0) @ conjugate_key_flow([band], k, theta)
        err = max(err, abs(score + math.cos(theta)))
    return [CheckResult("basis_score_equals_minus_cos", n, err, 1e-12)]


# ---------------------------------------------------------------- feasibility oracle


def feasibility_grids(seed: int = 7, cases: int = 10_000, max_len: int = 16, max_step: int = 4):
    """Seeded monotone integer grids; a third have constant increments."""
    rng = np.random.default_rng(seed)
    grids = []
    for i in range(cases):
        n = int(rng.integers(2, max_len + 1))
        start = int(rng.integers(-5, 6))
        if i % 3 == 0:
            steps = np.full(n - 1, int(rng.integers(1, max_step + 1)))
        else:
            steps = rng.integers(1, max_step + 1, size=n - 1)
        grids.append(start + np.concatenate([[0], np.cumsum(steps)]).astype(np.float64))
    return grids


def pairwise_rope_consistent(tau: np.ndarray, omega0: float, tol: float = 1e-9) -> bool:
    """Brute force: one angle ``theta`` with ``omega0 (tau_n - tau_m) = theta (n - m)`` mod 2 pi for all pairs."""
    theta = omega0 * (tau[1] - tau[0]) if len(tau) > 1 else 0.0
    for m in range(len(tau)):
        for n in range(m + 1, len(tau)):
            gap = omega0 * (tau[n] - tau[m]) - theta * (n - m)
            wrapped = (gap + math.pi) % (2 * math.pi) - math.pi
            if abs(wrapped) > tol:
                return False
    return True


def check_feasibility_oracle(seed: int = 7, cases: int = 10_000, max_step: int = 4) -> list[CheckResult]:
    omega0 = 0.9 * math.pi / max_step  # non-aliasing for every grid
    grids = feasibility_grids(seed, cases, max_step=max_step)
    disagree = feasible = affine = 0
    for tau in grids:
        steps = np.diff(tau)
        is_affine = bool(np.all(steps == steps[0]))
        is_feasible = isinstance(rope_feasibility_check(tau, omega0), Feasible)
        brute = pairwise_rope_consistent(tau, omega0)
        affine += is_affine
        feasible += is_feasible
        disagree += (is_feasible != is_affine) or (brute != is_affine)
    return [CheckResult("feasible_iff_affine", cases, float(disagree), 0.0),
            CheckResult("feasible_count_minus_affine_count", cases, float(abs(feasible - affine)), 0.0)]


def check_oscillating_warp_feasibility() -> list[CheckResult]:
    omega0 = 2 * math.pi / 24
    t = np.arange(200)
    warped = rope_feasibility_check(oscillating_warp(t, 0.5, 500.0), omega0)
    plain = rope_feasibility_check(oscillating_warp(t, 0.0, 500.0), omega0)
    bad = int(isinstance(warped, Feasible)) + int(not isinstance(plain, Feasible))
    theta_err = abs(plain.theta - omega0) if isinstance(plain, Feasible) else math.inf
    return [CheckResult("warped_clock_infeasible_affine_feasible", 2, float(bad), 0.0),
            CheckResult("affine_clock_theta_equals_omega0", 1, theta_err, 1e-12)]


# ---------------------------------------------------------------- gradients


def _probe(rng, shape):
    return nc.Tensor(rng.normal(size=shape))


def check_flow_gradients(seed: int = 8, trials: int = 10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    err = 0.0
    for k in range(trials):
        x = _probe(rng, (3, 4))
        clock = nc.Tensor(np.cumsum(rng.uniform(0.1, 1.5, size=3)))
        params = [nc.Tensor(rng.uniform(-1.5, 1.0, size=2)) for _ in range(3)]
        w = rng.normal(size=(3, 4))
        conj = bool(k % 2)

        def f(x, clock, a, b, g):
            return nc.sum_(flow_tensor(x, clock, a, b, g, conjugate=conj) * w)

        err = max(err, nc.gradcheck(f, [x, clock, *params]))
    return [CheckResult("flow_gradients", trials, err, 1e-6)]


def _primitive_cases(rng):
    """``name -> (function, inputs)``; projection weights are drawn once per case."""
    r = lambda *s: rng.normal(size=s)
    w = {k: r(*shape) for k, shape in {
        "add": (2, 3, 4), "sub": (3, 4), "scale": (3,), "matmul": (2, 3, 5), "concat": (3, 5),
        "slice": (2, 4), "transpose": (4, 3), "sum": (4,), "mean": (3,), "softmax": (3, 4),
        "layernorm": (3, 4), "unary": (5,), "cumsum": (2, 5), "masked_zero": (3, 4),
        "embedding": (3, 4)}.items()}
    mask = (rng.random((3, 4)) > 0.3) / 0.7
    cases = {
        "add": (lambda a, b: nc.sum_(nc.add(a, b) * w["add"]), [r(2, 3, 4), r(3, 4)]),
        "sub": (lambda a, b: nc.sum_(nc.sub(a, b) * w["sub"]), [r(3, 4), r(3, 4)]),
        "mul": (lambda a, b: nc.sum_(nc.mul(a, b)), [r(2, 3, 4), r(3, 4)]),
        "scale": (lambda a: nc.sum_(nc.scale(a, 1.7) * w["scale"]), [r(3)]),
        "matmul": (lambda a, b: nc.sum_(nc.matmul(a, b) * w["matmul"]), [r(2, 3, 4), r(4, 5)]),
        "concat": (lambda a, b: nc.sum_(nc.concat([a, b], axis=-1) * w["concat"]), [r(3, 2), r(3, 3)]),
        "slice": (lambda a: nc.sum_(nc.slice_(a, (slice(1, 3),)) * w["slice"]), [r(4, 4)]),
        "transpose": (lambda a: nc.sum_(nc.transpose(a) * w["transpose"]), [r(3, 4)]),
        "sum": (lambda a: nc.sum_(nc.sum_(a, axis=0) * w["sum"]), [r(3, 4)]),
        "mean": (lambda a: nc.sum_(nc.mean(a, axis=-1) * w["mean"]), [r(3, 4)]),
        "softmax": (lambda a: nc.sum_(nc.softmax(a) * w["softmax"]), [r(3, 4)]),
        "layernorm": (lambda x, g, b: nc.sum_(nc.layer_norm(x, g, b) * w["layernorm"]), [r(3, 4), r(4), r(4)]),
        "cumsum": (lambda a: nc.sum_(nc.cumsum(a, axis=-1) * w["cumsum"]), [r(2, 5)]),
        "masked_zero": (lambda a: nc.sum_(nc.masked_zero(a, mask) * w["masked_zero"]), [r(3, 4)]),
        "embedding": (lambda t: nc.sum_(nc.embedding(t, np.array([2, 0, 2])) * w["embedding"]), [r(3, 4)]),
    }
    for name in ("softplus", "tanh", "exp", "sin", "cos", "gelu"):
        op = getattr(nc, name)
        cases[name] = ((lambda op: lambda a: nc.sum_(op(a) * w["unary"]))(op), [r(5)])
    return cases


def check_primitive_gradients(seed: int = 9, points: int = 10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    err = 0.0
    count = 0
    for _ in range(points):
        for _, (fn, args) in _primitive_cases(rng).items():
            err = max(err, nc.gradcheck(fn, [nc.Tensor(a) for a in args]))
            count += 1
    return [CheckResult("primitive_gradients", count, err, 1e-6)]


# ---------------------------------------------------------------- model


GRADCHECK_CONFIG = dict(lookback=8, horizon=4, channels=2, d_model=8, n_heads=2, n_layers=1)


def perturbed_params(config: ModelConfig, seed: int, std: float = 0.5):
    """Parameters away from the degenerate init so every path carries gradient."""
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    for name, shape, init in param_specs(config):
        t = params[name]
        if init == "ones":
            t.data = 1.0 + 0.1 * rng.normal(size=shape)
        elif init == "band":
            t.data = t.data + 0.3 * rng.normal(size=shape)
        elif init == "warp_bias":
            t.data = IDENTITY_BIAS + 0.1 * rng.normal(size=shape)
        else:
            t.data = std * rng.normal(size=shape)
    return params


def model_gradcheck(pe_mode: str, seed: int = 0, batch: int = 2, std: float = 0.5) -> float:
    """Relative error of the MSE loss gradient over every model parameter."""
    config = ModelConfig(pe_mode=pe_mode, dropout_rate=0.0, **GRADCHECK_CONFIG)
    params = perturbed_params(config, seed, std)
    rng = np.random.default_rng(seed + 1000)
    X = rng.normal(size=(batch, config.lookback, config.channels))
    Y = rng.normal(size=(batch, config.horizon, config.channels))
    names = list(params.tensors)

    def loss(*tensors):
        params.tensors = dict(zip(names, tensors))
        d = forward(X, params) - Y
        return nc.mean(d * d)

    return nc.gradcheck(loss, [params[n] for n in names])


def check_model_gradients(seed: int = 0) -> list[CheckResult]:
    return [CheckResult(f"model_gradients_{pe}", 1, model_gradcheck(pe, seed), 1e-4)
            for pe in ("sype", "rope", "none")]


def check_translation_equivariance(seed: int = 10, trials: int = 5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    config = ModelConfig(**GRADCHECK_CONFIG)
    err = 0.0
    for k in range(trials):
        params = perturbed_params(config, seed + k)
        X = rng.normal(size=(3, config.lookback, config.channels))
        kappa = rng.uniform(-50, 50, size=config.channels)
        a = forward(X + kappa, params).data
        b = forward(X, params).data + kappa
        err = max(err, np.abs(a - b).max())
    return [CheckResult("translation_equivariance", trials, err, 1e-8)]


def check_static_ablation(seed: int = 11) -> list[CheckResult]:
    """SyPE at init (zero warp weight, identity bias) equals the identity-clock model bit for bit."""
    rng = np.random.default_rng(seed)
    adaptive = ModelConfig(warp_mode="adaptive", **GRADCHECK_CONFIG)
    static = ModelConfig(warp_mode="identity", **GRADCHECK_CONFIG)
    pa = init_params(adaptive, seed)
    ps = init_params(static, seed)
    for name, t in pa.items():
        if not name.endswith(("warp.weight", "warp.bias", "sype.gamma")):
            t.data = rng.normal(0, 0.5, size=t.shape)
        if name in ps.tensors:
            ps[name].data = t.data.copy()
    X = rng.normal(size=(4, adaptive.lookback, adaptive.channels))
    diff = np.abs(forward(X, pa).data - forward(X, ps).data).max()
    return [CheckResult("sype_init_equals_static_clock", 4, float(diff), 0.0)]


def check_channel_dropout(seed: int = 12, masks: int = 100_000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.5, 2.0, size=(2, 4))
    keep = 0.6
    total = np.zeros_like(X)
    for _ in range(masks):
        total += channel_dropout(X, keep, rng)
    rel = np.abs(total / masks / X - 1.0).max()
    return [CheckResult("channel_dropout_expectation", masks, float(rel), 0.01)]


SUITES: dict[str, Callable[[], list[CheckResult]]] = {
    "symplectic": check_symplectic,
    "group_law": check_group_law,
    "closed_form": check_closed_form,
    "rope_reduction": check_rope_reduction,
    "relative_identity": check_relative_identity,
    "shift_invariance": check_shift_invariance,
    "basis_sign": check_basis_sign,
    "feasibility": check_feasibility_oracle,
    "warp_feasibility": check_oscillating_warp_feasibility,
    "flow_gradients": check_flow_gradients,
    "primitive_gradients": check_primitive_gradients,
    "model_gradients": check_model_gradients,
    "translation": check_translation_equivariance,
    "static_ablation": check_static_ablation,
    "channel_dropout": check_channel_dropout,
}


def run_all(seed: int = 0, suites=None) -> list[CheckResult]:
    """Run every suite; ``seed`` offsets each suite's default seed."""
    rows = []
    for name, fn in SUITES.items():
        if suites is not None and name not in suites:
            continue
        if name in ("warp_feasibility",):
            rows.extend(fn())
        else:
            default = fn.__defaults__[0]
            rows.extend(fn(default + seed))
    return rows


def write_report(path, rows: list[CheckResult]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for r in rows:
            fh.write(r.row() + "\n")
