"""Symplectic flows on 2-D subspaces and the rotary special case.

A band is a symmetric positive-definite Hamiltonian ``K = [[a, c], [c, b]]``
reached from unconstrained raw parameters.  Its generator ``A = J K`` squares
to ``-omega^2 I``, so ``exp(t A)`` has the closed form
``cos(omega t) I + sin(omega t)/omega A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc

J = np.array([[0.0, 1.0], [-1.0, 0.0]])
SINC_EPS = 1e-4


@dataclass(frozen=True)
class HamiltonianBand:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    @property
    def a(self) -> float:
        return math.exp(self.alpha)

    @property
    def b(self) -> float:
        return math.exp(self.beta)

    @property
    def rho(self) -> float:
        return math.tanh(self.gamma)

    @property
    def c(self) -> float:
        return self.rho * math.exp(0.5 * (self.alpha + self.beta))

    @property
    def omega(self) -> float:
        # sqrt(ab(1 - rho^2)) with 1 - tanh^2 = sech^2 to avoid cancellation
        return math.exp(0.5 * (self.alpha + self.beta)) / math.cosh(self.gamma)

    @classmethod
    def from_entries(cls, a: float, b: float, c: float = 0.0) -> "HamiltonianBand":
        """Band whose Hamiltonian has the given entries; requires ab > c^2."""
        if a <= 0 or b <= 0 or a * b - c * c <= 0:
            raise ValueError(f"Hamiltonian [[{a}, {c}], [{c}, {b}]] is not positive definite")
        return cls(math.log(a), math.log(b), math.atanh(c / math.sqrt(a * b)))

    @classmethod
    def rotary(cls, omega: float) -> "HamiltonianBand":
        return cls(math.log(omega), math.log(omega), 0.0)

    def hamiltonian(self) -> np.ndarray:
        return np.array([[self.a, self.c], [self.c, self.b]])


BandStack = Sequence[HamiltonianBand]


def generator(band: HamiltonianBand) -> np.ndarray:
    """``A = J K = [[c, b], [-a, -c]]``."""
    return np.array([[band.c, band.b], [-band.a, -band.c]])


def sinc_scale(omega: float, t: float) -> float:
    """``sin(omega t) / omega`` with a Taylor branch near ``omega t = 0``."""
    theta = omega * t
    if abs(theta) < SINC_EPS:
        th2 = theta * theta
        return t * (1.0 - th2 / 6.0 + th2 * th2 / 120.0)
    return math.sin(theta) / omega


def flow_matrix(band: HamiltonianBand, t: float) -> np.ndarray:
    omega = band.omega
    return math.cos(omega * t) * np.eye(2) + sinc_scale(omega, t) * generator(band)


def expm_oracle(matrix, t: float, order: int = 16) -> np.ndarray:
    """``exp(t M)`` by scaling and squaring of a truncated Taylor series."""
    m = t * np.asarray(matrix, dtype=np.float64)
    norm = np.abs(m).sum(axis=1).max()
    squarings = 0
    while norm > 0.5:
        norm /= 2.0
        squarings += 1
    m = m / (2.0 ** squarings)
    result = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for k in range(1, order + 1):
        term = term @ m / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def rope_flow(omega: float, t: float) -> np.ndarray:
    if omega <= 0:
        raise ValueError("rotary frequency must be positive")
    cs, sn = math.cos(omega * t), math.sin(omega * t)
    return np.array([[cs, sn], [-sn, cs]])


def _check_pairs(bands: BandStack, vector: np.ndarray) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1 or v.size % 2:
        raise ValueError(f"head vector must have even length, got shape {v.shape}")
    if v.size != 2 * len(bands):
        raise ValueError(f"head vector of length {v.size} needs {v.size // 2} bands, got {len(bands)}")
    return v


def apply_flow(bands: BandStack, vector, t: float) -> np.ndarray:
    """Multiply each consecutive pair of ``vector`` by its band's flow at ``t``."""
    v = _check_pairs(bands, vector)
    out = np.empty_like(v)
    for i, band in enumerate(bands):
        out[2 * i:2 * i + 2] = flow_matrix(band, t) @ v[2 * i:2 * i + 2]
    return out


def conjugate_key_flow(bands: BandStack, key, t: float) -> np.ndarray:
    """Per pair, ``J S(t) k``."""
    v = _check_pairs(bands, key)
    out = np.empty_like(v)
    for i, band in enumerate(bands):
        out[2 * i:2 * i + 2] = J @ flow_matrix(band, t) @ v[2 * i:2 * i + 2]
    return out


def stack_params(bands: BandStack) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.array([b.alpha for b in bands]), np.array([b.beta for b in bands]),
            np.array([b.gamma for b in bands]))


def rotary_frequencies(head_dim: int, base: float = 10000.0) -> np.ndarray:
    """Geometric rotary progression ``base^(-2i/d)``, one per pair."""
    if head_dim % 2:
        raise ValueError(f"head dimension must be even, got {head_dim}")
    return base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)


def init_bands(head_dim: int, base: float = 10000.0) -> list[HamiltonianBand]:
    return [HamiltonianBand.rotary(w) for w in rotary_frequencies(head_dim, base)]


def flow_tensor(x, clock, alpha, beta, gamma, conjugate: bool = False) -> nc.Tensor:
    """Differentiable block-diagonal flow over ``x``.

    ``x`` is ``(N, d)``, ``(H, N, d)`` or ``(B, H, N, d)``; ``clock`` is ``(N,)``
    or ``(B, N)``; band parameters are ``(d/2,)`` or ``(H, d/2)``.
    """
    x = nc.as_tensor(x)
    clock = nc.as_tensor(clock)
    params = [nc.as_tensor(p) for p in (alpha, beta, gamma)]
    shape = x.shape
    if x.ndim == 2:
        x = x.reshape(1, 1, *shape)
    elif x.ndim == 3:
        x = x.reshape(1, *shape)
    if clock.ndim == 1:
        clock = clock.reshape(1, clock.shape[0])
    params = [p.reshape(1, p.shape[0]) if p.ndim == 1 else p for p in params]
    out = nc.symplectic_flow(x, clock, *params, conjugate=conjugate)
    return out if out.shape == shape else out.reshape(shape)


# ---------------------------------------------------------------- feasibility oracle


@dataclass(frozen=True)
class Feasible:
    theta: float


@dataclass(frozen=True)
class Infeasible:
    witness: tuple[int, int]


def rope_feasibility_check(tau: Sequence[float], omega0: float, tol: float = 1e-12):
    """Decide whether one fixed rotary angle reproduces the warped phases.

    ``tau`` lists ``tau(1), ..., tau(N)``.  Under the non-aliasing premise a
    rotary angle exists iff all one-step phases ``omega0 * (tau(t+1) - tau(t))``
    coincide.  On failure the witness ``(t, t+1)`` names the first pair of
    consecutive increments (1-based) whose phases differ.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim != 1 or tau.size == 0:
        raise ValueError("tau must be a non-empty 1-D sequence")
    steps = np.diff(tau)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0)) + 1
        raise ValueError(f"tau is not strictly increasing at t={bad}")
    phases = omega0 * steps
    if np.any(np.abs(phases) >= math.pi):
        bad = int(np.argmax(np.abs(phases) >= math.pi)) + 1
        raise ValueError(f"non-aliasing violated: |omega0 * dtau({bad})| >= pi")
    if phases.size == 0:
        return Feasible(0.0)
    for t in range(phases.size - 1):
        if abs(phases[t + 1] - phases[t]) > tol:
            return Infeasible((t + 1, t + 2))
    return Feasible(float(phases[0]))
