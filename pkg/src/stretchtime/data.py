"""Warped seasonal AR(1) generator, CSV ingestion, chronological splits and windows.

Noise comes from numpy's PCG64 bit generator (``numpy.random.default_rng``)
drawing standard normals with the ziggurat method, so a seed fixes the series
on every platform numpy supports.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class SyntheticConfig:
    length: int = 6000
    channels: int = 3
    phi: float = 0.9
    amplitude: float = 1.0
    omega0: float = 2 * math.pi / 24
    noise_std: float = 0.1
    warp_amplitude: float = 0.5
    warp_period: float = 500.0
    phases: tuple[float, ...] | None = None  # default 2*pi*c/C
    seed: int = 2026

    def __post_init__(self):
        if self.phases is not None:
            self.phases = tuple(float(p) for p in self.phases)
        self.validate()

    def validate(self) -> None:
        if self.length < 1 or self.channels < 1:
            raise ValueError("length and channels must be positive")
        if not abs(self.phi) < 1:
            raise ValueError(f"|phi| must be < 1, got {self.phi}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0 <= self.warp_amplitude < 1:
            raise ValueError(f"warp_amplitude must lie in [0, 1), got {self.warp_amplitude}")
        if self.warp_period < 2:
            raise ValueError(f"warp_period must be at least 2, got {self.warp_period}")
        if self.phases is not None and len(self.phases) != self.channels:
            raise ValueError(f"{len(self.phases)} phases given for {self.channels} channels")

    def channel_phases(self) -> np.ndarray:
        if self.phases is not None:
            return np.array(self.phases)
        return 2 * math.pi * np.arange(self.channels) / self.channels


def oscillating_warp(t, warp_amplitude: float, period: float):
    """``tau(t) = sum_{i=0}^{t} (1 + A sin(2 pi i / P))``; ``t`` may be an int or array."""
    if not 0 <= warp_amplitude < 1:
        raise ValueError(f"warp amplitude must lie in [0, 1), got {warp_amplitude}")
    t_arr = np.asarray(t)
    top = int(t_arr.max()) if t_arr.size else 0
    i = np.arange(top + 1, dtype=np.float64)
    tau = np.cumsum(1.0 + warp_amplitude * np.sin(2 * math.pi * i / period))
    out = tau[t_arr]
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SeriesDataset:
    values: np.ndarray  # (length, C), raw
    bounds: tuple[int, int] | None = None  # train end, val end
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    columns: list[str] = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def standardized(self) -> np.ndarray:
        if self.mean is None:
            raise ValueError("dataset has not been split; no train statistics")
        return (self.values - self.mean) / self.std

    def segment(self, name: str) -> np.ndarray:
        if self.bounds is None:
            raise ValueError("dataset has not been split")
        a, b = self.bounds
        z = self.standardized
        return {"train": z[:a], "val": z[a:b], "test": z[b:]}[name]


def generate_warped_seasonal(config: SyntheticConfig) -> SeriesDataset:
    config.validate()
    n, C = config.length, config.channels
    tau = oscillating_warp(np.arange(n), config.warp_amplitude, config.warp_period)
    rng = np.random.default_rng(config.seed)
    noise = config.noise_std * rng.standard_normal((n, C))
    phases = config.channel_phases()
    season = config.amplitude * np.sin(config.omega0 * (np.reshape(tau, (n, 1)) + phases[None, :]))
    x = np.empty((n, C))
    x[0] = season[0] + noise[0]
    for t in range(1, n):
        x[t] = config.phi * x[t - 1] + season[t] + noise[t]
    return SeriesDataset(x, columns=[f"c{c}" for c in range(C)])


def load_csv(path) -> SeriesDataset:
    """Numeric CSV with a header; a leading ``date`` column is dropped."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        skip = 1 if header and header[0].strip().lower() == "date" else 0
        columns = [h.strip() for h in header[skip:]]
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
            parsed = []
            for c, cell in enumerate(row[skip:], start=skip + 1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: cannot parse {cell!r} at (row {r}, column {c})") from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return SeriesDataset(np.array(rows, dtype=np.float64), columns=columns)


def write_csv(path, values: np.ndarray, columns: Sequence[str] | None = None) -> None:
    values = np.asarray(values, dtype=np.float64)
    columns = list(columns) if columns else [f"c{c}" for c in range(values.shape[1])]
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class WindowSpec:
    lookback: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1 or self.stride < 1:
            raise ValueError("lookback, horizon and stride must be at least 1")


def split(dataset: SeriesDataset, ratios: Sequence[float] = (0.7, 0.1, 0.2),
          min_segment: int = 1) -> SeriesDataset:
    """Chronological train/val/test split with train-only standardization."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positive fractions summing to 1, got {ratios}")
    n = dataset.length
    a = int(round(n * ratios[0]))
    b = int(round(n * (ratios[0] + ratios[1])))
    for name, size in (("train", a), ("val", b - a), ("test", n - b)):
        if size < min_segment:
            raise ValueError(f"{name} segment has {size} rows, needs at least {min_segment}")
    train = dataset.values[:a]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    if np.any(std <= 0):
        raise ValueError(f"constant channel(s) in training segment: {np.flatnonzero(std <= 0).tolist()}")
    return replace(dataset, bounds=(a, b), mean=mean, std=std)


def window_count(length: int, spec: WindowSpec) -> int:
    span = spec.lookback + spec.horizon
    return 0 if length < span else (length - span) // spec.stride + 1


def windows(segment: np.ndarray, spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sliding ``(X, Y)`` pairs stacked as ``(K, L, C)`` and ``(K, T, C)`` copies."""
    segment = np.asarray(segment, dtype=np.float64)
    k = window_count(len(segment), spec)
    if k == 0:
        raise ValueError(f"segment of {len(segment)} rows is shorter than lookback+horizon="
                         f"{spec.lookback + spec.horizon}")
    starts = np.arange(k) * spec.stride
    L, T = spec.lookback, spec.horizon
    X = np.stack([segment[s:s + L] for s in starts])
    Y = np.stack([segment[s + L:s + L + T] for s in starts])
    return X, Y


def synthetic_from_dict(d: dict) -> SyntheticConfig:
    names = {f.name for f in fields(SyntheticConfig)}
    return SyntheticConfig(**{k: v for k, v in d.items() if k in names})


def synthetic_to_dict(cfg: SyntheticConfig) -> dict:
    return asdict(cfg)
