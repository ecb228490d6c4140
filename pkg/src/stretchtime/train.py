"""MSE training with AdamW, cosine annealing, gradient accumulation and early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .model import StretchTimeParams, forward, predict, sample_masks

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    effective_batch: int = 32
    physical_batch: int = 8
    max_epochs: int = 10
    patience: int = 12
    seed: int = 2026
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_floor: float = -1.0  # negative -> learning_rate / 100
    train_stride: int = 1
    eval_stride: int = 1
    eval_batch: int = 16

    def __post_init__(self):
        self.validate()

    @property
    def accumulation(self) -> int:
        return self.effective_batch // self.physical_batch

    @property
    def floor(self) -> float:
        return self.learning_rate / 100 if self.lr_floor < 0 else self.lr_floor

    def validate(self) -> None:
        if self.physical_batch < 1 or self.effective_batch < 1:
            raise ValueError("batch sizes must be positive")
        if self.effective_batch % self.physical_batch:
            raise ValueError(f"effective_batch={self.effective_batch} is not a multiple of "
                             f"physical_batch={self.physical_batch}")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.train_stride < 1 or self.eval_stride < 1 or self.eval_batch < 1:
            raise ValueError("strides and eval_batch must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def mse(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mse: shapes {pred.shape} and {truth.shape} differ")
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mae: shapes {pred.shape} and {truth.shape} differ")
    return float(np.mean(np.abs(pred - truth)))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState,
               config: TrainConfig, lr: float | None = None, decay: set[str] | None = None) -> None:
    """One in-place AdamW update with bias correction and decoupled weight decay.

    ``decay`` names the parameters that receive weight decay (all when None).
    """
    lr = config.learning_rate if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {theta.shape}")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay and (decay is None or name in decay):
            theta *= 1.0 - lr * config.weight_decay
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


def cosine_lr(step: int, total: int, lr_max: float, lr_floor: float) -> float:
    if total <= 0 or step >= total:
        return lr_floor
    return lr_floor + 0.5 * (lr_max - lr_floor) * (1.0 + math.cos(math.pi * step / total))


def evaluate(params: StretchTimeParams, X: np.ndarray, Y: np.ndarray, batch: int = 16,
             horizon: int | None = None) -> tuple[float, float]:
    pred = predict(X, params, batch_size=batch)
    if horizon is not None:
        pred, Y = pred[:, :horizon], Y[:, :horizon]
    return mse(pred, Y), mae(pred, Y)


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample randomness so masks do not depend on how batches are split."""
    return np.random.default_rng([seed, epoch, index])


def batch_masks(params: StretchTimeParams, seed: int, epoch: int, indices) -> "object":
    cfg = params.config
    per = [sample_masks(cfg, sample_rng(seed, epoch, int(i)), 1) for i in indices]
    merged = per[0]
    merged.channel = np.concatenate([m.channel for m in per], axis=0)
    for layer_idx, entry in enumerate(merged.layers):
        for key in entry:
            if entry[key] is not None:
                entry[key] = np.concatenate([m.layers[layer_idx][key] for m in per], axis=0)
    return merged


def accumulate_gradients(params: StretchTimeParams, X: np.ndarray, Y: np.ndarray, indices,
                         physical_batch: int, seed: int, epoch: int, train: bool = True) -> float:
    """Sum micro-batch gradients of the step-mean MSE into ``.grad``; returns the loss."""
    n = len(indices)
    total = 0.0
    for start in range(0, n, physical_batch):
        idx = indices[start:start + physical_batch]
        masks = batch_masks(params, seed, epoch, idx) if train else None
        out = forward(X[idx], params, masks)
        diff = out - Y[idx]
        loss = nc.scale(nc.mean(diff * diff), len(idx) / n)
        nc.backward(loss)
        total += loss.item()
    return total


@dataclass
class TrainResult:
    best: dict[str, np.ndarray]
    best_epoch: int
    history: list[dict]
    params: StretchTimeParams


HISTORY_COLUMNS = ("epoch", "train_loss", "val_mse", "val_mae", "lr")


def train_loop(params: StretchTimeParams, train_xy: tuple[np.ndarray, np.ndarray],
               val_xy: tuple[np.ndarray, np.ndarray], config: TrainConfig) -> TrainResult:
    """Train in place; ``params`` end holding the best-validation weights."""
    X, Y = train_xy
    Xv, Yv = val_xy
    n = len(X)
    steps_per_epoch = max(1, math.ceil(n / config.effective_batch))
    total_steps = config.max_epochs * steps_per_epoch
    state = OptimizerState()
    history: list[dict] = []
    best = params.arrays()
    best_mse = math.inf
    best_epoch = 0
    stale = 0
    step = 0
    names = list(params.tensors)
    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        losses = []
        lr = cosine_lr(step, total_steps, config.learning_rate, config.floor)
        for s in range(steps_per_epoch):
            idx = order[s * config.effective_batch:(s + 1) * config.effective_batch]
            if len(idx) == 0:
                continue
            lr = cosine_lr(step, total_steps, config.learning_rate, config.floor)
            params.zero_grad()
            loss = accumulate_gradients(params, X, Y, idx, config.physical_batch, config.seed, epoch)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {s}")
            grads = {k: params[k].grad for k in names if params[k].grad is not None}
            weights = {k: params[k].data for k in names}
            adamw_step(weights, grads, state, config, lr=lr, decay=params.decay)
            losses.append(loss)
            step += 1
        val_mse, val_mae = evaluate(params, Xv, Yv, config.eval_batch)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else math.nan,
               "val_mse": val_mse, "val_mae": val_mae, "lr": lr}
        history.append(row)
        log.info("epoch %d train %.5f val_mse %.5f val_mae %.5f", epoch, row["train_loss"], val_mse, val_mae)
        if not math.isfinite(val_mse):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        if val_mse < best_mse:
            best_mse, best_epoch, stale = val_mse, epoch, 0
            best = params.arrays()
        else:
            stale += 1
            if stale >= config.patience:
                break
    params.load_arrays(best)
    params.zero_grad()
    return TrainResult(best, best_epoch, history, params)


def write_history(path, history: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_COLUMNS[1:]])
