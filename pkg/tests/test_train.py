import math

import numpy as np
import pytest

from stretchtime import numcore as nc
from stretchtime.model import init_params, predict
from stretchtime.train import (OptimizerState, TrainConfig, TrainingDiverged, accumulate_gradients,
                               adamw_step, cosine_lr, mae, mse, train_loop, write_history)


def test_metrics_examples():
    y = np.arange(6.0).reshape(3, 2)
    assert mse(y, y) == 0 and mae(y, y) == 0
    assert mse(y + 2, y) == 4 and mae(y + 2, y) == 2
    assert mse([1.0, -1.0], [0.0, 0.0]) == 1 and mae([1.0, -1.0], [0.0, 0.0]) == 1
    with pytest.raises(ValueError):
        mse(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        mae(np.zeros(2), np.zeros(3))


def test_adamw_zero_gradient_no_decay():
    cfg = TrainConfig(weight_decay=0.0)
    theta = {"w": np.array([1.0, -2.0])}
    adamw_step(theta, {"w": np.zeros(2)}, OptimizerState(), cfg, lr=1e-3)
    assert np.array_equal(theta["w"], [1.0, -2.0])


def test_adamw_first_step_hand_value():
    cfg = TrainConfig(weight_decay=0.0)
    theta = {"w": np.array([1.0])}
    state = OptimizerState()
    adamw_step(theta, {"w": np.array([1.0])}, state, cfg, lr=1e-3)
    assert theta["w"][0] == pytest.approx(1 - 1e-3 / (1 + 1e-8), abs=1e-15)
    assert state.step == 1 and state.m["w"].shape == (1,)


def test_adamw_decoupled_decay():
    cfg = TrainConfig(weight_decay=0.1)
    theta = {"w": np.array([2.0, -3.0])}
    adamw_step(theta, {"w": np.zeros(2)}, OptimizerState(), cfg, lr=1e-3)
    assert np.allclose(theta["w"], np.array([2.0, -3.0]) * (1 - 1e-4), rtol=0, atol=1e-15)


def test_adamw_decay_only_listed_parameters():
    cfg = TrainConfig(weight_decay=0.1)
    theta = {"w": np.ones(2), "b": np.ones(2)}
    adamw_step(theta, {}, OptimizerState(), cfg, lr=1e-3, decay={"w"})
    assert np.all(theta["b"] == 1) and np.all(theta["w"] < 1)


def test_adamw_rejects_non_finite_gradient():
    with pytest.raises(FloatingPointError, match="'layers.0.w'"):
        adamw_step({"layers.0.w": np.ones(2)}, {"layers.0.w": np.array([1.0, np.nan])},
                   OptimizerState(), TrainConfig())


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1e-3, 1e-5) == 1e-3
    assert cosine_lr(100, 100, 1e-3, 1e-5) == 1e-5
    assert cosine_lr(50, 100, 1e-3, 1e-5) == pytest.approx((1e-3 + 1e-5) / 2, rel=1e-12)
    assert cosine_lr(150, 100, 1e-3, 1e-5) == 1e-5
    lrs = [cosine_lr(s, 40, 1.0, 0.01) for s in range(41)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_train_config_invariants():
    cfg = TrainConfig(effective_batch=32, physical_batch=8)
    assert cfg.accumulation * cfg.physical_batch == cfg.effective_batch
    assert cfg.floor == pytest.approx(cfg.learning_rate / 100)
    with pytest.raises(ValueError):
        TrainConfig(effective_batch=30, physical_batch=8)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def _data(rng, n=32, cfg=None):
    X = rng.normal(size=(n, 8, 2))
    Y = X[:, -1:, :] + 0.5 * rng.normal(size=(n, 4, 2))
    return X, Y


def test_accumulation_equivalence(tiny_config, rng):
    X, Y = _data(rng)
    grads, losses = [], []
    for physical in (8, 32):
        p = init_params(tiny_config, 0)
        for t in p.parameters():
            t.data = t.data + 0.1 * np.random.default_rng(3).normal(size=t.shape)
        p.zero_grad()
        losses.append(accumulate_gradients(p, X, Y, np.arange(32), physical, 2026, 1))
        grads.append({k: t.grad.copy() for k, t in p.items()})
    assert abs(losses[0] - losses[1]) <= 1e-12
    assert max(np.abs(grads[0][k] - grads[1][k]).max() for k in grads[0]) <= 1e-12


def test_first_optimizer_step_equivalence(tiny_config, rng):
    X, Y = _data(rng)
    finals = []
    for physical in (8, 32):
        p = init_params(tiny_config, 0)
        train_loop(p, (X, Y), (X[:4], Y[:4]), TrainConfig(max_epochs=1, physical_batch=physical,
                                                          learning_rate=1e-3))
        finals.append(p.arrays())
    assert max(np.abs(finals[0][k] - finals[1][k]).max() for k in finals[0]) <= 1e-12


def test_same_seed_identical_history(tiny_config, rng, tmp_path):
    X, Y = _data(rng, 40)
    runs = []
    for _ in range(2):
        p = init_params(tiny_config, 0)
        res = train_loop(p, (X, Y), (X[:8], Y[:8]), TrainConfig(max_epochs=3, learning_rate=1e-3,
                                                                effective_batch=16, physical_batch=8))
        path = tmp_path / f"h{len(runs)}.csv"
        write_history(path, res.history)
        runs.append((path.read_bytes(), p.arrays()))
    assert runs[0][0] == runs[1][0]
    assert all(runs[0][1][k].tobytes() == runs[1][1][k].tobytes() for k in runs[0][1])
    assert runs[0][0].startswith(b"epoch,train_loss,val_mse,val_mae,lr\n")


def test_early_stopping_patience_one(tiny_config, rng):
    X, Y = _data(rng)
    p = init_params(tiny_config, 0)
    res = train_loop(p, (X, Y), (X[:4], Y[:4]), TrainConfig(max_epochs=5, patience=1, learning_rate=1e-12))
    assert len(res.history) == 2 and res.best_epoch == 1


def test_early_stopping_restores_best(tiny_config, rng):
    X, Y = _data(rng, 32)
    Xv, Yv = _data(rng, 8)
    p = init_params(tiny_config, 0)
    res = train_loop(p, (X, Y), (Xv, Yv), TrainConfig(max_epochs=6, patience=6, learning_rate=3e-2,
                                                      effective_batch=8, physical_batch=8))
    best = min(res.history, key=lambda r: r["val_mse"])
    assert res.best_epoch == best["epoch"]
    assert mse(predict(Xv, p), Yv) == best["val_mse"]


@pytest.mark.filterwarnings("ignore:invalid value")
def test_divergence_is_reported(tiny_config, rng):
    X, Y = _data(rng)
    Y[3, 0, 0] = np.inf
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train_loop(init_params(tiny_config, 0), (X, Y), (X[:4], Y[:4]), TrainConfig(max_epochs=1))


def test_zero_epochs_returns_init(tiny_config, rng):
    X, Y = _data(rng)
    p = init_params(tiny_config, 0)
    before = p.arrays()
    res = train_loop(p, (X, Y), (X[:4], Y[:4]), TrainConfig(max_epochs=0))
    assert res.history == [] and all(np.array_equal(before[k], p[k].data) for k in before)
