import numpy as np
import pytest

from stretchtime import numcore as nc
from stretchtime.model import (ModelConfig, center_last_value, channel_dropout, count_params, forward,
                               init_params, load_checkpoint, param_specs, predict, sample_masks,
                               save_checkpoint, tokenize)
from stretchtime.verify import model_gradcheck, perturbed_params


def test_center_last_value_examples():
    X = np.array([[1.0], [2.0], [3.0]])
    diff, ref = center_last_value(X)
    assert np.array_equal(diff[:, 0], [-2, -1, 0]) and ref[0, 0] == 3
    assert np.array_equal(center_last_value(np.full((4, 2), 7.0))[0], np.zeros((4, 2)))
    with pytest.raises(ValueError):
        center_last_value(np.zeros((0, 2)))


def test_center_last_value_final_row_is_zero(rng):
    diff, _ = center_last_value(rng.normal(size=(5, 9, 3)))
    assert np.all(diff[:, -1] == 0)


def test_channel_dropout_examples(rng):
    X = rng.normal(size=(6, 4))
    assert np.array_equal(channel_dropout(X, 1.0, rng), X)
    out = channel_dropout(X, 0.5, mask=np.array([True, False, True, False]))
    assert np.array_equal(out[:, [0, 2]], 2 * X[:, [0, 2]]) and np.all(out[:, [1, 3]] == 0)
    for bad in (0.0, 1.5, -0.2):
        with pytest.raises(ValueError):
            channel_dropout(X, bad, rng)


def test_channel_dropout_expectation(rng):
    X = rng.uniform(0.5, 2.0, size=(3, 4))
    keep = rng.random((100_000, 4)) < 0.7
    total = sum(channel_dropout(X, 0.7, mask=m) for m in keep[:100_000])
    assert np.abs(total / 100_000 / X - 1).max() <= 0.01


def test_sample_masks_shapes(tiny_config, rng):
    m = sample_masks(tiny_config, rng, 3)
    assert m.channel.shape == (3, 2)
    assert m.layers[0]["attn"].shape == (6, 12, 8)
    keep = m.channel > 0
    assert np.all((m.channel[keep] >= 1.0) & (m.channel[keep] <= 2.0))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(d_model=12, n_heads=4)  # odd head dim
    with pytest.raises(ValueError):
        ModelConfig(d_model=0)
    with pytest.raises(ValueError):
        ModelConfig(n_layers=0)
    with pytest.raises(ValueError):
        ModelConfig(pe_mode="alibi")
    with pytest.raises(ValueError):
        ModelConfig(channel_dropout_min_keep=0.0)
    assert ModelConfig.from_dict(ModelConfig(d_model=32).to_dict()) == ModelConfig(d_model=32)


def test_tokenize_examples(tiny_config):
    p = init_params(tiny_config, 0)
    for name in ("pos_embed", "chan_embed"):
        p[name].data[:] = 0
    assert np.all(tokenize(np.zeros((8, 2)), 1, p).data == 0)
    p = init_params(tiny_config, 0)
    X = np.random.default_rng(0).normal(size=(8, 2))
    a, b = tokenize(X, 0, p).data, tokenize(2 * X, 0, p).data
    fixed = p["pos_embed"].data + p["chan_embed"].data[0]
    assert np.allclose(b - fixed, 2 * (a - fixed), atol=1e-15)
    assert np.array_equal(a[8:], fixed[8:])
    with pytest.raises(ValueError):
        tokenize(X, 2, p)


def test_zero_params_give_persistence(tiny_config, rng):
    p = init_params(tiny_config, 0)
    for t in p.parameters():
        t.data[:] = 0
    X = rng.normal(size=(8, 2))
    assert np.array_equal(forward(X, p).data, np.repeat(X[-1:], 4, axis=0))


def test_init_model_is_persistence(tiny_config, rng):
    X = rng.normal(size=(3, 8, 2))
    assert np.array_equal(forward(X, init_params(tiny_config, 5)).data, np.repeat(X[:, -1:], 4, axis=1))


@pytest.mark.parametrize("pe", ["sype", "rope", "none"])
def test_translation_equivariance(rng, pe):
    cfg = ModelConfig(lookback=8, horizon=4, channels=2, d_model=8, n_heads=2, pe_mode=pe)
    p = perturbed_params(cfg, 3)
    X = rng.normal(size=(2, 8, 2))
    kappa = np.array([12.5, -40.0])
    assert np.abs(forward(X + kappa, p).data - forward(X, p).data - kappa).max() <= 1e-8


def test_sype_init_matches_static_clock(rng):
    base = dict(lookback=8, horizon=4, channels=2, d_model=8, n_heads=2)
    pa = init_params(ModelConfig(warp_mode="adaptive", **base), 0)
    ps = init_params(ModelConfig(warp_mode="identity", **base), 0)
    for name, t in ps.items():
        t.data = rng.normal(size=t.shape) if "sype.gamma" not in name else t.data
        pa[name].data = t.data.copy()
    X = rng.normal(size=(3, 8, 2))
    assert np.array_equal(forward(X, pa).data, forward(X, ps).data)


def test_zero_global_projection_decouples_channels(tiny_config, rng):
    p = perturbed_params(tiny_config, 1)
    p["global_proj"].data[:] = 0
    X = rng.normal(size=(8, 2))
    Y = X.copy()
    Y[:, 1] += rng.normal(size=8)
    a, b = forward(X, p).data, forward(Y, p).data
    assert np.array_equal(a[:, 0], b[:, 0]) and not np.allclose(a[:, 1], b[:, 1])
    p = perturbed_params(tiny_config, 1)
    assert not np.allclose(forward(X, p).data[:, 0], forward(Y, p).data[:, 0])


def test_forward_is_deterministic(tiny_config, rng):
    X = rng.normal(size=(2, 8, 2))
    a = forward(X, perturbed_params(tiny_config, 2)).data
    b = forward(X, perturbed_params(tiny_config, 2)).data
    assert a.tobytes() == b.tobytes()


def test_masks_change_output_and_batch_shapes(tiny_config, rng):
    p = perturbed_params(tiny_config, 2)
    X = rng.normal(size=(3, 8, 2))
    m = sample_masks(tiny_config, rng, 3)
    assert forward(X, p, m).shape == (3, 4, 2)
    assert forward(X[0], p).shape == (4, 2)
    assert np.allclose(predict(X, p, batch_size=2), forward(X, p).data, atol=1e-14)
    with pytest.raises(nc.ShapeError):
        forward(rng.normal(size=(7, 2)), p)


def test_count_params_matches_registry_and_hand_tally():
    cfg = ModelConfig()
    assert count_params(cfg) == sum(int(np.prod(s)) for _, s, _ in param_specs(cfg))
    d, C, L, T, H, dh = 64, 3, 96, 96, 4, 16
    per_layer = (2 * d + 3 * H * dh * d + d * H * dh + 3 * H * dh // 2 + d + 1
                 + 2 * d + 4 * d * d + 4 * d + 4 * d * d + d)
    total = 32 * C + C * 32 + (L + T) * d + C * d + per_layer + 2 * d + d + 1
    assert count_params(cfg) == total


def test_count_params_layer_additivity():
    one = count_params(ModelConfig(n_layers=1))
    two = count_params(ModelConfig(n_layers=2))
    four = count_params(ModelConfig(n_layers=4))
    assert four - two == 2 * (two - one)


def test_count_params_no_mlp_and_rope():
    full = count_params(ModelConfig())
    assert count_params(ModelConfig(use_mlp=False)) < full
    assert count_params(ModelConfig(pe_mode="rope")) < full


@pytest.mark.parametrize("pe", ["sype", "rope", "none"])
def test_model_gradcheck(pe):
    assert model_gradcheck(pe, seed=0) <= 1e-4


def test_checkpoint_roundtrip(tmp_path, tiny_config, rng):
    p = perturbed_params(tiny_config, 4)
    save_checkpoint(tmp_path / "a.npz", p, {"note": "x"})
    save_checkpoint(tmp_path / "b.npz", p, {"note": "x"})
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    q, meta = load_checkpoint(tmp_path / "a.npz")
    assert meta == {"note": "x"} and q.config == tiny_config
    X = rng.normal(size=(2, 8, 2))
    assert np.array_equal(predict(X, p), predict(X, q))
