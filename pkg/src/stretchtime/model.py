"""StretchTime forecaster: last-value residual, channel-value tokens, encoder stack, readout."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
import zipfile
from pathlib import Path

import numpy as np

from . import numcore as nc
from .attention import HeadParams, LayerParams, PEMode, encoder_layer
from .sype import rotary_frequencies
from .warp import IDENTITY_BIAS, WarpParams

INIT_STD = 0.02


@dataclass
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    channels: int = 3
    d_model: int = 64
    d_global: int = 0  # 0 -> d_model // 2
    n_layers: int = 1
    n_heads: int = 4
    pe_mode: str = "sype"
    warp_mode: str = "auto"
    use_mlp: bool = True
    dropout_rate: float = 0.1
    channel_dropout_min_keep: float = 0.5
    ff_mult: int = 4
    rope_base: float = 10000.0

    def __post_init__(self):
        self.validate()

    @property
    def seq_len(self) -> int:
        return self.lookback + self.horizon

    @property
    def global_dim(self) -> int:
        return self.d_global if self.d_global > 0 else self.d_model // 2

    @property
    def local_dim(self) -> int:
        return self.d_model - self.global_dim

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def mode(self) -> PEMode:
        return PEMode(self.pe_mode, self.warp_mode)

    def validate(self) -> None:
        for name in ("lookback", "horizon", "channels", "d_model", "n_layers", "n_heads", "ff_mult"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not 0 < self.global_dim < self.d_model:
            raise ValueError(f"d_global must lie strictly between 0 and d_model={self.d_model}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.head_dim % 2:
            raise ValueError(f"head dimension {self.head_dim} must be even")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 < self.channel_dropout_min_keep <= 1.0:
            raise ValueError("channel_dropout_min_keep must lie in (0, 1]")
        self.mode  # validates pe/warp names

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def param_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Ordered ``(name, shape, init)`` registry for every learnable tensor."""
    d, C, N = config.d_model, config.channels, config.seq_len
    H, dh = config.n_heads, config.head_dim
    ff = config.ff_mult * d
    mode = config.mode
    specs = [
        ("global_proj", (config.global_dim, C), "normal"),
        ("channel_basis", (C, config.local_dim), "normal"),
        ("pos_embed", (N, d), "normal"),
        ("chan_embed", (C, d), "normal"),
    ]
    for i in range(config.n_layers):
        p = f"layers.{i}."
        specs += [
            (p + "ln1.weight", (d,), "ones"),
            (p + "ln1.bias", (d,), "zeros"),
            (p + "attn.w_q", (H, dh, d), "normal"),
            (p + "attn.w_k", (H, dh, d), "normal"),
            (p + "attn.w_v", (H, dh, d), "normal"),
            (p + "attn.w_o", (d, H * dh), "residual"),
        ]
        if mode.pe == "sype":
            specs += [(p + "sype.alpha", (H, dh // 2), "band"),
                      (p + "sype.beta", (H, dh // 2), "band"),
                      (p + "sype.gamma", (H, dh // 2), "zeros")]
        if mode.pe != "none" and mode.adaptive:
            specs += [(p + "warp.weight", (d,), "zeros"), (p + "warp.bias", (1,), "warp_bias")]
        if config.use_mlp:
            specs += [
                (p + "ln2.weight", (d,), "ones"),
                (p + "ln2.bias", (d,), "zeros"),
                (p + "ff.w1", (ff, d), "normal"),
                (p + "ff.b1", (ff,), "zeros"),
                (p + "ff.w2", (d, ff), "residual"),
                (p + "ff.b2", (d,), "zeros"),
            ]
    specs += [
        ("final_ln.weight", (d,), "ones"),
        ("final_ln.bias", (d,), "zeros"),
        ("readout.weight", (d,), "zeros"),
        ("readout.bias", (1,), "zeros"),
    ]
    return specs


DECAY_INITS = ("normal", "residual")


def count_params(config: ModelConfig) -> int:
    config.validate()
    return int(sum(math.prod(shape) for _, shape, _ in param_specs(config)))


class StretchTimeParams:
    """Named learnable tensors plus typed views onto each encoder layer."""

    def __init__(self, config: ModelConfig, tensors: dict[str, nc.Tensor]):
        self.config = config
        self.tensors = tensors
        self.decay = {name for name, _, init in param_specs(config) if init in DECAY_INITS}

    def __getitem__(self, name: str) -> nc.Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def parameters(self) -> list[nc.Tensor]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors.items():
            if arrays[k].shape != t.shape:
                raise nc.ShapeError(f"parameter {k}: expected {t.shape}, got {arrays[k].shape}")
            t.data = np.array(arrays[k], dtype=np.float64)

    def layer(self, i: int) -> LayerParams:
        t = self.tensors
        p = f"layers.{i}."
        cfg = self.config
        freqs = None
        if cfg.pe_mode == "rope":
            freqs = np.tile(rotary_frequencies(cfg.head_dim, cfg.rope_base), (cfg.n_heads, 1))
        heads = HeadParams(t[p + "attn.w_q"], t[p + "attn.w_k"], t[p + "attn.w_v"],
                           t.get(p + "sype.alpha"), t.get(p + "sype.beta"), t.get(p + "sype.gamma"),
                           freqs)
        warp = None
        if p + "warp.weight" in t:
            warp = WarpParams(t[p + "warp.weight"], t[p + "warp.bias"])
        return LayerParams(t[p + "ln1.weight"], t[p + "ln1.bias"], heads, t[p + "attn.w_o"],
                           t.get(p + "ln2.weight"), t.get(p + "ln2.bias"),
                           t.get(p + "ff.w1"), t.get(p + "ff.b1"),
                           t.get(p + "ff.w2"), t.get(p + "ff.b2"), warp)


def init_params(config: ModelConfig, seed: int = 2026) -> StretchTimeParams:
    """GPT-2 style init; bands start on the rotary frequencies, warp at the identity clock."""
    rng = np.random.default_rng(seed)
    band = np.log(np.tile(rotary_frequencies(config.head_dim, config.rope_base), (config.n_heads, 1)))
    residual_std = INIT_STD / math.sqrt(2 * config.n_layers)
    tensors = {}
    for name, shape, init in param_specs(config):
        if init == "normal":
            data = rng.normal(0.0, INIT_STD, size=shape)
        elif init == "residual":
            data = rng.normal(0.0, residual_std, size=shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "band":
            data = band.copy()
        elif init == "warp_bias":
            data = np.full(shape, IDENTITY_BIAS)
        else:
            data = np.zeros(shape)
        tensors[name] = nc.Tensor(data, requires_grad=True, name=name)
    return StretchTimeParams(config, tensors)


# ---------------------------------------------------------------- data-side ops


def center_last_value(X) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the final lookback row; returns ``(X_diff, reference)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2 or X.shape[-2] == 0:
        raise ValueError(f"center_last_value needs at least one row, got shape {X.shape}")
    ref = X[..., -1:, :]
    return X - ref, ref.copy()


def channel_keep_mask(channels: int, keep_ratio: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
    kept = rng.random(channels) < keep_ratio
    return kept / keep_ratio


def channel_dropout(X, keep_ratio: float, rng: np.random.Generator | None = None,
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Zero a random channel subset and rescale survivors by ``1/keep_ratio``.

    Pass ``mask`` as a boolean keep-vector to fix the subset.
    """
    X = np.asarray(X, dtype=np.float64)
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
    if mask is None:
        if rng is None:
            raise ValueError("channel_dropout needs either rng or mask")
        scale = channel_keep_mask(X.shape[-1], keep_ratio, rng)
    else:
        scale = np.asarray(mask, dtype=bool) / keep_ratio
    return X * scale


@dataclass
class ForwardMasks:
    """Pre-sampled training randomness for one batch."""

    channel: np.ndarray  # (B, C) keep scales
    layers: list[dict] = field(default_factory=list)  # per layer {"attn", "ffn"}: (B*C, N, d)


def sample_masks(config: ModelConfig, rng: np.random.Generator, batch: int) -> ForwardMasks:
    C = config.channels
    keep = rng.uniform(config.channel_dropout_min_keep, 1.0, size=batch)
    channel = np.stack([channel_keep_mask(C, r, rng) for r in keep])
    shape = (batch * C, config.seq_len, config.d_model)
    p = config.dropout_rate
    layers = []
    for _ in range(config.n_layers):
        entry = {}
        for key in ("attn", "ffn") if config.use_mlp else ("attn",):
            entry[key] = (rng.random(shape) >= p) / (1.0 - p) if p > 0 else None
        layers.append(entry)
    return ForwardMasks(channel, layers)


def _token_block(X_diff: np.ndarray, params: StretchTimeParams) -> nc.Tensor:
    """All channels' token sequences ``(B, C, N, d)`` for centred input ``(B, L, C)``."""
    cfg = params.config
    B, L, C = X_diff.shape
    if L != cfg.lookback or C != cfg.channels:
        raise nc.ShapeError(f"tokenize: input {X_diff.shape} does not match L={cfg.lookback}, C={cfg.channels}")
    dg, dl, d, T = cfg.global_dim, cfg.local_dim, cfg.d_model, cfg.horizon
    s = nc.matmul(X_diff, nc.transpose(params["global_proj"]))  # (B, L, dg)
    s = nc.add(s.reshape(B, 1, L, dg), np.zeros((B, C, L, dg)))
    values = np.ascontiguousarray(X_diff.transpose(0, 2, 1))[..., None]  # (B, C, L, 1)
    local = nc.mul(values, params["channel_basis"].reshape(1, C, 1, dl))
    past = nc.concat([s, local], axis=-1)
    full = nc.concat([past, np.zeros((B, C, T, d))], axis=2)
    pos = nc.embedding(params["pos_embed"], np.arange(cfg.seq_len))
    chan = nc.embedding(params["chan_embed"], np.arange(C)).reshape(C, 1, d)
    return full + pos + chan


def tokenize(X_diff, target_channel: int, params: StretchTimeParams) -> nc.Tensor:
    """Token sequence ``(N, d_model)`` for one target channel of ``X_diff (L, C)``."""
    X_diff = np.asarray(X_diff, dtype=np.float64)
    if not 0 <= target_channel < params.config.channels:
        raise ValueError(f"target channel {target_channel} out of range")
    block = _token_block(X_diff[None], params)
    return nc.slice_(block, (0, target_channel)).reshape(params.config.seq_len, params.config.d_model)


def forward(X, params: StretchTimeParams, masks: ForwardMasks | None = None) -> nc.Tensor:
    """Forecast ``(T, C)`` from ``(L, C)`` (or batched ``(B, T, C)`` from ``(B, L, C)``)."""
    cfg = params.config
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    B = X.shape[0]
    X_diff, ref = center_last_value(X)
    if masks is not None:
        X_diff = X_diff * masks.channel[:, None, :]
    tokens = _token_block(X_diff, params)
    C, N, d = cfg.channels, cfg.seq_len, cfg.d_model
    h = tokens.reshape(B * C, N, d)
    mode = cfg.mode
    for i in range(cfg.n_layers):
        layer_masks = masks.layers[i] if masks is not None else None
        h = encoder_layer(h, None, params.layer(i), mode, cfg.use_mlp, layer_masks)
    h = nc.layer_norm(h, params["final_ln.weight"], params["final_ln.bias"])
    future = nc.slice_(h, (slice(None), slice(cfg.lookback, None)))
    y = nc.matmul(future, params["readout.weight"].reshape(d, 1)) + params["readout.bias"]
    y = nc.transpose(y.reshape(B, C, cfg.horizon), (0, 2, 1)) + ref
    return y.reshape(cfg.horizon, C) if single else y


def predict(X, params: StretchTimeParams, batch_size: int = 64) -> np.ndarray:
    """Inference-mode forecasts as a plain array, evaluated in chunks."""
    X = np.asarray(X, dtype=np.float64)
    outs = [forward(X[i:i + batch_size], _frozen(params)).data for i in range(0, len(X), batch_size)]
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, params.config.horizon, params.config.channels))


def _frozen(params: StretchTimeParams) -> StretchTimeParams:
    return StretchTimeParams(params.config, {k: nc.Tensor(t.data) for k, t in params.items()})


# ---------------------------------------------------------------- checkpoints

CONFIG_KEY = "__config__"
META_KEY = "__meta__"


def save_checkpoint(path, params: StretchTimeParams, meta: dict | None = None) -> None:
    """Write an ``.npz`` with one array per parameter plus JSON config/metadata."""
    arrays = {f"param/{k}": t.data for k, t in params.items()}
    arrays[CONFIG_KEY] = np.array(json.dumps(params.config.to_dict(), sort_keys=True))
    arrays[META_KEY] = np.array(json.dumps(meta or {}, sort_keys=True))
    # np.savez stamps the wall clock into the archive; a fixed date keeps reruns byte-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path) -> tuple[StretchTimeParams, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        config = ModelConfig.from_dict(json.loads(str(z[CONFIG_KEY])))
        meta = json.loads(str(z[META_KEY])) if META_KEY in z.files else {}
        arrays = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    params = init_params(config)
    expected = set(params.tensors)
    if set(arrays) != expected:
        raise ValueError(f"checkpoint parameters {sorted(set(arrays) ^ expected)} do not match its config")
    params.load_arrays(arrays)
    return params, meta
