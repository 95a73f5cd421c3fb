"""Patch Transformer encoder in numpy, forward and backward.

A channel's series is zero-padded to a multiple of ``patch_len``, cut into
patches, projected to ``d_model``, summed with sinusoidal positional
encodings and passed through post-norm encoder layers
(self-attention -> add & norm -> ReLU feedforward -> add & norm). The node
embedding is the mean over tokens of the last layer.

Parameters live in a flat ``dict[str, ndarray]``; :func:`param_names` gives
the canonical order used for checkpoints.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    patch_len: int = 25
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 1
    feedforward_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.patch_len < 1 or self.d_model < 1 or self.n_layers < 0 or self.feedforward_dim < 1:
            raise ValueError(f"invalid encoder sizes: {self}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


_LAYER_PARAMS = (
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b", "ln2_g", "ln2_b",
)


def param_names(cfg: EncoderConfig) -> list[str]:
    names = ["in_w", "in_b"]
    for layer in range(cfg.n_layers):
        names += [f"l{layer}.{p}" for p in _LAYER_PARAMS]
    return names


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.feedforward_dim
    shapes = {"in_w": (cfg.patch_len, d), "in_b": (d,)}
    per = {
        "wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,),
        "wv": (d, d), "bv": (d,), "wo": (d, d), "bo": (d,),
        "ln1_g": (d,), "ln1_b": (d,), "ff1_w": (d, f), "ff1_b": (f,),
        "ff2_w": (f, d), "ff2_b": (d,), "ln2_g": (d,), "ln2_b": (d,),
    }
    for layer in range(cfg.n_layers):
        for k, s in per.items():
            shapes[f"l{layer}.{k}"] = s
    return shapes


def init_params(cfg: EncoderConfig, rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights and biases; layer-norm gains 1, shifts 0."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    params = {}
    shapes = param_shapes(cfg)
    for name in param_names(cfg):
        shape = shapes[name]
        short = name.split(".")[-1]
        if short.endswith("_g"):
            params[name] = np.ones(shape)
        elif short.startswith("ln"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shapes[_weight_of(name)][0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def _weight_of(name: str) -> str:
    prefix, _, short = name.rpartition(".")
    prefix = prefix + "." if prefix else ""
    if short.endswith("_b"):
        return prefix + short[:-1] + "w"
    if short.startswith("b"):
        return prefix + "w" + short[1:]
    return name


def positional_encoding(n_tokens: int, d_model: int) -> np.ndarray:
    pos = np.arange(n_tokens)[:, None]
    k = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (k // 2)) / d_model)
    return np.where(k % 2 == 0, np.sin(angle), np.cos(angle))


def patchify(signals: np.ndarray, patch_len: int) -> np.ndarray:
    """[B, L] -> [B, T, patch_len] with zero padding at the end."""
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    B, L = signals.shape
    T = -(-L // patch_len)
    padded = np.zeros((B, T * patch_len))
    padded[:, :L] = signals
    return padded.reshape(B, T, patch_len)


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _split(x, h):
    B, T, d = x.shape
    return x.reshape(B, T, h, d // h).transpose(0, 2, 1, 3)


def _merge(x):
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


def _sum_rows(x):
    return x.reshape(-1, x.shape[-1]).sum(0)


def _matmul_grad(x, dy):
    """dW for y = x @ W with batch dims flattened."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def forward(params, cfg: EncoderConfig, signals, return_cache: bool = False):
    """Embed a batch of channel series [B, L] into [B, d_model]."""
    x = np.atleast_2d(np.asarray(signals, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("encoder input contains non-finite values")
    if x.shape[1] < 1:
        raise ValueError("encoder input is empty")
    tokens = patchify(x, cfg.patch_len)
    B, T, _ = tokens.shape
    h, dh = cfg.n_heads, cfg.head_dim

    z = tokens @ params["in_w"] + params["in_b"] + positional_encoding(T, cfg.d_model)
    caches = []
    for layer in range(cfg.n_layers):
        p = {k: params[f"l{layer}.{k}"] for k in _LAYER_PARAMS}
        q = _split(z @ p["wq"] + p["bq"], h)
        k_ = _split(z @ p["wk"] + p["bk"], h)
        v = _split(z @ p["wv"] + p["bv"], h)
        s = q @ k_.transpose(0, 1, 3, 2) / np.sqrt(dh)
        s = s - s.max(-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(-1, keepdims=True)
        o = _merge(a @ v)
        attn = o @ p["wo"] + p["bo"]
        y, ln1 = _layer_norm(z + attn, p["ln1_g"], p["ln1_b"])
        f_pre = y @ p["ff1_w"] + p["ff1_b"]
        f_act = np.maximum(f_pre, 0.0)
        f_out = f_act @ p["ff2_w"] + p["ff2_b"]
        z_next, ln2 = _layer_norm(y + f_out, p["ln2_g"], p["ln2_b"])
        caches.append((z, q, k_, v, a, o, y, ln1, f_pre, f_act, ln2))
        z = z_next
    emb = z.mean(1)
    if return_cache:
        return emb, (tokens, caches)
    return emb


def backward(params, cfg: EncoderConfig, cache, d_emb) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter given dL/d(embedding)."""
    tokens, caches = cache
    B, T, _ = tokens.shape
    h, dh = cfg.n_heads, cfg.head_dim
    grads = {}
    dz = np.repeat(np.asarray(d_emb)[:, None, :] / T, T, axis=1)
    for layer in reversed(range(cfg.n_layers)):
        pre = f"l{layer}."
        p = {k: params[pre + k] for k in _LAYER_PARAMS}
        z, q, k_, v, a, o, y, ln1, f_pre, f_act, ln2 = caches[layer]

        dr2, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = _layer_norm_back(dz, p["ln2_g"], ln2)
        dy = dr2.copy()
        grads[pre + "ff2_w"] = _matmul_grad(f_act, dr2)
        grads[pre + "ff2_b"] = _sum_rows(dr2)
        df_act = dr2 @ p["ff2_w"].T
        df_pre = df_act * (f_pre > 0)
        grads[pre + "ff1_w"] = _matmul_grad(y, df_pre)
        grads[pre + "ff1_b"] = _sum_rows(df_pre)
        dy += df_pre @ p["ff1_w"].T

        dr1, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = _layer_norm_back(dy, p["ln1_g"], ln1)
        dz_in = dr1.copy()
        grads[pre + "wo"] = _matmul_grad(o, dr1)
        grads[pre + "bo"] = _sum_rows(dr1)
        do = _split(dr1 @ p["wo"].T, h)
        da = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(-1, keepdims=True)) / np.sqrt(dh)
        dq = ds @ k_
        dk = ds.transpose(0, 1, 3, 2) @ q
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dm = _merge(dproj)
            grads[pre + "w" + name] = _matmul_grad(z, dm)
            grads[pre + "b" + name] = _sum_rows(dm)
            dz_in += dm @ p["w" + name].T
        dz = dz_in
    grads["in_w"] = _matmul_grad(tokens, dz)
    grads["in_b"] = _sum_rows(dz)
    return grads


def encode_channel(signal, cfg: EncoderConfig, params) -> np.ndarray:
    """Embedding of a single 1-D series."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("signal must be a non-empty 1-D series")
    return forward(params, cfg, x[None, :])[0]
