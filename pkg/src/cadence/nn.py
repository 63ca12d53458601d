"""Convolutional window encoder, pairwise projector and contrastive loss with
hand-written backpropagation.

Layout is channels-last throughout: a batch of windows is ``(N, L, C)``.
Parameters live in a plain ``dict[str, ndarray]``:

``conv{i}.w``  ``(kernel, c_in, c_out)``     ``conv{i}.b``  ``(c_out,)``
``dense.w``    ``(c_last, embed_dim)``       ``dense.b``    ``(embed_dim,)``
``proj.w1``    ``(2 * embed_dim, hidden)``   ``proj.b1``    ``(hidden,)``
``proj.w2``    ``(hidden, 2)``               ``proj.b2``    ``(2,)``

Each conv block is a stride-2 convolution with "same"-style zero padding
followed by ReLU; the tower ends in global average pooling over time and a
linear dense layer. There is no normalisation layer, so embeddings of one
window never depend on the rest of the batch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    InvalidEpsilon,
    NonFiniteActivation,
    NonFiniteGradient,
    ShapeMismatch,
)
from .signal_core import WINDOW_SAMPLES

Params = dict


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple = (16, 32, 64, 128, 256)
    kernel: int = 5
    stride: int = 2
    embed_dim: int = 256
    proj_hidden: int = 128
    in_channels: int = 3
    window_samples: int = WINDOW_SAMPLES

    @property
    def n_blocks(self) -> int:
        return len(self.channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["channels"] = tuple(int(c) for c in d["channels"])
        return cls(**d)

    @classmethod
    def from_config(cls, cfg: dict) -> "ModelConfig":
        kw = {}
        if "model.channels" in cfg:
            ch = cfg["model.channels"]
            kw["channels"] = tuple(int(c) for c in (ch.split(",") if isinstance(ch, str) else ch))
        for key in ("kernel", "stride", "embed_dim", "proj_hidden"):
            if f"model.{key}" in cfg:
                kw[key] = int(cfg[f"model.{key}"])
        return cls(**kw)

    def temporal_lengths(self) -> list[int]:
        """Sequence length entering each block and after the last one."""
        lengths = [self.window_samples]
        for _ in self.channels:
            lengths.append(math.ceil(lengths[-1] / self.stride))
        return lengths


def _same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = math.ceil(length / stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2, total - total // 2


def init_params(cfg: ModelConfig, seed=0, dtype=np.float32) -> Params:
    """He-normal weights for ReLU layers, LeCun-normal for linear outputs, zero biases."""
    rng = np.random.default_rng(seed)
    p: Params = {}
    c_in = cfg.in_channels
    for i, c_out in enumerate(cfg.channels):
        fan_in = cfg.kernel * c_in
        p[f"conv{i}.w"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), (cfg.kernel, c_in, c_out))
        p[f"conv{i}.b"] = np.zeros(c_out)
        c_in = c_out
    p["dense.w"] = rng.normal(0.0, math.sqrt(1.0 / c_in), (c_in, cfg.embed_dim))
    p["dense.b"] = np.zeros(cfg.embed_dim)
    p["proj.w1"] = rng.normal(0.0, math.sqrt(2.0 / (2 * cfg.embed_dim)), (2 * cfg.embed_dim, cfg.proj_hidden))
    p["proj.b1"] = np.zeros(cfg.proj_hidden)
    p["proj.w2"] = rng.normal(0.0, math.sqrt(1.0 / cfg.proj_hidden), (cfg.proj_hidden, 2))
    p["proj.b2"] = np.zeros(2)
    return {k: v.astype(dtype) for k, v in p.items()}


def param_shapes(cfg: ModelConfig) -> dict:
    return {k: v.shape for k, v in init_params(cfg, 0, np.float32).items()}


def encoder_keys(params: Params) -> list[str]:
    return [k for k in params if not k.startswith("proj.")]


# ---------------------------------------------------------------------------
# encoder


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    n, length, c_in = x.shape
    k, _, c_out = w.shape
    out_len, left, right = _same_padding(length, k, stride)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0))) if (left or right) else x
    span = stride * (out_len - 1) + 1
    cols = np.stack([xp[:, j:j + span:stride, :] for j in range(k)], axis=2)
    cols = cols.reshape(n * out_len, k * c_in)
    z = cols @ w.reshape(k * c_in, c_out) + b
    return z.reshape(n, out_len, c_out), (cols, xp.shape, left, length)


def _conv_backward(dz: np.ndarray, w: np.ndarray, cache, stride: int):
    cols, xp_shape, left, length = cache
    n, out_len, c_out = dz.shape
    k, c_in, _ = w.shape
    dz2 = dz.reshape(n * out_len, c_out)
    dw = (cols.T @ dz2).reshape(w.shape)
    db = dz2.sum(axis=0)
    dcols = (dz2 @ w.reshape(k * c_in, c_out).T).reshape(n, out_len, k, c_in)
    dxp = np.zeros(xp_shape, dtype=dz.dtype)
    span = stride * (out_len - 1) + 1
    for j in range(k):
        dxp[:, j:j + span:stride, :] += dcols[:, :, j, :]
    return dxp[:, left:left + length, :], dw, db


def _check_windows(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.window_samples, cfg.in_channels):
        raise ShapeMismatch(f"expected (N, {cfg.window_samples}, {cfg.in_channels}) windows, got {x.shape}")
    return x


def _encoder_forward(x, params, cfg: ModelConfig, keep_cache: bool):
    caches = []
    h = x
    for i in range(cfg.n_blocks):
        z, cache = _conv_forward(h, params[f"conv{i}.w"], params[f"conv{i}.b"], cfg.stride)
        h = np.maximum(z, 0)
        if keep_cache:
            caches.append((cache, z > 0))
    pooled = h.mean(axis=1)
    emb = pooled @ params["dense.w"] + params["dense.b"]
    if not np.all(np.isfinite(emb)):
        raise NonFiniteActivation("encoder produced non-finite embeddings")
    return emb, (caches, pooled, h.shape[1])


def encoder_forward(x: np.ndarray, params: Params, cfg: ModelConfig | None = None) -> np.ndarray:
    """Embed a batch of ``(N, 300, 3)`` windows -> ``(N, embed_dim)``."""
    cfg = cfg or config_from_params(params)
    x = _check_windows(x, cfg).astype(params["dense.w"].dtype, copy=False)
    emb, _ = _encoder_forward(x, params, cfg, keep_cache=False)
    return emb


def embed_in_chunks(x: np.ndarray, params: Params, cfg: ModelConfig | None = None, chunk: int = 256) -> np.ndarray:
    cfg = cfg or config_from_params(params)
    if len(x) == 0:
        return np.zeros((0, params["dense.w"].shape[1]), dtype=params["dense.w"].dtype)
    return np.concatenate([encoder_forward(x[i:i + chunk], params, cfg) for i in range(0, len(x), chunk)])


def config_from_params(params: Params, stride: int = 2) -> ModelConfig:
    n = sum(1 for k in params if k.startswith("conv") and k.endswith(".w"))
    chans = tuple(params[f"conv{i}.w"].shape[2] for i in range(n))
    k, c_in, _ = params["conv0.w"].shape
    return ModelConfig(channels=chans, kernel=k, stride=stride, embed_dim=params["dense.w"].shape[1],
                       proj_hidden=params["proj.w1"].shape[1] if "proj.w1" in params else 128,
                       in_channels=c_in)


# ---------------------------------------------------------------------------
# projector and loss


def projector_forward(pairs: np.ndarray, params: Params) -> np.ndarray:
    """Logits for explicit pair features ``(M, 2d)`` -> ``(M, 2)``."""
    w1 = params["proj.w1"]
    if pairs.ndim != 2 or pairs.shape[1] != w1.shape[0]:
        raise ShapeMismatch(f"pair features must be (M, {w1.shape[0]}), got {pairs.shape}")
    h = np.maximum(pairs @ w1 + params["proj.b1"], 0)
    return h @ params["proj.w2"] + params["proj.b2"]


def pair_features(emb: np.ndarray) -> np.ndarray:
    """All ordered concatenations ``[e_p, e_q]`` -> ``(P*P, 2d)``, row ``p*P + q``."""
    p, d = emb.shape
    left = np.repeat(emb, p, axis=0)
    right = np.tile(emb, (p, 1))
    return np.concatenate([left, right], axis=1)


def _paired_projector(emb: np.ndarray, params: Params):
    # concat(e_p, e_q) @ W1 == e_p @ W1[:d] + e_q @ W1[d:]; avoids materialising P^2 x 2d
    d = emb.shape[1]
    w1 = params["proj.w1"]
    a = emb @ w1[:d]
    b = emb @ w1[d:]
    pre = a[:, None, :] + b[None, :, :] + params["proj.b1"]
    h = np.maximum(pre, 0)
    logits = h @ params["proj.w2"] + params["proj.b2"]
    return logits, (h, pre > 0)


def paired_logits(emb: np.ndarray, params: Params) -> np.ndarray:
    """Logits for every ordered pair of rows of ``emb`` -> ``(P, P, 2)``."""
    return _paired_projector(emb, params)[0]


def _log_softmax2(logits: np.ndarray) -> np.ndarray:
    lse = np.logaddexp(logits[..., 0], logits[..., 1])
    return logits - lse[..., None]


def contrastive_loss(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean binary cross-entropy over pairs.

    ``logits`` is ``(..., 2)``; ``labels`` and ``weights`` match its leading
    shape. The weighted sum is divided by the total weight.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    weights = np.asarray(weights)
    if logits.shape[:-1] != labels.shape or labels.shape != weights.shape or logits.shape[-1] != 2:
        raise ShapeMismatch(f"logits {logits.shape}, labels {labels.shape}, weights {weights.shape} disagree")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    logp = _log_softmax2(logits.astype(np.float64))
    ce = -np.where(labels.astype(bool), logp[..., 1], logp[..., 0])
    return float(np.sum(weights * ce) / np.sum(weights))


def _loss_grad_logits(logits, labels, weights):
    logp = _log_softmax2(logits)
    prob = np.exp(logp)
    onehot = np.stack([1 - labels, labels], axis=-1).astype(logits.dtype)
    w = (weights / np.sum(weights)).astype(logits.dtype)
    ce = -np.sum(onehot * logp, axis=-1)
    loss = float(np.sum(w.astype(np.float64) * ce))
    return loss, w[..., None] * (prob - onehot)


# ---------------------------------------------------------------------------
# full forward/backward


def loss_and_grads(x: np.ndarray, labels: np.ndarray, weights: np.ndarray, params: Params,
                   cfg: ModelConfig | None = None) -> tuple[float, Params]:
    """Contrastive loss of a stacked pair batch and its gradient for every parameter."""
    cfg = cfg or config_from_params(params)
    dtype = params["dense.w"].dtype
    x = _check_windows(x, cfg).astype(dtype, copy=False)
    n = x.shape[0]
    if labels.shape != (n, n) or weights.shape != (n, n):
        raise ShapeMismatch(f"label/weight matrices must be {(n, n)}")

    emb, (caches, pooled, last_len) = _encoder_forward(x, params, cfg, keep_cache=True)
    logits, (h, mask) = _paired_projector(emb, params)
    loss, dlogits = _loss_grad_logits(logits, labels, weights.astype(dtype))

    g: Params = {}
    hidden = h.shape[-1]
    g["proj.w2"] = h.reshape(-1, hidden).T @ dlogits.reshape(-1, 2)
    g["proj.b2"] = dlogits.reshape(-1, 2).sum(axis=0)
    dpre = (dlogits @ params["proj.w2"].T) * mask
    g["proj.b1"] = dpre.reshape(-1, hidden).sum(axis=0)
    da = dpre.sum(axis=1)
    db = dpre.sum(axis=0)
    d = emb.shape[1]
    w1 = params["proj.w1"]
    g["proj.w1"] = np.concatenate([emb.T @ da, emb.T @ db], axis=0)
    demb = da @ w1[:d].T + db @ w1[d:].T

    g["dense.w"] = pooled.T @ demb
    g["dense.b"] = demb.sum(axis=0)
    dpooled = demb @ params["dense.w"].T
    dh = np.broadcast_to(dpooled[:, None, :] / last_len, (n, last_len, dpooled.shape[1]))
    for i in reversed(range(cfg.n_blocks)):
        cache, active = caches[i]
        dz = dh * active
        dh, g[f"conv{i}.w"], g[f"conv{i}.b"] = _conv_backward(dz, params[f"conv{i}.w"], cache, cfg.stride)

    for k, v in g.items():
        if not np.all(np.isfinite(v)):
            raise NonFiniteGradient(f"non-finite gradient for {k}")
    return loss, {k: g[k].astype(dtype, copy=False) for k in params}


def backprop_gradients(batch, params: Params, cfg: ModelConfig | None = None) -> Params:
    """Gradients of the contrastive loss of a :class:`~cadence.pairing.PairBatch`."""
    return loss_and_grads(batch.windows, batch.labels, batch.weights, params, cfg)[1]


def batch_loss(x, labels, weights, params: Params, cfg: ModelConfig | None = None) -> float:
    cfg = cfg or config_from_params(params)
    emb = encoder_forward(x, params, cfg)
    return contrastive_loss(paired_logits(emb, params), labels, weights)


def _relu_masks(x, params, cfg):
    masks = []
    h = x
    for i in range(cfg.n_blocks):
        z, _ = _conv_forward(h, params[f"conv{i}.w"], params[f"conv{i}.b"], cfg.stride)
        masks.append(z > 0)
        h = np.maximum(z, 0)
    emb = h.mean(axis=1) @ params["dense.w"] + params["dense.b"]
    masks.append(_paired_projector(emb, params)[1][1])
    return masks


def gradient_check(params: Params, batch, epsilon: float = 1e-5, max_per_tensor: int | None = 64,
                   seed=0, cfg: ModelConfig | None = None,
                   grad_fn: Optional[Callable] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64. Up to ``max_per_tensor`` random coordinates of every
    parameter tensor are probed (``None`` probes all). Coordinates whose
    +-epsilon probe flips any ReLU gate are skipped because the loss is not
    differentiable across the kink. ``grad_fn`` replaces the analytic
    gradient (used for mutation testing).
    """
    if not epsilon > 0:
        raise InvalidEpsilon(f"epsilon must be positive, got {epsilon}")
    cfg = cfg or config_from_params(params)
    p64 = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    x = np.asarray(batch.windows, dtype=np.float64)
    labels, weights = np.asarray(batch.labels), np.asarray(batch.weights, dtype=np.float64)
    if grad_fn is None:
        analytic = loss_and_grads(x, labels, weights, p64, cfg)[1]
    else:
        analytic = grad_fn(x, labels, weights, p64, cfg)
    base_masks = _relu_masks(x, p64, cfg)
    rng = np.random.default_rng(seed)

    worst = 0.0
    for name, value in p64.items():
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = rng.choice(flat.size, max_per_tensor, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + epsilon
            plus = batch_loss(x, labels, weights, p64, cfg)
            kink = any(np.any(a != b) for a, b in zip(base_masks, _relu_masks(x, p64, cfg)))
            flat[j] = orig - epsilon
            minus = batch_loss(x, labels, weights, p64, cfg)
            kink = kink or any(np.any(a != b) for a, b in zip(base_masks, _relu_masks(x, p64, cfg)))
            flat[j] = orig
            if kink:
                continue
            numeric = (plus - minus) / (2 * epsilon)
            a = float(analytic[name].reshape(-1)[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, params: Params, **hyper) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()}, **hyper)


def adam_step(params: Params, grads: Params, state: AdamState) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update; returns new parameter and state objects."""
    if set(grads) != set(params):
        raise ShapeMismatch("gradient and parameter names differ")
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{k}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_p[k] = (p - step).astype(p.dtype, copy=False)
        new_m[k] = m.astype(p.dtype, copy=False)
        new_v[k] = v.astype(p.dtype, copy=False)
    return new_p, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
