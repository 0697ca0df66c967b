"""Base SSL objectives the spatial branch plugs into.

Two desk-scale branches: a contrastive one with a momentum (EMA) teacher and
symmetric InfoNCE between online and teacher projections, and a masked
reconstruction one with a single lightweight decoder block. The total loss
is the exact sum of the base loss and the spatial regression loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spssl import autodiff as ad
from spssl.autodiff import Tensor
from spssl.encoder import EncoderConfig


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.2
    proj_hidden: int = 128
    proj_out: int = 64
    ema_start: float = 0.99
    ema_end: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        for m in (self.ema_start, self.ema_end):
            if not 0.0 <= m <= 1.0:
                raise ValueError("EMA momentum must lie in [0, 1]")


@dataclass(frozen=True)
class MaskingConfig:
    mask_ratio: float = 0.75

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in (0, 1)")


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = ad.sqrt(ad.reduce_sum(x * x, axis=-1))
    norm = ad.reshape(norm, norm.shape + (1,))
    return x / (norm + eps)


def info_nce(a: Tensor, b: Tensor, temperature: float) -> Tensor:
    """Symmetric InfoNCE; positives are matching rows, negatives all others.

    Rows are L2-normalized internally, so the loss is invariant to a common
    rescaling of the inputs.
    """
    n = a.shape[0]
    if n < 2:
        raise ValueError("info_nce needs a batch of at least 2")
    an = normalize_rows(a)
    bn = normalize_rows(b)
    logits = ad.scale(ad.matmul(an, ad.transpose(bn, (1, 0))), 1.0 / temperature)
    labels = np.arange(n)
    fwd = ad.cross_entropy(logits, labels)
    rev = ad.cross_entropy(ad.transpose(logits, (1, 0)), labels)
    return ad.scale(fwd + rev, 0.5)


def ema_update(teacher: dict, student: dict, momentum: float) -> None:
    """teacher <- m * teacher + (1 - m) * student, elementwise and in place."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    for name, t in teacher.items():
        s = student[name]
        if t.shape != s.shape:
            raise ad.ShapeError(f"teacher/student shape mismatch for {name}")
        t.data *= momentum
        t.data += (1.0 - momentum) * s.data


def ema_momentum_at(step: int, total_steps: int, start: float, end: float) -> float:
    """Cosine ramp of the EMA momentum from ``start`` to ``end``."""
    if total_steps <= 1:
        return end
    frac = step / max(1, total_steps - 1)
    return end - (end - start) * 0.5 * (1.0 + np.cos(np.pi * frac))


def mask_patches(num_tokens: int, cfg: MaskingConfig, rng: np.random.Generator):
    """Uniformly random disjoint (visible, masked) index partition.

    |masked| = round(ratio * L), clamped so at least one token is masked and
    at least one stays visible.
    """
    if num_tokens < 2:
        raise ValueError("need at least 2 tokens to mask")
    n_masked = int(round(cfg.mask_ratio * num_tokens))
    n_masked = min(max(n_masked, 1), num_tokens - 1)
    perm = rng.permutation(num_tokens)
    masked = np.sort(perm[:n_masked])
    visible = np.sort(perm[n_masked:])
    return visible, masked


def patch_normalize(patches: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Standardize each patch vector to zero mean / unit std (MAE target)."""
    mu = patches.mean(axis=-1, keepdims=True)
    sd = patches.std(axis=-1, keepdims=True)
    return (patches - mu) / (sd + eps)


def reconstruction_loss(pred_patches: Tensor, true_patches: np.ndarray, masked_idx) -> Tensor:
    """MSE over masked patch pixels only, against per-patch-normalized targets.

    ``pred_patches`` is (B, L, P) or (L, P); gradients w.r.t. visible-patch
    predictions are exactly zero because visible positions never enter.
    """
    masked_idx = np.asarray(masked_idx)
    if masked_idx.size == 0:
        raise ValueError("empty mask set")
    axis = pred_patches.ndim - 2
    pred_m = ad.take(pred_patches, masked_idx, axis=axis)
    tgt = patch_normalize(np.take(np.asarray(true_patches), masked_idx, axis=axis))
    diff = pred_m - Tensor(tgt.astype(pred_patches.dtype))
    return ad.reduce_mean(ad.reshape(diff * diff, (-1,)), axis=0)


def total_loss(base: Tensor, sp: Tensor) -> Tensor:
    """Exact sum of the base objective and the spatial regression loss."""
    return base + sp


# ---------------------------------------------------------------------------
# learnable heads for the two branches


def init_projection_params(dim: int, cfg: ContrastiveConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    def nrm(shape, fan_in):
        return Tensor((rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype), requires_grad=True)

    return {
        "proj.fc1.w": nrm((dim, cfg.proj_hidden), dim),
        "proj.fc1.b": Tensor(np.zeros(cfg.proj_hidden, dtype=dtype), requires_grad=True),
        "proj.fc2.w": nrm((cfg.proj_hidden, cfg.proj_out), cfg.proj_hidden),
        "proj.fc2.b": Tensor(np.zeros(cfg.proj_out, dtype=dtype), requires_grad=True),
    }


def project(features: Tensor, params: dict) -> Tensor:
    h = ad.relu(ad.linear(features, params["proj.fc1.w"], params["proj.fc1.b"]))
    return ad.linear(h, params["proj.fc2.w"], params["proj.fc2.b"])


def init_decoder_params(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    """One pre-norm transformer block plus a linear pixel head and mask token."""
    d = cfg.dim
    hidden = d * cfg.mlp_ratio

    def nrm(*shape, std=0.02):
        return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    return {
        "dec.mask_token": nrm(1, d),
        "dec.pos_embed": nrm(cfg.num_patches, d),
        "dec.ln1.g": ones(d),
        "dec.ln1.b": zeros(d),
        "dec.attn.qkv.w": nrm(d, 3 * d),
        "dec.attn.qkv.b": zeros(3 * d),
        "dec.attn.proj.w": nrm(d, d),
        "dec.attn.proj.b": zeros(d),
        "dec.ln2.g": ones(d),
        "dec.ln2.b": zeros(d),
        "dec.mlp.fc1.w": nrm(d, hidden),
        "dec.mlp.fc1.b": zeros(hidden),
        "dec.mlp.fc2.w": nrm(hidden, d),
        "dec.mlp.fc2.b": zeros(d),
        "dec.head.w": nrm(d, cfg.patch_dim),
        "dec.head.b": zeros(cfg.patch_dim),
    }


def decode_patches(visible_tokens: Tensor, visible_idx, cfg: EncoderConfig, params: dict) -> Tensor:
    """Fill masked slots with the mask token and run the decoder block.

    ``visible_tokens`` is (B, V, D) encoder output for visible patches (class
    token excluded). Returns per-patch pixel predictions (B, L, patch_dim).
    """
    b, v, d = visible_tokens.shape
    l = cfg.num_patches
    visible_idx = np.asarray(visible_idx)

    # scatter visible tokens into the full-length sequence
    sel = np.zeros((l, v), dtype=visible_tokens.dtype)
    sel[visible_idx, np.arange(v)] = 1.0
    mask_fill = np.ones((l, 1), dtype=visible_tokens.dtype)
    mask_fill[visible_idx] = 0.0
    x = ad.matmul(Tensor(sel), visible_tokens)  # (B, L, D) with zeros at masked slots
    x = x + ad.matmul(Tensor(mask_fill), params["dec.mask_token"])
    x = x + params["dec.pos_embed"]

    h = ad.layer_norm(x) * params["dec.ln1.g"] + params["dec.ln1.b"]
    hd = d // cfg.heads
    qkv = ad.linear(h, params["dec.attn.qkv.w"], params["dec.attn.qkv.b"])
    q = ad.transpose(ad.reshape(ad.slice_axis(qkv, 2, 0, d), (b, l, cfg.heads, hd)), (0, 2, 1, 3))
    k = ad.transpose(ad.reshape(ad.slice_axis(qkv, 2, d, 2 * d), (b, l, cfg.heads, hd)), (0, 2, 1, 3))
    vv = ad.transpose(ad.reshape(ad.slice_axis(qkv, 2, 2 * d, 3 * d), (b, l, cfg.heads, hd)), (0, 2, 1, 3))
    attn = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd)))
    out = ad.reshape(ad.transpose(ad.matmul(attn, vv), (0, 2, 1, 3)), (b, l, d))
    x = x + ad.linear(out, params["dec.attn.proj.w"], params["dec.attn.proj.b"])
    h = ad.layer_norm(x) * params["dec.ln2.g"] + params["dec.ln2.b"]
    h = ad.gelu(ad.linear(h, params["dec.mlp.fc1.w"], params["dec.mlp.fc1.b"]))
    x = x + ad.linear(h, params["dec.mlp.fc2.w"], params["dec.mlp.fc2.b"])
    return ad.linear(x, params["dec.head.w"], params["dec.head.b"])
