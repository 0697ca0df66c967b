"""Minimal Vision Transformer producing patch tokens and a class token.

Pre-norm blocks, learned absolute positional embeddings, class token
included in self-attention. Layer norms inside the blocks carry learned
scale/shift; the spatial head's query normalization (see sp_head) does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spssl import autodiff as ad
from spssl.autodiff import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    image_side: int = 32
    patch_size: int = 8
    depth: int = 2
    dim: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    channels: int = 3

    def __post_init__(self):
        if self.image_side % self.patch_size != 0:
            raise ValueError("image_side must be divisible by patch_size")
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")

    @property
    def grid(self) -> int:
        return self.image_side // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass(frozen=True)
class TokenBundle:
    """Final-layer patch tokens Z (.., L, D) and class token z (.., 1, D)."""

    Z: Tensor
    z: Tensor


def patchify(image: Tensor, patch: int) -> Tensor:
    """Split (..., H, W, C) into (..., L, patch*patch*C) row-major patches.

    Patch order is left-to-right then top-to-bottom; within a patch, pixels
    flatten row-major with channels last.
    """
    *lead, h, w, ch = image.shape
    if h % patch or w % patch:
        raise ad.ShapeError(f"image {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = ad.reshape(image, (*lead, gh, patch, gw, patch, ch))
    nlead = len(lead)
    axes = tuple(range(nlead)) + (nlead, nlead + 2, nlead + 1, nlead + 3, nlead + 4)
    x = ad.transpose(x, axes)
    return ad.reshape(x, (*lead, gh * gw, patch * patch * ch))


def unpatchify(tokens: np.ndarray, patch: int, channels: int = 3) -> np.ndarray:
    """Inverse of patchify for plain arrays (used for reconstruction export)."""
    *lead, l, d = tokens.shape
    g = int(round(np.sqrt(l)))
    x = tokens.reshape(*lead, g, g, patch, patch, channels)
    nlead = len(lead)
    axes = tuple(range(nlead)) + (nlead, nlead + 2, nlead + 1, nlead + 3, nlead + 4)
    x = x.transpose(axes)
    return x.reshape(*lead, g * patch, g * patch, channels)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Parameter dict keyed by dotted names; all tensors require grad."""
    d = cfg.dim
    hidden = d * cfg.mlp_ratio

    def nrm(*shape, std=0.02):
        return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    params = {
        "patch_embed.w": nrm(cfg.patch_dim, d),
        "patch_embed.b": zeros(d),
        "pos_embed": nrm(1 + cfg.num_patches, d),
        "cls_token": nrm(1, d),
        "ln_f.g": ones(d),
        "ln_f.b": zeros(d),
    }
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        params[pre + "ln1.g"] = ones(d)
        params[pre + "ln1.b"] = zeros(d)
        params[pre + "attn.qkv.w"] = nrm(d, 3 * d)
        params[pre + "attn.qkv.b"] = zeros(3 * d)
        params[pre + "attn.proj.w"] = nrm(d, d)
        params[pre + "attn.proj.b"] = zeros(d)
        params[pre + "ln2.g"] = ones(d)
        params[pre + "ln2.b"] = zeros(d)
        params[pre + "mlp.fc1.w"] = nrm(d, hidden)
        params[pre + "mlp.fc1.b"] = zeros(hidden)
        params[pre + "mlp.fc2.w"] = nrm(hidden, d)
        params[pre + "mlp.fc2.b"] = zeros(d)
    return params


def _ln_affine(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return ad.layer_norm_affine(x, g, b)


def _self_attention(x: Tensor, params: dict, pre: str, cfg: EncoderConfig, capture: list | None):
    return ad.multihead_attention(
        x, params[pre + "attn.qkv.w"], params[pre + "attn.qkv.b"],
        params[pre + "attn.proj.w"], params[pre + "attn.proj.b"],
        cfg.heads, capture=capture,
    )


def _blocks(x: Tensor, params: dict, cfg: EncoderConfig, capture: list | None) -> Tensor:
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        h = _ln_affine(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        x = x + _self_attention(h, params, pre, cfg, capture if i == cfg.depth - 1 else None)
        h = _ln_affine(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        h = ad.linear(h, params[pre + "mlp.fc1.w"], params[pre + "mlp.fc1.b"])
        h = ad.gelu(h)
        h = ad.linear(h, params[pre + "mlp.fc2.w"], params[pre + "mlp.fc2.b"])
        x = x + h
    return _ln_affine(x, params["ln_f.g"], params["ln_f.b"])


def _forward(images: Tensor, params: dict, cfg: EncoderConfig, capture: list | None) -> Tensor:
    squeeze = images.ndim == 3
    if squeeze:
        images = ad.reshape(images, (1,) + images.shape)
    b = images.shape[0]
    tokens = patchify(images, cfg.patch_size)
    x = ad.linear(tokens, params["patch_embed.w"], params["patch_embed.b"])
    cls = ad.reshape(params["cls_token"], (1, 1, cfg.dim))
    cls = cls + Tensor(np.zeros((b, 1, cfg.dim), dtype=x.dtype))  # broadcast to batch
    x = ad.concat([cls, x], axis=1)
    x = x + params["pos_embed"]
    return _blocks(x, params, cfg, capture)


def encode_visible(images: Tensor, params: dict, cfg: EncoderConfig, visible_idx) -> Tensor:
    """Encode only the ``visible_idx`` patches (plus the class token).

    Used by the masked-reconstruction branch; the self-attention width
    shrinks to 1 + len(visible_idx). Returns the full token sequence
    (B, 1+V, D) after the final norm.
    """
    visible_idx = np.asarray(visible_idx)
    if images.ndim == 3:
        images = ad.reshape(images, (1,) + images.shape)
    b = images.shape[0]
    tokens = patchify(images, cfg.patch_size)
    tokens = ad.take(tokens, visible_idx, axis=1)
    x = ad.linear(tokens, params["patch_embed.w"], params["patch_embed.b"])
    pos = ad.take(params["pos_embed"], np.concatenate(([0], visible_idx + 1)), axis=0)
    cls = ad.reshape(params["cls_token"], (1, 1, cfg.dim))
    cls = cls + Tensor(np.zeros((b, 1, cfg.dim), dtype=x.dtype))
    x = ad.concat([cls, x], axis=1)
    x = x + pos
    return _blocks(x, params, cfg, capture=None)


def encode(images: Tensor, params: dict, cfg: EncoderConfig) -> TokenBundle:
    """Run the encoder; images are (B, H, W, C) or a single (H, W, C)."""
    squeeze = images.ndim == 3
    x = _forward(images, params, cfg, capture=None)
    z = ad.slice_axis(x, 1, 0, 1)
    Z = ad.slice_axis(x, 1, 1, 1 + cfg.num_patches)
    if squeeze:
        z = ad.reshape(z, (1, cfg.dim))
        Z = ad.reshape(Z, (cfg.num_patches, cfg.dim))
    return TokenBundle(Z=Z, z=z)


def attention_map(image: Tensor, params: dict, cfg: EncoderConfig) -> np.ndarray:
    """Class-token attention over patches in the final block, per head.

    The class-token self-attention column is dropped and each head's
    distribution renormalized over patch columns, then reshaped to the
    (grid, grid) patch layout. Returns (heads, grid, grid).
    """
    capture: list = []
    with ad.no_grad():
        _forward(image, params, cfg, capture=capture)
    attn = capture[-1]  # (B, H, T, T)
    cls_row = attn[:, :, 0, 1:]  # drop class-token column, keep patch keys
    cls_row = cls_row / cls_row.sum(axis=-1, keepdims=True)
    maps = cls_row.reshape(attn.shape[0], cfg.heads, cfg.grid, cfg.grid)
    return maps[0] if image.ndim == 3 else maps
