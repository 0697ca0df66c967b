"""Frozen-backbone evaluation: spatial regression, linear probing, the jigsaw
benchmark, occlusion robustness, and attention-map export.

The pooled cross-attention that feeds both the spatial regressor and the
jigsaw head is parameter-free, so all frozen-backbone protocols precompute
pooled features once and train only the small MLP on top. Head budgets are
identical across compared backbones (fairness rule).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from spssl import autodiff as ad
from spssl import jigsaw as jig
from spssl.autodiff import Tensor
from spssl.data import color_jitter_batch, crop_resize_batch
from spssl.encoder import EncoderConfig, attention_map, encode
from spssl.geometry import Box, SamplerConstraints, sample_view_pair
from spssl.optim import AdamW
from spssl.sp_head import LN_EPS, init_sp_head_params, predict_from_pooled, sp_loss

PROBE_LR_GRID = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


@dataclass
class SpatialEvalReport:
    mean_position_error: float
    mean_scale_error: float
    pair_count: int
    backbone_id: str
    position_errors: np.ndarray = field(repr=False)
    scale_errors: np.ndarray = field(repr=False)


@dataclass
class ProbeResult:
    accuracy: float
    lr: float
    w: np.ndarray
    b: np.ndarray

    @property
    def checksum(self) -> str:
        digest = hashlib.sha256(self.w.tobytes() + self.b.tobytes())
        return digest.hexdigest()[:16]


def resize_batch(images: np.ndarray, side: int) -> np.ndarray:
    h, w = images.shape[1:3]
    return crop_resize_batch(images, [Box(0.0, 0.0, float(w), float(h))] * images.shape[0], side)


def _np_params(params: dict) -> dict:
    return {k: (v.data if isinstance(v, Tensor) else v) for k, v in params.items()}


def extract_class_features(images: np.ndarray, params: dict, cfg: EncoderConfig,
                           batch: int = 256) -> np.ndarray:
    """Frozen class-token features, (N, D)."""
    out = np.empty((images.shape[0], cfg.dim), dtype=np.float32)
    with ad.no_grad():
        for lo in range(0, images.shape[0], batch):
            z = encode(Tensor(images[lo:lo + batch]), params, cfg).z
            out[lo:lo + batch] = z.data.reshape(-1, cfg.dim)
    return out


def _pooled_pair(z_ref: np.ndarray, tokens_ref: np.ndarray, tokens_tgt: np.ndarray) -> np.ndarray:
    """Parameter-free pooled attention in plain numpy for frozen features."""
    q = z_ref
    mu = q.mean(axis=-1, keepdims=True)
    qc = q - mu
    q = qc / np.sqrt((qc * qc).mean(axis=-1, keepdims=True) + LN_EPS)

    def pool(tokens):
        logits = np.einsum("bd,bld->bl", q, tokens)
        logits -= logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        attn = e / e.sum(axis=-1, keepdims=True)
        return np.einsum("bl,bld->bd", attn, tokens)

    return np.concatenate([pool(tokens_ref), pool(tokens_tgt)], axis=-1)


def pooled_pair_features(images: np.ndarray, params: dict, cfg: EncoderConfig,
                         sampler: SamplerConstraints, rng: np.random.Generator,
                         n_pairs: int, jitter_strength: float = 0.0,
                         batch: int = 128) -> tuple:
    """Sample view pairs following the pretraining protocol and pool features.

    Returns (h, targets): h is (n_pairs, 2D) pooled cross-attention features
    from the frozen backbone, targets is (n_pairs, 4).
    """
    n = images.shape[0]
    side = cfg.image_side
    src_dims = (images.shape[2], images.shape[1])
    picks = rng.integers(0, n, size=n_pairs)
    targets = np.empty((n_pairs, 4), dtype=np.float32)
    h = np.empty((n_pairs, 2 * cfg.dim), dtype=np.float32)
    for lo in range(0, n_pairs, batch):
        idx = picks[lo:lo + batch]
        ref_boxes, tgt_boxes = [], []
        for j in range(idx.size):
            geom = sample_view_pair(src_dims, sampler, rng)
            ref_boxes.append(geom.ref_box)
            tgt_boxes.append(geom.tgt_box)
            targets[lo + j] = geom.target.as_array()
        srcs = images[idx]
        refs = crop_resize_batch(srcs, ref_boxes, side)
        tgts = crop_resize_batch(srcs, tgt_boxes, side)
        if jitter_strength:
            refs = color_jitter_batch(refs, rng, jitter_strength)
            tgts = color_jitter_batch(tgts, rng, jitter_strength)
        with ad.no_grad():
            bund = encode(Tensor(np.concatenate([refs, tgts])), params, cfg)
        m = idx.size
        z_ref = bund.z.data[:m].reshape(m, cfg.dim)
        h[lo:lo + m] = _pooled_pair(z_ref, bund.Z.data[:m], bund.Z.data[m:])
    return h, targets


def train_spatial_head(h: np.ndarray, targets: np.ndarray, dim: int, seed: int,
                       epochs: int = 60, batch: int = 256, lr: float = 3e-3,
                       weight_decay: float = 1e-4) -> dict:
    """Train a fresh spatial regressor MLP on precomputed pooled features."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 10)))
    head = init_sp_head_params(dim, rng)
    opt = AdamW(head, weight_decay=weight_decay)
    n = h.shape[0]
    batch = min(batch, n)  # small feature sets still get full batches
    order_rng = np.random.default_rng(np.random.SeedSequence((seed, 11)))
    for _ in range(epochs):
        order = order_rng.permutation(n)
        for lo in range(0, n - batch + 1, batch):
            sel = order[lo:lo + batch]
            pred = predict_from_pooled(Tensor(h[sel]), head)
            loss = sp_loss(pred, targets[sel], 1.0, 1.0)
            opt.zero_grad()
            ad.backward(loss)
            opt.step(lr)
    return head


def spatial_errors(h: np.ndarray, targets: np.ndarray, head: dict) -> tuple:
    """Per-pair L2 errors (position, scale) of the trained head."""
    with ad.no_grad():
        pred = predict_from_pooled(Tensor(h), head)
    dp = pred.p_hat.data - targets[:, 0:2]
    ds = pred.s_hat.data - targets[:, 2:4]
    return np.linalg.norm(dp, axis=-1), np.linalg.norm(ds, axis=-1)


def eval_spatial(params: dict, cfg: EncoderConfig, train_images: np.ndarray,
                 eval_images: np.ndarray, sampler: SamplerConstraints, seed: int,
                 n_train_pairs: int = 4000, n_eval_pairs: int = 2000,
                 jitter_strength: float = 0.4, head_epochs: int = 60,
                 backbone_id: str = "") -> SpatialEvalReport:
    """Train a fresh spatial head on the frozen backbone and report L2 errors.

    Head-training pairs follow the full pretraining protocol (jitter on);
    eval pairs disable jitter so the score reflects geometry alone.
    """
    rng_train = np.random.default_rng(np.random.SeedSequence((seed, 20)))
    rng_eval = np.random.default_rng(np.random.SeedSequence((seed, 21)))
    h_tr, t_tr = pooled_pair_features(train_images, params, cfg, sampler, rng_train,
                                      n_train_pairs, jitter_strength)
    h_ev, t_ev = pooled_pair_features(eval_images, params, cfg, sampler, rng_eval,
                                      n_eval_pairs, 0.0)
    head = train_spatial_head(h_tr, t_tr, cfg.dim, seed, epochs=head_epochs)
    pos_err, scale_err = spatial_errors(h_ev, t_ev, head)
    return SpatialEvalReport(
        mean_position_error=float(pos_err.mean()),
        mean_scale_error=float(scale_err.mean()),
        pair_count=int(n_eval_pairs),
        backbone_id=backbone_id,
        position_errors=pos_err,
        scale_errors=scale_err,
    )


# ---------------------------------------------------------------------------
# linear probing


def probe_predict(features: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (features @ w + b).argmax(axis=-1)


def _fit_linear(features, labels, classes, lr, seed, epochs, batch, weight_decay):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 30)))
    params = {
        "probe.w": Tensor(np.zeros((features.shape[1], classes), dtype=np.float32), requires_grad=True),
        "probe.b": Tensor(np.zeros(classes, dtype=np.float32), requires_grad=True),
    }
    opt = AdamW(params, weight_decay=weight_decay)
    n = features.shape[0]
    batch = min(batch, n)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n - batch + 1, batch):
            sel = order[lo:lo + batch]
            logits = ad.linear(Tensor(features[sel]), params["probe.w"], params["probe.b"])
            loss = ad.cross_entropy(logits, labels[sel])
            opt.zero_grad()
            ad.backward(loss)
            opt.step(lr)
    return params["probe.w"].data.copy(), params["probe.b"].data.copy()


def train_linear_probe(features: np.ndarray, labels: np.ndarray, seed: int,
                       lr_grid=PROBE_LR_GRID, val_fraction: float = 0.1,
                       epochs: int = 30, batch: int = 256,
                       weight_decay: float = 0.0) -> ProbeResult:
    """Linear classifier on frozen features; LR chosen on a validation split."""
    labels = np.asarray(labels)
    classes = int(labels.max()) + 1
    if classes < 2:
        raise ValueError("linear probe needs at least 2 classes")
    n = features.shape[0]
    split_rng = np.random.default_rng(np.random.SeedSequence((seed, 31)))
    order = split_rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    val_idx, tr_idx = order[:n_val], order[n_val:]
    best = None
    for lr in lr_grid:
        w, b = _fit_linear(features[tr_idx], labels[tr_idx], classes, lr, seed,
                           epochs, batch, weight_decay)
        acc = float((probe_predict(features[val_idx], w, b) == labels[val_idx]).mean())
        if best is None or acc > best[0]:
            best = (acc, lr, w, b)
    return ProbeResult(accuracy=best[0], lr=best[1], w=best[2], b=best[3])


def probe_accuracy(result: ProbeResult, features: np.ndarray, labels: np.ndarray) -> float:
    return float((probe_predict(features, result.w, result.b) == np.asarray(labels)).mean())


# ---------------------------------------------------------------------------
# jigsaw benchmark plumbing


def jigsaw_tile_features(images: np.ndarray, params: dict, cfg: EncoderConfig,
                         batch_images: int = 24) -> np.ndarray:
    """Per-tile pooled features, (N, 9, D), in canonical tile order.

    Each tile is resized to the encoder input and encoded independently; each
    tile's class token then attends over the concatenated patch tokens of all
    9 tiles. The key/value set is order-invariant, so shuffled arrangements
    are row permutations of these features.
    """
    n = images.shape[0]
    side = cfg.image_side
    out = np.empty((n, jig.CELLS, cfg.dim), dtype=np.float32)
    for lo in range(0, n, batch_images):
        chunk = images[lo:lo + batch_images]
        m = chunk.shape[0]
        tiles = np.empty((m * jig.CELLS, chunk.shape[1] // jig.GRID,
                          chunk.shape[2] // jig.GRID, chunk.shape[3]), dtype=np.float32)
        for i in range(m):
            for j, tile in enumerate(jig.extract_tiles(chunk[i])):
                tiles[i * jig.CELLS + j] = tile
        tiles32 = resize_batch(tiles, side)
        with ad.no_grad():
            bund = encode(Tensor(tiles32), params, cfg)
        z = bund.z.data.reshape(m, jig.CELLS, cfg.dim)
        tokens = bund.Z.data.reshape(m, jig.CELLS * cfg.num_patches, cfg.dim)
        mu = z.mean(axis=-1, keepdims=True)
        zc = z - mu
        q = zc / np.sqrt((zc * zc).mean(axis=-1, keepdims=True) + LN_EPS)
        logits = np.einsum("bqd,bld->bql", q, tokens)
        logits -= logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        attn = e / e.sum(axis=-1, keepdims=True)
        out[lo:lo + m] = np.einsum("bql,bld->bqd", attn, tokens)
    return out


def _jigsaw_batches(tile_feats, perm_set, rng, draws_per_image):
    n = tile_feats.shape[0]
    idx = rng.integers(0, perm_set.size, size=n * draws_per_image)
    img = np.repeat(np.arange(n), draws_per_image)
    feats = tile_feats[img[:, None], perm_set.perms[idx]]  # (N*draws, 9, D)
    return feats.reshape(feats.shape[0], -1), idx


def train_jigsaw_head(tile_feats: np.ndarray, perm_set: jig.PermutationSet, seed: int,
                      draws_per_image: int = 96, epochs: int = 40, batch: int = 256,
                      lr: float = 5e-4, weight_decay: float = 1e-4) -> dict:
    """Train the permutation classifier on precomputed per-tile features.

    The defaults are deliberately generous: with K well into the hundreds
    the classifier is sample-starved at few draws per image, and a weak head
    understates every backbone.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 40)))
    head = jig.init_jigsaw_head_params(tile_feats.shape[-1], perm_set.size, rng)
    opt = AdamW(head, weight_decay=weight_decay)
    x, y = _jigsaw_batches(tile_feats, perm_set, rng, draws_per_image)
    n = x.shape[0]
    batch = min(batch, n)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n - batch + 1, batch):
            sel = order[lo:lo + batch]
            logits = jig.jigsaw_head_mlp(Tensor(x[sel]), head)
            loss = ad.cross_entropy(logits, y[sel])
            opt.zero_grad()
            ad.backward(loss)
            opt.step(lr)
    return head


def jigsaw_order_predictions(tile_feats: np.ndarray, perm_idx: np.ndarray,
                             perm_set: jig.PermutationSet, head: dict,
                             batch: int = 512) -> np.ndarray:
    """Predicted permutation index for each (image, applied permutation)."""
    n = tile_feats.shape[0]
    feats = tile_feats[np.arange(n)[:, None], perm_set.perms[perm_idx]]
    x = feats.reshape(n, -1)
    pred = np.empty(n, dtype=np.int64)
    with ad.no_grad():
        for lo in range(0, n, batch):
            logits = jig.jigsaw_head_mlp(Tensor(x[lo:lo + batch]), head)
            pred[lo:lo + batch] = logits.data.argmax(axis=-1)
    return pred


def eval_jigsaw(images3: np.ndarray, labels: np.ndarray, tile_feats: np.ndarray,
                perm_set: jig.PermutationSet, head: dict, probe: ProbeResult,
                params: dict, cfg: EncoderConfig, seed: int) -> tuple:
    """Jigsaw order accuracy and recognition accuracy on reconstructions.

    For each image a permutation is drawn uniformly from the set; the head
    predicts it from the shuffled arrangement; the image is reconstructed
    with the predicted permutation and classified by the frozen probe.
    Returns (order_accuracy, recognition_accuracy).
    """
    n = images3.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 41)))
    true_idx = rng.integers(0, perm_set.size, size=n)
    pred_idx = jigsaw_order_predictions(tile_feats, true_idx, perm_set, head)
    order_acc = float((pred_idx == true_idx).mean())

    recon = np.empty_like(images3)
    for i in range(n):
        shuffled = jig.shuffle_patches(images3[i], perm_set.perms[true_idx[i]])
        recon[i] = jig.reconstruct(shuffled, perm_set.perms[pred_idx[i]])
    recon_enc = resize_batch(recon, cfg.image_side)
    feats = extract_class_features(recon_enc, params, cfg)
    recog_acc = float((probe_predict(feats, probe.w, probe.b) == np.asarray(labels)).mean())
    return order_acc, recog_acc


# ---------------------------------------------------------------------------
# occlusion robustness and attention export


def occlude(image: np.ndarray, coverage: float, rng: np.random.Generator,
            aspect_range: tuple = (0.5, 2.0)) -> tuple:
    """Zero out one axis-aligned rectangle covering ~``coverage`` of the image.

    Aspect ratio (width/height) is drawn log-uniformly from ``aspect_range``;
    side lengths are rounded to whole pixels and the rectangle is placed
    uniformly inside the image. Returns (occluded, realized_coverage, Box).
    Pixels outside the rectangle are untouched.
    """
    if not 0.0 < coverage < 1.0:
        raise ValueError("coverage must lie in (0, 1)")
    h, w = image.shape[:2]
    area = coverage * h * w
    if area < 1.0:
        raise ValueError("coverage below one pixel for this image size")
    aspect = float(np.exp(rng.uniform(np.log(aspect_range[0]), np.log(aspect_range[1]))))
    rw = int(np.clip(round(np.sqrt(area * aspect)), 1, w))
    rh = int(np.clip(round(area / rw), 1, h))
    x0 = int(rng.integers(0, w - rw + 1))
    y0 = int(rng.integers(0, h - rh + 1))
    out = image.copy()
    out[y0:y0 + rh, x0:x0 + rw] = 0
    return out, (rw * rh) / (h * w), Box(float(x0), float(y0), float(rw), float(rh))


def normalized_attention_maps(images: np.ndarray, params: dict, cfg: EncoderConfig) -> np.ndarray:
    """Per-image per-head class-token attention maps min-max scaled to [0, 1].

    A constant map normalizes to all zeros.
    """
    maps = attention_map(Tensor(images), params, cfg)  # (B, heads, g, g)
    flat = maps.reshape(maps.shape[0], maps.shape[1], -1)
    lo = flat.min(axis=-1, keepdims=True)
    hi = flat.max(axis=-1, keepdims=True)
    constant = hi == lo
    out = (flat - lo) / np.where(constant, 1.0, hi - lo)
    out *= ~constant
    return out.reshape(maps.shape)
