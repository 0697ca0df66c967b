"""Joint optimization of a base SSL objective and the spatial branch.

Determinism contract: all randomness is rooted at the config seed through
named SeedSequence children — parameter init uses (seed, 2, group), batch
order uses (seed, 1, epoch), and each step spawns independent streams for
base-objective augmentation, masking, and the spatial branch's view
sampling. Because the spatial branch owns its own stream, a run with both
loss weights at zero skips the branch entirely and still reproduces the
baseline-only trajectory exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from spssl import autodiff as ad
from spssl import objectives as obj
from spssl.autodiff import Tensor
from spssl.encoder import EncoderConfig, TokenBundle, encode, init_encoder_params, patchify
from spssl.geometry import Box, SamplerConstraints, sample_view_pair
from spssl.io import MetricsWriter, config_hash, save_checkpoint, load_checkpoint
from spssl.optim import AdamW, lr_at
from spssl.sp_head import init_sp_head_params, predict, sp_loss
from spssl.data import color_jitter_batch, crop_resize_batch


class DivergenceError(RuntimeError):
    """A loss term went non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "contrastive"  # or "masked"
    epochs: int = 50
    batch_size: int = 64
    base_lr: float = 1.5e-4
    min_lr: float = 1e-6
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_epochs: int = 5
    lambda_p: float = 0.1
    lambda_s: float = 0.1
    seed: int = 0
    jitter_strength: float = 0.4
    hflip: bool = True
    lr_batch_scaling: bool = True  # linear rule: lr scales with batch/256
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    contrastive: obj.ContrastiveConfig = field(default_factory=obj.ContrastiveConfig)
    masking: obj.MaskingConfig = field(default_factory=obj.MaskingConfig)
    sampler: SamplerConstraints = field(default_factory=lambda: SamplerConstraints(
        ref_scale_range=(0.25, 0.5), rel_pos_range=(-1.5, 1.5),
        rel_scale_range=(0.5, 2.0), max_dice=0.3, min_view_px=3.0,
    ))

    def __post_init__(self):
        if self.objective not in ("contrastive", "masked"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup cannot exceed total epochs")
        if self.objective == "contrastive" and self.batch_size < 2:
            raise ValueError("contrastive training needs batch >= 2")

    @property
    def sp_enabled(self) -> bool:
        return self.lambda_p > 0 or self.lambda_s > 0

    def flat_dict(self) -> dict:
        flat = {}

        def put(prefix, d):
            for k, v in d.items():
                if isinstance(v, dict):
                    put(f"{prefix}{k}.", v)
                elif isinstance(v, tuple):
                    flat[f"{prefix}{k}"] = list(v)
                else:
                    flat[f"{prefix}{k}"] = v

        put("", asdict(self))
        return flat

    def hash(self) -> str:
        return config_hash(self.flat_dict())


@dataclass
class TrainResult:
    params: dict
    teacher: dict | None
    config: TrainConfig
    metrics: list  # per-step dicts
    step: int


def _step_rngs(seed: int, step: int):
    base = np.random.default_rng(np.random.SeedSequence((seed, 3, step, 0)))
    mask = np.random.default_rng(np.random.SeedSequence((seed, 3, step, 1)))
    sp = np.random.default_rng(np.random.SeedSequence((seed, 3, step, 2)))
    return base, mask, sp


def init_all_params(cfg: TrainConfig):
    """Encoder, objective-head, and (if enabled) spatial-head parameters.

    Each group draws from its own seed stream so that enabling or disabling
    the spatial branch leaves the other groups bit-identical.
    """
    enc_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2, 0)))
    head_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2, 1)))
    sp_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2, 2)))

    params = init_encoder_params(cfg.encoder, enc_rng)
    if cfg.objective == "contrastive":
        params.update(obj.init_projection_params(cfg.encoder.dim, cfg.contrastive, head_rng))
    else:
        params.update(obj.init_decoder_params(cfg.encoder, head_rng))
    if cfg.sp_enabled:
        params.update(init_sp_head_params(cfg.encoder.dim, sp_rng))

    teacher = None
    if cfg.objective == "contrastive":
        teacher = {k: Tensor(v.data.copy()) for k, v in params.items()
                   if not k.startswith("sp.")}
    return params, teacher


def _random_view_boxes(n: int, side: int, rng: np.random.Generator):
    frac = rng.uniform(0.6, 1.0, size=(n, 2))
    w = frac[:, 0] * side
    h = frac[:, 1] * side
    x = rng.uniform(0.0, 1.0, size=n) * (side - w)
    y = rng.uniform(0.0, 1.0, size=n) * (side - h)
    return [Box(x[i], y[i], w[i], h[i]) for i in range(n)]


def _base_views_contrastive(images: np.ndarray, cfg: TrainConfig, rng: np.random.Generator):
    """Two independently cropped, flipped, and jittered views per image."""
    side = cfg.encoder.image_side
    n = images.shape[0]
    views = []
    for _ in range(2):
        boxes = _random_view_boxes(n, images.shape[1], rng)
        v = crop_resize_batch(images, boxes, side)
        flips = rng.random(n) < 0.5 if cfg.hflip else np.zeros(n, bool)
        v[flips] = v[flips, :, ::-1]
        if cfg.jitter_strength:
            v = color_jitter_batch(v, rng, cfg.jitter_strength)
        views.append(v)
    return views


def _sp_views(images: np.ndarray, cfg: TrainConfig, rng: np.random.Generator):
    """Spatial-branch view pairs; flip acts on the source before sampling."""
    side = cfg.encoder.image_side
    n = images.shape[0]
    targets = np.empty((n, 4), dtype=np.float32)
    src_dims = (images.shape[2], images.shape[1])
    srcs = images
    if cfg.hflip:
        flips = rng.random(n) < 0.5
        srcs = images.copy()
        srcs[flips] = srcs[flips, :, ::-1]
    ref_boxes = []
    tgt_boxes = []
    for i in range(n):
        geom = sample_view_pair(src_dims, cfg.sampler, rng)
        ref_boxes.append(geom.ref_box)
        tgt_boxes.append(geom.tgt_box)
        targets[i] = geom.target.as_array()
    refs = crop_resize_batch(srcs, ref_boxes, side)
    tgts = crop_resize_batch(srcs, tgt_boxes, side)
    if cfg.jitter_strength:
        refs = color_jitter_batch(refs, rng, cfg.jitter_strength)
        tgts = color_jitter_batch(tgts, rng, cfg.jitter_strength)
    return refs, tgts, targets


def _split_bundle(bund: TokenBundle, lo: int, hi: int) -> TokenBundle:
    return TokenBundle(Z=ad.slice_axis(bund.Z, 0, lo, hi), z=ad.slice_axis(bund.z, 0, lo, hi))


def _contrastive_loss(x1, x2, params, teacher, cfg: TrainConfig, sp_views=None):
    """Symmetric InfoNCE; one student and one teacher forward per step.

    When ``sp_views`` (refs, tgts) is given, the spatial-branch views join
    the student batch so the whole step runs a single backward graph; the
    corresponding token bundles are returned for the spatial head.
    """
    ccfg = cfg.contrastive
    dim = cfg.encoder.dim
    n = x1.shape[0]
    both = np.concatenate([x1, x2])
    student_in = both if sp_views is None else np.concatenate([both, sp_views[0], sp_views[1]])

    bund = encode(Tensor(student_in), params, cfg.encoder)
    z = ad.slice_axis(bund.z, 0, 0, 2 * n) if sp_views is not None else bund.z
    q = obj.project(ad.reshape(z, (2 * n, dim)), params)
    with ad.no_grad():
        zt = encode(Tensor(both), teacher, cfg.encoder).z
        k = obj.project(ad.reshape(zt, (2 * n, dim)), teacher)
    q1 = ad.slice_axis(q, 0, 0, n)
    q2 = ad.slice_axis(q, 0, n, 2 * n)
    k1 = ad.slice_axis(k, 0, 0, n)
    k2 = ad.slice_axis(k, 0, n, 2 * n)
    loss = ad.scale(obj.info_nce(q1, k2, ccfg.temperature) + obj.info_nce(q2, k1, ccfg.temperature), 0.5)
    if sp_views is None:
        return loss, None, None
    return loss, _split_bundle(bund, 2 * n, 3 * n), _split_bundle(bund, 3 * n, 4 * n)


def _masked_loss(x, params, cfg: TrainConfig, rng_mask: np.random.Generator):
    from spssl.encoder import encode_visible

    l = cfg.encoder.num_patches
    visible, masked = obj.mask_patches(l, cfg.masking, rng_mask)
    x_t = Tensor(x)
    tokens = encode_visible(x_t, params, cfg.encoder, visible)
    patch_tokens = ad.slice_axis(tokens, 1, 1, 1 + len(visible))
    pred = obj.decode_patches(patch_tokens, visible, cfg.encoder, params)
    with ad.no_grad():
        true_patches = patchify(Tensor(x), cfg.encoder.patch_size).data
    return obj.reconstruction_loss(pred, true_patches, masked)


def train(cfg: TrainConfig, images: np.ndarray, out_dir=None, log_every: int = 1) -> TrainResult:
    """Run the full pretraining loop; deterministic given (cfg, images)."""
    n = images.shape[0]
    steps_per_epoch = n // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    eff_lr = cfg.base_lr * (cfg.batch_size / 256.0 if cfg.lr_batch_scaling else 1.0)

    params, teacher = init_all_params(cfg)
    opt = AdamW(params, beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay)

    writer = None
    if out_dir is not None:
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        writer = MetricsWriter(out_dir / "metrics.csv",
                               ["step", "lr", "loss_base", "loss_sp", "loss_total", "grad_norm"])

    metrics = []
    step = 0
    with ad.finite_checks(False):
        for epoch in range(cfg.epochs):
            order_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1, epoch)))
            order = order_rng.permutation(n)
            for b in range(steps_per_epoch):
                batch = images[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
                rng_base, rng_mask, rng_sp = _step_rngs(cfg.seed, step)
                lr = lr_at(step, total_steps, max(warmup_steps, 1), eff_lr, cfg.min_lr)

                sp_pack = _sp_views(batch, cfg, rng_sp) if cfg.sp_enabled else None

                if cfg.objective == "contrastive":
                    x1, x2 = _base_views_contrastive(batch, cfg, rng_base)
                    sp_views = None if sp_pack is None else (sp_pack[0], sp_pack[1])
                    loss_base, ref_b, tgt_b = _contrastive_loss(x1, x2, params, teacher, cfg, sp_views)
                else:
                    flips = rng_base.random(batch.shape[0]) < 0.5 if cfg.hflip else np.zeros(batch.shape[0], bool)
                    x = batch.copy()
                    x[flips] = x[flips, :, ::-1]
                    loss_base = _masked_loss(x, params, cfg, rng_mask)
                    if sp_pack is not None:
                        refs, tgts, _ = sp_pack
                        nb = refs.shape[0]
                        bund = encode(Tensor(np.concatenate([refs, tgts])), params, cfg.encoder)
                        ref_b = _split_bundle(bund, 0, nb)
                        tgt_b = _split_bundle(bund, nb, 2 * nb)

                if sp_pack is not None:
                    pred = predict(ref_b, tgt_b, params)
                    loss_sp = sp_loss(pred, sp_pack[2], cfg.lambda_p, cfg.lambda_s)
                    loss_total = obj.total_loss(loss_base, loss_sp)
                    sp_val = float(loss_sp.data)
                else:
                    sp_val = 0.0
                    loss_total = loss_base

                base_val = float(loss_base.data)
                # reported total is the exact sum of the reported terms; the
                # optimized float32 sum agrees with it to stored precision
                total_val = base_val + sp_val
                for name, value in (("base", base_val), ("sp", sp_val), ("total", total_val)):
                    if not math.isfinite(value):
                        raise DivergenceError(f"non-finite {name} loss at step {step}")

                opt.zero_grad()
                ad.backward(loss_total)
                grad_norm = opt.step(lr)

                if cfg.objective == "contrastive":
                    m = obj.ema_momentum_at(step, total_steps, cfg.contrastive.ema_start, cfg.contrastive.ema_end)
                    ema_update(teacher, params, m)

                row = {"step": step, "lr": lr, "loss_base": base_val, "loss_sp": sp_val,
                       "loss_total": total_val, "grad_norm": grad_norm}
                if step % log_every == 0:
                    metrics.append(row)
                    if writer is not None:
                        writer.write(row)
                step += 1

    if writer is not None:
        writer.close()
    result = TrainResult(params=params, teacher=teacher, config=cfg, metrics=metrics, step=step)
    if out_dir is not None:
        save_train_checkpoint(out_dir / "checkpoint.spck", result, opt)
    return result


def ema_update(teacher: dict, student: dict, momentum: float) -> None:
    obj.ema_update(teacher, {k: v for k, v in student.items() if k in teacher}, momentum)


def save_train_checkpoint(path, result: TrainResult, opt: AdamW | None = None) -> None:
    tensors = {f"param/{k}": v for k, v in result.params.items()}
    if result.teacher is not None:
        tensors.update({f"teacher/{k}": v for k, v in result.teacher.items()})
    extra = {"step": result.step, "config": result.config.flat_dict()}
    if opt is not None:
        tensors.update({f"opt_m/{k}": v for k, v in opt.m.items()})
        tensors.update({f"opt_v/{k}": v for k, v in opt.v.items()})
        extra["opt_step_count"] = opt.step_count
    save_checkpoint(path, tensors, result.step, result.config.hash(), extra)


def load_train_checkpoint(path):
    """Returns (params, teacher, manifest); params require grad again."""
    arrays, manifest = load_checkpoint(path)
    params = {}
    teacher = {}
    for name, arr in arrays.items():
        group, _, key = name.partition("/")
        if group == "param":
            params[key] = Tensor(arr, requires_grad=True)
        elif group == "teacher":
            teacher[key] = Tensor(arr)
    return params, (teacher or None), manifest
