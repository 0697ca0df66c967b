"""Desk-scale data: procedural scenes, a raw dataset format, and augmentation.

The scene generator renders simple shapes whose identity is statistically
tied to the canvas quadrant they occupy, so predicting relative position
from content is learnable rather than solvable by low-level continuity
alone. The raw on-disk format is byte-exact and documented in
docs/formats.md: a fixed header followed by fixed-size records of
channels-last uint8 pixels plus one label byte.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from spssl.geometry import Box, SpatialTarget, ViewPairGeometry

MAGIC = b"SPD1"
SHAPE_KINDS = ("disc", "square", "triangle", "bar")


@dataclass(frozen=True)
class SceneSpec:
    canvas_side: int = 32
    shape_kinds: tuple = SHAPE_KINDS
    palette: tuple = (
        (0.92, 0.30, 0.24),
        (0.20, 0.55, 0.95),
        (0.30, 0.85, 0.40),
        (0.95, 0.80, 0.25),
        (0.75, 0.40, 0.90),
    )
    layout_bias: float = 0.8  # probability that a shape lands in "its" quadrant
    instance_range: tuple = (3, 6)
    min_radius: float = 2.0
    max_radius_frac: float = 0.14

    def __post_init__(self):
        if len(self.shape_kinds) < 2:
            raise ValueError("need at least 2 shape kinds")
        if not 0.0 <= self.layout_bias <= 1.0:
            raise ValueError("layout_bias must lie in [0, 1]")


def _quadrant_bounds(side: int, q: int):
    half = side / 2.0
    qx, qy = q % 2, q // 2
    return qx * half, qy * half, half, half


def _render_shape(img: np.ndarray, kind: str, color, cx: float, cy: float, r: float) -> None:
    side = img.shape[0]
    ys, xs = np.mgrid[0:side, 0:side]
    xs = xs + 0.5
    ys = ys + 0.5
    if kind == "disc":
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    elif kind == "square":
        mask = (np.abs(xs - cx) <= r) & (np.abs(ys - cy) <= r)
    elif kind == "triangle":
        # upward-pointing: apex at (cx, cy - r), base at cy + r
        mask = (ys >= cy - r) & (ys <= cy + r) & (np.abs(xs - cx) <= (ys - (cy - r)) / 2.0)
    elif kind == "bar":
        mask = (np.abs(xs - cx) <= r) & (np.abs(ys - cy) <= r / 3.0)
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    img[mask] = color


def synth_scene(spec: SceneSpec, rng: np.random.Generator):
    """Render one scene; returns (image, label, metadata).

    Shape kind k is biased toward quadrant k mod 4 with probability
    ``layout_bias``. The label is the dominant (most frequent) kind, ties
    broken toward the lower kind index. Metadata lists (kind, Box) per
    instance.
    """
    side = spec.canvas_side
    img = np.empty((side, side, 3), dtype=np.float64)
    # smooth background gradient plus mild texture noise
    g = np.linspace(0.12, 0.3, side)
    img[:] = (g[:, None, None] + g[None, :, None]) / 2.0
    img += rng.normal(0.0, 0.02, size=img.shape)

    n = int(rng.integers(spec.instance_range[0], spec.instance_range[1] + 1))
    kinds = spec.shape_kinds
    counts = np.zeros(len(kinds), dtype=int)
    metadata = []
    r_max = max(spec.min_radius, spec.max_radius_frac * side)
    for _ in range(n):
        q = int(rng.integers(0, 4))
        if rng.random() < spec.layout_bias:
            kind_idx = q % len(kinds)
        else:
            kind_idx = int(rng.integers(0, len(kinds)))
        r = float(rng.uniform(spec.min_radius, r_max))
        qx, qy, qw, qh = _quadrant_bounds(side, q)
        cx = float(rng.uniform(max(qx, r) , min(qx + qw, side - r)))
        cy = float(rng.uniform(max(qy, r), min(qy + qh, side - r)))
        color = spec.palette[int(rng.integers(0, len(spec.palette)))]
        _render_shape(img, kinds[kind_idx], color, cx, cy, r)
        counts[kind_idx] += 1
        metadata.append((kinds[kind_idx], Box(cx - r, cy - r, 2 * r, 2 * r)))
    np.clip(img, 0.0, 1.0, out=img)
    label = int(np.argmax(counts))
    return img.astype(np.float32), label, metadata


@dataclass(frozen=True)
class DatasetManifest:
    count: int
    side: int
    channels: int
    class_count: int
    split_sizes: tuple  # (train, val, test)
    checksum: str

    def __post_init__(self):
        if sum(self.split_sizes) != self.count:
            raise ValueError("split sizes must partition the dataset")

    def serialize(self) -> str:
        lines = [
            "spssl-dataset-manifest v1",
            f"count = {self.count}",
            f"side = {self.side}",
            f"channels = {self.channels}",
            f"class_count = {self.class_count}",
            f"split_train = {self.split_sizes[0]}",
            f"split_val = {self.split_sizes[1]}",
            f"split_test = {self.split_sizes[2]}",
            f"checksum = {self.checksum}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "DatasetManifest":
        lines = [ln.strip() for ln in text.strip().splitlines()]
        if not lines or lines[0] != "spssl-dataset-manifest v1":
            raise ValueError("not a dataset manifest")
        kv = {}
        for ln in lines[1:]:
            key, _, value = ln.partition("=")
            kv[key.strip()] = value.strip()
        return cls(
            count=int(kv["count"]),
            side=int(kv["side"]),
            channels=int(kv["channels"]),
            class_count=int(kv["class_count"]),
            split_sizes=(int(kv["split_train"]), int(kv["split_val"]), int(kv["split_test"])),
            checksum=kv["checksum"],
        )


def write_dataset(path, images: np.ndarray, labels: np.ndarray, class_count: int,
                  split_sizes: tuple) -> DatasetManifest:
    """Write the raw fixed-record dataset file plus its manifest.

    ``images`` is (N, side, side, C) uint8 or float in [0, 1]. Record layout:
    side*side*C image bytes (row-major, channels-last) then 1 label byte.
    """
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    n, side, _, channels = images.shape
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIII", n, side, channels, class_count))
        for img, lab in zip(images, labels):
            f.write(img.tobytes())
            f.write(bytes([int(lab)]))
    checksum = hashlib.sha256(open(path, "rb").read()).hexdigest()
    manifest = DatasetManifest(
        count=n, side=side, channels=channels, class_count=class_count,
        split_sizes=tuple(split_sizes), checksum=checksum,
    )
    with open(str(path) + ".manifest", "w") as f:
        f.write(manifest.serialize())
    return manifest


def load_small_dataset(path, manifest: DatasetManifest):
    """Load a raw dataset file, verifying the manifest checksum and geometry."""
    blob = open(path, "rb").read()
    if hashlib.sha256(blob).hexdigest() != manifest.checksum:
        raise ValueError("dataset checksum mismatch")
    if blob[:4] != MAGIC:
        raise ValueError("bad magic; not a spssl dataset")
    n, side, channels, class_count = struct.unpack("<IIII", blob[4:20])
    if (n, side, channels, class_count) != (manifest.count, manifest.side, manifest.channels, manifest.class_count):
        raise ValueError("manifest does not match file header")
    stride = side * side * channels + 1
    body = blob[20:]
    if len(body) != n * stride:
        raise ValueError("truncated dataset file")
    raw = np.frombuffer(body, dtype=np.uint8).reshape(n, stride)
    images = raw[:, :-1].reshape(n, side, side, channels)
    labels = raw[:, -1].astype(np.int64)
    if labels.size and labels.max() >= class_count:
        raise ValueError("label out of range for declared class count")
    return images.copy(), labels


def generate_dataset(spec: SceneSpec, n: int, seed: int, split_sizes: tuple | None = None):
    """Deterministically render ``n`` scenes; returns (images float32, labels)."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, spec.canvas_side, spec.canvas_side, 3), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        images[i], labels[i], _ = synth_scene(spec, rng)
    return images, labels


def crop_resize(image: np.ndarray, box: Box, out_side: int) -> np.ndarray:
    """Bilinear crop-and-resize with half-pixel centers; clipped at borders."""
    return crop_resize_batch(image[None], [box], out_side)[0]


def crop_resize_batch(images: np.ndarray, boxes, out_side: int) -> np.ndarray:
    """Vectorized crop-and-resize; ``images`` (B, H, W, C), one box per image."""
    b = len(boxes)
    h, w = images.shape[1:3]
    js = (np.arange(out_side) + 0.5) / out_side
    bx = np.array([[box.x, box.y, box.w, box.h] for box in boxes])
    u = bx[:, 0, None] + js * bx[:, 2, None] - 0.5  # (B, S)
    v = bx[:, 1, None] + js * bx[:, 3, None] - 0.5
    u0 = np.clip(np.floor(u).astype(np.intp), 0, w - 1)
    v0 = np.clip(np.floor(v).astype(np.intp), 0, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = np.clip(u - u0, 0.0, 1.0).astype(np.float32)[:, None, :, None]
    fv = np.clip(v - v0, 0.0, 1.0).astype(np.float32)[:, :, None, None]
    bi = np.arange(b)[:, None, None]
    r = v0[:, :, None]
    c0 = u0[:, None, :]
    c1 = u1[:, None, :]
    top = images[bi, r, c0] * (1 - fu) + images[bi, r, c1] * fu
    r = v1[:, :, None]
    bot = images[bi, r, c0] * (1 - fu) + images[bi, r, c1] * fu
    out = top * (1 - fv) + bot * fv
    return np.ascontiguousarray(out, dtype=np.float32)


def color_jitter_batch(views: np.ndarray, rng: np.random.Generator, strength: float = 0.4) -> np.ndarray:
    """Per-image brightness/contrast/saturation jitter over a (B, H, W, C) batch."""
    b = views.shape[0]
    factors = rng.uniform(1.0 - strength, 1.0 + strength, size=(b, 3)).astype(np.float32)
    out = views * factors[:, 0, None, None, None]
    mean = out.mean(axis=(1, 2, 3), keepdims=True)
    out = (out - mean) * factors[:, 1, None, None, None] + mean
    gray = out.mean(axis=-1, keepdims=True)
    out = gray + (out - gray) * factors[:, 2, None, None, None]
    return np.clip(out, 0.0, 1.0, out=out)


def color_jitter(view: np.ndarray, rng: np.random.Generator, strength: float = 0.4) -> np.ndarray:
    """Independent brightness/contrast/saturation jitter; purely photometric."""
    return color_jitter_batch(view[None].astype(np.float32), rng, strength)[0]


def augment_pair(image: np.ndarray, geometry: ViewPairGeometry, out_side: int,
                 rng: np.random.Generator, jitter_strength: float | None = 0.4):
    """Crop both views, resize, and apply independent color jitter.

    No spatial transforms happen after cropping, so the spatial target passes
    through unchanged regardless of the jitter draw.
    """
    h, w = image.shape[:2]
    for box in (geometry.ref_box, geometry.tgt_box):
        box.validate(w, h)
    view_r = crop_resize(image, geometry.ref_box, out_side)
    view_t = crop_resize(image, geometry.tgt_box, out_side)
    if jitter_strength:
        view_r = color_jitter(view_r, rng, jitter_strength)
        view_t = color_jitter(view_t, rng, jitter_strength)
    return view_r, view_t, geometry.target


def layout_kind_mutual_information(spec: SceneSpec, n_scenes: int, seed: int) -> float:
    """Plug-in MI estimate (nats) between instance kind and canvas quadrant."""
    rng = np.random.default_rng(seed)
    k = len(spec.shape_kinds)
    joint = np.zeros((k, 4))
    for _ in range(n_scenes):
        _, _, metadata = synth_scene(spec, rng)
        for kind, box in metadata:
            cx = box.x + box.w / 2.0
            cy = box.y + box.h / 2.0
            q = int(cx >= spec.canvas_side / 2.0) + 2 * int(cy >= spec.canvas_side / 2.0)
            joint[spec.shape_kinds.index(kind), q] += 1
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = joint * np.log(joint / (px * py))
    return float(np.nansum(terms))
