"""Command line entry point covering the full workflow.

Subcommands: gen-data, sample-validate, train, eval-spatial, probe,
gen-jigsaw, train-jigsaw-head, eval-jigsaw, occlude, export-attention.

All randomness roots at --seed; outputs with the same config and seed are
byte-identical (wall-clock times go to ``.times`` sidecars). Failures print
one machine-parsable line ``error: CLASS: detail`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from spssl import jigsaw as jig
from spssl.data import (DatasetManifest, SceneSpec, generate_dataset,
                        load_small_dataset, write_dataset)
from spssl.encoder import EncoderConfig
from spssl.evaluation import (ProbeResult, eval_jigsaw, eval_spatial,
                              extract_class_features, jigsaw_tile_features,
                              normalized_attention_maps, occlude,
                              probe_accuracy, resize_batch, train_jigsaw_head,
                              train_linear_probe)
from spssl.geometry import SamplerConstraints, validate_distribution
from spssl.io import (apply_overrides, config_hash, dump_config,
                      load_checkpoint, parse_config_text, save_checkpoint)
from spssl.objectives import ContrastiveConfig, MaskingConfig
from spssl.autodiff import Tensor
from spssl.trainer import DivergenceError, TrainConfig, load_train_checkpoint, train

JIGSAW_SIDE = 33  # smallest side divisible by the 3x3 grid above the encoder input


class CliError(RuntimeError):
    """Carries a machine-parsable error class for the one-line failure output."""

    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind


def _require_file(path, kind: str = "MISSING_ARTIFACT") -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(kind, f"required file not found: {p}")
    return p


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_flat_config(args) -> dict:
    flat = TrainConfig().flat_dict()
    if getattr(args, "config", None):
        try:
            text = _require_file(args.config, "BAD_CONFIG").read_text()
            flat.update(parse_config_text(text))
        except ValueError as exc:
            raise CliError("BAD_CONFIG", str(exc))
    try:
        flat = apply_overrides(flat, getattr(args, "override", None))
    except ValueError as exc:
        raise CliError("BAD_OVERRIDE", str(exc))
    if getattr(args, "seed", None) is not None:
        flat["seed"] = args.seed
    return flat


def _build(cls, flat: dict, prefix: str):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in flat.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if "." in name:
            continue
        if name not in names:
            raise CliError("BAD_CONFIG", f"unknown config key {key!r}")
        kwargs[name] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError("BAD_CONFIG", f"{prefix or cls.__name__}: {exc}")


def train_config_from_flat(flat: dict) -> TrainConfig:
    top = {k: v for k, v in flat.items() if "." not in k}
    cfg = _build(TrainConfig, top, "")
    return dataclasses.replace(
        cfg,
        encoder=_build(EncoderConfig, flat, "encoder."),
        contrastive=_build(ContrastiveConfig, flat, "contrastive."),
        masking=_build(MaskingConfig, flat, "masking."),
        sampler=_build(SamplerConstraints, flat, "sampler."),
    )


def _load_dataset(path):
    data_path = _require_file(path)
    manifest_path = _require_file(str(path) + ".manifest")
    try:
        manifest = DatasetManifest.parse(manifest_path.read_text())
        images, labels = load_small_dataset(data_path, manifest)
    except ValueError as exc:
        raise CliError("BAD_ARTIFACT", str(exc))
    return images.astype(np.float32) / 255.0, labels, manifest


def _load_backbone(path):
    _require_file(path)
    try:
        params, teacher, manifest = load_train_checkpoint(path)
    except ValueError as exc:
        raise CliError("BAD_ARTIFACT", str(exc))
    flat = manifest.get("extra", {}).get("config", {})
    cfg = train_config_from_flat({**TrainConfig().flat_dict(), **flat}) if flat else TrainConfig()
    return params, teacher, cfg, manifest


def _write_text(path, text: str) -> None:
    Path(path).write_text(text)


def _stamp(cfg_hash: str) -> str:
    return f"config_hash = {cfg_hash}\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    out = _out_dir(args.out)
    spec = SceneSpec()
    flat = {"n_train": args.n_train, "n_eval": args.n_eval, "seed": args.seed,
            "side": spec.canvas_side}
    for name, n, seed_off in (("train", args.n_train, 0), ("eval", args.n_eval, 1)):
        images, labels = generate_dataset(spec, n, seed=args.seed + seed_off)
        write_dataset(out / f"{name}.bin", images, labels, len(spec.shape_kinds), (n, 0, 0))
    _write_text(out / "gen-data.cfg", dump_config(flat) + _stamp(config_hash(flat)))
    print(f"wrote {args.n_train} train / {args.n_eval} eval images to {out}")
    return 0


def cmd_sample_validate(args) -> int:
    out = _out_dir(args.out)
    flat = load_flat_config(args)
    cfg = train_config_from_flat(flat)
    constraints = SamplerConstraints() if args.default_constraints else cfg.sampler
    report = validate_distribution(args.n, constraints, seed=flat["seed"],
                                   src_dims=(args.src_side, args.src_side))
    doc = report.serialize() + _stamp(config_hash(flat))
    _write_text(out / "validation-report.txt", doc)
    worst = max(report.ks.values())
    frac = float(np.mean(report.dice < 0.1))
    print(f"n={args.n} worst_ks={worst:.4f} dice<0.1 frac={frac:.4f}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args.out)
    flat = load_flat_config(args)
    cfg = train_config_from_flat(flat)
    images, _, _ = _load_dataset(args.data)
    if images.shape[1] != cfg.encoder.image_side:
        images = resize_batch(images, cfg.encoder.image_side)
    _write_text(out / "train.cfg", dump_config(flat) + _stamp(cfg.hash()))
    result = train(cfg, images, out_dir=out)
    last = result.metrics[-1]
    print(f"trained {result.step} steps; final loss_total={last['loss_total']:.6f}")
    return 0


def cmd_eval_spatial(args) -> int:
    out = _out_dir(args.out)
    params, _, cfg, manifest = _load_backbone(args.checkpoint)
    train_images, _, _ = _load_dataset(args.train_data)
    eval_images, _, _ = _load_dataset(args.eval_data)
    side = cfg.encoder.image_side
    report = eval_spatial(params, cfg.encoder, resize_batch(train_images, side),
                          resize_batch(eval_images, side), cfg.sampler,
                          seed=args.seed, backbone_id=manifest["config_hash"])
    lines = [
        "spssl-spatial-eval v1",
        f"backbone = {report.backbone_id}",
        f"pairs = {report.pair_count}",
        f"seed = {args.seed}",
        f"mean_position_error = {report.mean_position_error:.6f}",
        f"mean_scale_error = {report.mean_scale_error:.6f}",
    ]
    _write_text(out / "spatial-eval.txt", "\n".join(lines) + "\n" + _stamp(manifest["config_hash"]))
    print(f"position error {report.mean_position_error:.4f}, "
          f"scale error {report.mean_scale_error:.4f}")
    return 0


def cmd_probe(args) -> int:
    out = _out_dir(args.out)
    params, _, cfg, manifest = _load_backbone(args.checkpoint)
    side = cfg.encoder.image_side
    train_images, train_labels, man = _load_dataset(args.train_data)
    eval_images, eval_labels, _ = _load_dataset(args.eval_data)
    feats = extract_class_features(resize_batch(train_images, side), params, cfg.encoder)
    probe = train_linear_probe(feats, train_labels, seed=args.seed)
    eval_feats = extract_class_features(resize_batch(eval_images, side), params, cfg.encoder)
    acc = probe_accuracy(probe, eval_feats, eval_labels)
    save_checkpoint(out / "probe.spck", {"w": probe.w, "b": probe.b}, 0,
                    manifest["config_hash"], extra={"lr": probe.lr, "classes": man.class_count})
    lines = [
        "spssl-probe-report v1",
        f"seed = {args.seed}",
        f"train_accuracy = {probe.accuracy:.6f}",
        f"eval_accuracy = {acc:.6f}",
        f"lr = {probe.lr:g}",
        f"head_checksum = {probe.checksum}",
    ]
    _write_text(out / "probe-report.txt", "\n".join(lines) + "\n" + _stamp(manifest["config_hash"]))
    print(f"probe eval accuracy {acc:.4f}")
    return 0


def cmd_gen_jigsaw(args) -> int:
    out = _out_dir(args.out)
    perm_set = jig.generate_permutation_set(k=args.k, seed=args.seed)
    _write_text(out / "permutations.txt", perm_set.serialize())
    print(f"k={perm_set.size} min_hamming={perm_set.min_hamming} "
          f"mean_hamming={perm_set.mean_hamming:.4f}")
    return 0


def _load_perm_set(path) -> jig.PermutationSet:
    try:
        return jig.PermutationSet.parse(_require_file(path).read_text())
    except ValueError as exc:
        raise CliError("BAD_ARTIFACT", str(exc))


def cmd_train_jigsaw_head(args) -> int:
    out = _out_dir(args.out)
    params, _, cfg, manifest = _load_backbone(args.checkpoint)
    perm_set = _load_perm_set(args.perms)
    images, _, _ = _load_dataset(args.data)
    tiles3 = resize_batch(images, JIGSAW_SIDE)
    feats = jigsaw_tile_features(tiles3, params, cfg.encoder)
    head = train_jigsaw_head(feats, perm_set, seed=args.seed)
    save_checkpoint(out / "jigsaw-head.spck", head, 0, manifest["config_hash"],
                    extra={"k": perm_set.size, "seed": args.seed})
    print(f"trained jigsaw head over k={perm_set.size} permutations")
    return 0


def cmd_eval_jigsaw(args) -> int:
    out = _out_dir(args.out)
    params, _, cfg, manifest = _load_backbone(args.checkpoint)
    perm_set = _load_perm_set(args.perms)
    head_arrays, head_manifest = load_checkpoint(_require_file(args.head))
    head = {k: Tensor(v) for k, v in head_arrays.items()}
    probe_arrays, _ = load_checkpoint(_require_file(args.probe))
    probe = ProbeResult(accuracy=0.0, lr=0.0, w=probe_arrays["w"], b=probe_arrays["b"])
    images, labels, _ = _load_dataset(args.data)
    tiles3 = resize_batch(images, JIGSAW_SIDE)
    feats = jigsaw_tile_features(tiles3, params, cfg.encoder)
    order_acc, recog_acc = eval_jigsaw(tiles3, labels, feats, perm_set, head,
                                       probe, params, cfg.encoder, seed=args.seed)
    lines = [
        "spssl-jigsaw-eval v1",
        f"seed = {args.seed}",
        f"k = {perm_set.size}",
        f"order_accuracy = {order_acc:.6f}",
        f"recognition_accuracy = {recog_acc:.6f}",
    ]
    _write_text(out / "jigsaw-eval.txt", "\n".join(lines) + "\n" + _stamp(manifest["config_hash"]))
    print(f"order accuracy {order_acc:.4f}, recognition accuracy {recog_acc:.4f}")
    return 0


def cmd_occlude(args) -> int:
    out = _out_dir(args.out)
    images, labels, man = _load_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    n = min(args.n, images.shape[0])
    occluded = np.empty((n,) + images.shape[1:], dtype=images.dtype)
    coverages = np.empty(n)
    for i in range(n):
        occluded[i], coverages[i], _ = occlude(images[i], args.coverage, rng)
    write_dataset(out / "occluded.bin", occluded, labels[:n], man.class_count, (n, 0, 0))
    flat = {"coverage": args.coverage, "n": n, "seed": args.seed}
    lines = [
        "spssl-occlusion-report v1",
        f"n = {n}",
        f"seed = {args.seed}",
        f"requested_coverage = {args.coverage:.6f}",
        f"mean_realized_coverage = {np.mean(coverages):.6f}",
        f"max_coverage_deviation = {np.max(np.abs(coverages - args.coverage)):.6f}",
    ]
    _write_text(out / "occlusion-report.txt", "\n".join(lines) + "\n" + _stamp(config_hash(flat)))
    print(f"mean realized coverage {np.mean(coverages):.4f} over {n} images")
    return 0


def cmd_export_attention(args) -> int:
    out = _out_dir(args.out)
    params, _, cfg, manifest = _load_backbone(args.checkpoint)
    images, _, _ = _load_dataset(args.data)
    n = min(args.n, images.shape[0])
    maps = normalized_attention_maps(resize_batch(images[:n], cfg.encoder.image_side),
                                     params, cfg.encoder)
    lines = ["spssl-attention-maps v1",
             f"images = {n}",
             f"heads = {maps.shape[1]}",
             f"grid = {maps.shape[2]}"]
    for i in range(n):
        for h in range(maps.shape[1]):
            lines.append(f"[map image={i} head={h}]")
            for row in maps[i, h]:
                lines.append("row = " + " ".join(f"{v:.6f}" for v in row))
    _write_text(out / "attention-maps.txt",
                "\n".join(lines) + "\n" + _stamp(manifest["config_hash"]))
    print(f"exported {n * maps.shape[1]} attention maps")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spssl",
        description="Self-supervised pretraining with a spatial-relation pretext task.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = add("gen-data", cmd_gen_data, "render the synthetic shape dataset")
    p.add_argument("--n-train", type=int, default=5000, help="training images")
    p.add_argument("--n-eval", type=int, default=1000, help="evaluation images")

    p = add("sample-validate", cmd_sample_validate, "check sampler marginals against their targets")
    p.add_argument("--n", type=int, default=20000, help="number of sampled pairs")
    p.add_argument("--config", help="training config file (for sampler constraints)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-key config override (repeatable)")
    p.add_argument("--src-side", type=int, default=224, help="source image side in pixels")
    p.add_argument("--default-constraints", action="store_true",
                   help="validate the default constraint set instead of the config's")

    p = add("train", cmd_train, "pretrain a backbone")
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-key config override (repeatable)")

    p = add("eval-spatial", cmd_eval_spatial, "frozen-feature relative-pose regression error")
    p.add_argument("--checkpoint", required=True, help="trained backbone checkpoint")
    p.add_argument("--train-data", required=True, help="dataset for head training")
    p.add_argument("--eval-data", required=True, help="dataset for error measurement")

    p = add("probe", cmd_probe, "linear classification probe on frozen features")
    p.add_argument("--checkpoint", required=True, help="trained backbone checkpoint")
    p.add_argument("--train-data", required=True, help="dataset for probe training")
    p.add_argument("--eval-data", required=True, help="dataset for accuracy measurement")

    p = add("gen-jigsaw", cmd_gen_jigsaw, "build the far-apart permutation set")
    p.add_argument("--k", type=int, default=1000, help="number of permutations")

    p = add("train-jigsaw-head", cmd_train_jigsaw_head, "train the permutation classifier")
    p.add_argument("--checkpoint", required=True, help="trained backbone checkpoint")
    p.add_argument("--perms", required=True, help="permutation set file")
    p.add_argument("--data", required=True, help="dataset for head training")

    p = add("eval-jigsaw", cmd_eval_jigsaw, "order accuracy and reconstruction recognition")
    p.add_argument("--checkpoint", required=True, help="trained backbone checkpoint")
    p.add_argument("--perms", required=True, help="permutation set file")
    p.add_argument("--head", required=True, help="trained jigsaw head checkpoint")
    p.add_argument("--probe", required=True, help="trained linear probe checkpoint")
    p.add_argument("--data", required=True, help="evaluation dataset file")

    p = add("occlude", cmd_occlude, "write an occluded copy of a dataset")
    p.add_argument("--data", required=True, help="source dataset file")
    p.add_argument("--coverage", type=float, default=0.1, help="occluded area fraction")
    p.add_argument("--n", type=int, default=1000, help="number of images to occlude")

    p = add("export-attention", cmd_export_attention, "dump normalized class-token attention maps")
    p.add_argument("--checkpoint", required=True, help="trained backbone checkpoint")
    p.add_argument("--data", required=True, help="images to visualize")
    p.add_argument("--n", type=int, default=8, help="number of images")

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: DIVERGENCE: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: INVARIANT_VIOLATION: {exc}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
