"""Command line entry point: ``fisheyehdk <command> [options]``.

Exit status is 0 on success, 1 on invalid input or configuration and 2 when
a computation produces non-finite values or a gradient check fails.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .. import io as pngio
from ..fisheye import LabeledImage, rectify, warp_to_fisheye
from ..gradcheck import TOLERANCE, run_gradcheck
from .checkpoint import CheckpointError
from .config import ConfigError, load_config, save_config
from .data import generate_toy_dataset
from .experiments import CHECKPOINT_NAME, compare_modes, dump_kernels, evaluate, make_dataset, train

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

log = logging.getLogger("fisheyehdk")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="TOML config file or preset:NAME")
    p.add_argument("--seed", type=int, help="run seed (dataset seed for gen-data)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--mode", choices=("none", "rdc", "hdk"))
    p.add_argument("--f", type=float, help="fisheye focal length in pixels")
    p.add_argument("--epochs", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set optim.lr_encoder=0.02")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="fisheyehdk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic perspective/fisheye dataset as PNGs")
    _common(p)

    for name, text in (("warp", "warp a perspective PNG to fisheye"), ("rectify", "undo the fisheye warp")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("image", help="input 8-bit PNG")
        p.add_argument("--labels", help="optional label-map PNG warped alongside")
        p.add_argument("--mask", help="validity mask PNG (rectify only)")

    p = sub.add_parser("train", help="train a toy segmenter")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's validation split")
    _common(p)
    p.add_argument("--checkpoint", help=f"defaults to OUT/{CHECKPOINT_NAME}")

    p = sub.add_parser("dump-kernels", help="tap positions of the deformable kernel at chosen pixels")
    _common(p)
    p.add_argument("--checkpoint", help=f"defaults to OUT/{CHECKPOINT_NAME}")
    p.add_argument("--image", help="PNG to run on (defaults to the first validation image)")
    p.add_argument("--pixel", action="append", default=[], metavar="Y,X",
                   help="pixel to sample (repeatable); defaults to centre and top-left region")

    p = sub.add_parser("compare", help="train each mode over the configured seeds")
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of all differentiable ops")
    _common(p)
    p.add_argument("--size", type=int, default=4)
    return parser


def _config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={_quote(args.out)}")
    if args.mode is not None:
        overrides.append(f"model.mode={_quote(args.mode)}")
    if args.f is not None:
        overrides.append(f"dataset.f={float(args.f)!r}")
    if args.epochs is not None:
        overrides.append(f"optim.epochs={args.epochs}")
    return load_config(args.config, overrides)


def _quote(text):
    return '"' + str(text).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _profile(cfg):
    profile = cfg.dataset.profile()
    if profile is None:
        raise ConfigError("a positive focal length (--f) is required")
    return profile


def cmd_gen_data(args, cfg):
    seed = cfg.dataset.seed if args.seed is None else args.seed
    d = cfg.dataset
    pairs = generate_toy_dataset(d.n_train + d.n_val, d.size, d.size, d.num_classes, _profile(cfg),
                                 seed=seed, noise=d.noise)
    for sub in ("perspective", "fisheye"):
        os.makedirs(os.path.join(cfg.out, sub), exist_ok=True)
    for i, (persp, fish) in enumerate(pairs):
        split = "train" if i < d.n_train else "val"
        stem = f"{split}_{i:04d}"
        pngio.write_image(os.path.join(cfg.out, "perspective", f"{stem}.png"), persp.pixels)
        pngio.write_labels(os.path.join(cfg.out, "perspective", f"{stem}_labels.png"), persp.labels)
        pngio.write_image(os.path.join(cfg.out, "fisheye", f"{stem}.png"), fish.pixels)
        pngio.write_labels(os.path.join(cfg.out, "fisheye", f"{stem}_labels.png"), fish.labels)
        pngio.write_mask(os.path.join(cfg.out, "fisheye", f"{stem}_mask.png"), fish.mask)
    save_config(cfg, os.path.join(cfg.out, "config.toml"))
    print(f"wrote {len(pairs)} pairs to {cfg.out}")


def _load_labeled(args, cfg):
    pixels = pngio.read_image(args.image)
    labels = pngio.read_labels(args.labels) if args.labels else np.zeros(pixels.shape[1:], dtype=np.int64)
    mask = pngio.read_mask(args.mask) if getattr(args, "mask", None) else None
    return LabeledImage(pixels, labels, mask=mask)


def _write_labeled(out, stem, img, with_labels):
    os.makedirs(out, exist_ok=True)
    pngio.write_image(os.path.join(out, f"{stem}.png"), img.pixels)
    pngio.write_mask(os.path.join(out, f"{stem}_mask.png"), img.mask)
    if with_labels:
        pngio.write_labels(os.path.join(out, f"{stem}_labels.png"), img.labels)


def cmd_warp(args, cfg):
    out = warp_to_fisheye(_load_labeled(args, cfg), _profile(cfg))
    _write_labeled(cfg.out, "fisheye", out, bool(args.labels))
    print(f"wrote fisheye image to {cfg.out}")


def cmd_rectify(args, cfg):
    out = rectify(_load_labeled(args, cfg), _profile(cfg))
    _write_labeled(cfg.out, "rectified", out, bool(args.labels))
    print(f"wrote rectified image to {cfg.out}")


def cmd_train(args, cfg):
    res = train(cfg)
    print(f"mode={cfg.model.mode} seed={cfg.seed} final loss {res.estimator.loss_curve_[-1]:.5f} "
          f"val mIoU {res.miou:.4f} ({res.seconds:.1f}s)")
    print(f"checkpoint: {res.checkpoint}")


def cmd_eval(args, cfg):
    ckpt = args.checkpoint or os.path.join(cfg.out, CHECKPOINT_NAME)
    data = make_dataset(cfg)
    X, y = (data.X_val, data.y_val) if data.X_val is not None else (data.X_train, data.y_train)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "eval_metrics.csv")
    cm = evaluate(ckpt, X, y, path, num_classes=cfg.dataset.num_classes)
    print(f"mIoU {cm.miou():.4f} mAcc {cm.mean_acc():.4f} -> {path}")


def _parse_pixel(text):
    try:
        y, x = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise ValueError(f"pixel must look like Y,X, got {text!r}") from exc
    return y, x


def cmd_dump_kernels(args, cfg):
    ckpt = args.checkpoint or os.path.join(cfg.out, CHECKPOINT_NAME)
    if args.image:
        image = pngio.read_image(args.image)
    else:
        data = make_dataset(cfg)
        image = (data.X_val if data.X_val is not None else data.X_train)[0]
    H, W = image.shape[1:]
    pixels = [_parse_pixel(p) for p in args.pixel] or [(H // 2, W // 2), (H // 5, W // 5)]
    out = os.path.join(cfg.out, "kernels")
    rows = dump_kernels(ckpt, image, pixels, out)
    print(f"wrote {len(rows)} tap rows for {len(pixels)} pixels to {out}")


def cmd_compare(args, cfg):
    rows, summary = compare_modes(cfg)
    for mode, seed, miou in rows:
        print(f"{mode:5s} seed={seed} mIoU {miou:.4f}")
    for mode, (mean, std) in summary.items():
        print(f"{mode:5s} mean {mean:.4f} +- {std:.4f}")


def cmd_gradcheck(args, cfg):
    results, seconds = run_gradcheck(seed=cfg.seed, size=args.size)
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:24s} rel err {r.rel_err:.2e} (tol {TOLERANCE:g})")
    print(f"{sum(r.passed for r in results)}/{len(results)} passed in {seconds:.2f}s")
    if not all(r.passed for r in results):
        raise FloatingPointError("gradient check failed")


COMMANDS = {
    "gen-data": cmd_gen_data, "warp": cmd_warp, "rectify": cmd_rectify, "train": cmd_train,
    "eval": cmd_eval, "dump-kernels": cmd_dump_kernels, "compare": cmd_compare, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; usage errors are validation errors here
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, CheckpointError, ValueError, IndexError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
