"""Train / evaluate / compare runs and kernel-field dumps on the toy dataset."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from ..fisheye import VOID_ID, FisheyeProfile
from ..hdk import kernel_positions, offset_magnitude, save_kernel_field, tap_grid
from ..io import atomic_save_png, atomic_write_text
from .config import ExperimentConfig, save_config
from .data import generate_toy_dataset, stack_pairs
from .segmenter import FisheyeSegmenter

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.fhdk"


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


@dataclass
class ToyData:
    X_train: np.ndarray
    y_train: np.ndarray
    mask_train: np.ndarray
    X_val: np.ndarray | None
    y_val: np.ndarray | None
    mask_val: np.ndarray | None
    profile: FisheyeProfile | None
    X_pre: np.ndarray | None = None
    y_pre: np.ndarray | None = None


def make_dataset(config: ExperimentConfig) -> ToyData:
    """Fisheye train/val split drawn from ``dataset.seed`` (shared by all runs of a config)."""
    d = config.dataset
    profile = d.profile()
    pairs = generate_toy_dataset(d.n_train + d.n_val, d.size, d.size, d.num_classes, profile,
                                 seed=d.seed, noise=d.noise)
    X, y, mask = stack_pairs(pairs, "fisheye")
    n = d.n_train
    pre = (None, None)
    if config.optim.pretrain_epochs:
        # fresh undistorted scenes, disjoint from the fisheye split
        flat = generate_toy_dataset(d.n_train, d.size, d.size, d.num_classes, None,
                                    seed=d.seed + 1, noise=d.noise)
        pre = stack_pairs(flat, "perspective")[:2]
    if d.n_val:
        return ToyData(X[:n], y[:n], mask[:n], X[n:], y[n:], mask[n:], profile, *pre)
    return ToyData(X, y, mask, None, None, None, profile, *pre)


@dataclass
class TrainResult:
    estimator: FisheyeSegmenter
    checkpoint: str | None
    metrics_csv: str | None
    loss_csv: str | None
    miou: float
    seconds: float


def train(config: ExperimentConfig, out_dir=None, data: ToyData | None = None, seed=None,
          write=True) -> TrainResult:
    """Fit a segmenter for ``config``; writes checkpoint, metrics and loss-curve CSVs to ``out_dir``."""
    config.validate()
    data = make_dataset(config) if data is None else data
    out_dir = config.out if out_dir is None else out_dir
    t0 = time.perf_counter()
    params = config.estimator_params(seed)
    init = None
    if config.optim.pretrain_epochs:
        if data.X_pre is None:
            raise ValueError("pretraining requested but the dataset has no perspective split")
        init = FisheyeSegmenter(**dict(params, mode="none", epochs=config.optim.pretrain_epochs))
        init.fit(data.X_pre, data.y_pre)
    est = FisheyeSegmenter(**params)
    est.fit(data.X_train, data.y_train, data.X_val, data.y_val, init=init)
    seconds = time.perf_counter() - t0
    X_eval, y_eval = (data.X_val, data.y_val) if data.X_val is not None else (data.X_train, data.y_train)
    cm = est.confusion(X_eval, y_eval)
    paths = (None, None, None)
    if write:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, CHECKPOINT_NAME)
        est.save(ckpt, config.to_dict())
        metrics = os.path.join(out_dir, "metrics.csv")
        cm.to_csv(metrics)
        curve = os.path.join(out_dir, "loss_curve.csv")
        vals = est.val_miou_ or [float("nan")] * len(est.loss_curve_)
        rows = [(e, f"{l:.10f}", f"{v:.6f}") for e, (l, v) in enumerate(zip(est.loss_curve_, vals))]
        atomic_write_text(curve, _csv_text(["epoch", "loss", "val_miou"], rows))
        save_config(config, os.path.join(out_dir, "config.toml"))
        paths = (ckpt, metrics, curve)
    log.info("trained mode=%s seed=%s in %.1fs, mIoU %.4f", est.mode, est.random_state, seconds, cm.miou())
    return TrainResult(est, *paths, cm.miou(), seconds)


def evaluate(checkpoint, X, y, out_csv=None, num_classes=None):
    """Confusion matrix of a saved model on ``(X, y)``; optionally written as metrics CSV."""
    est = FisheyeSegmenter.load(checkpoint)
    if num_classes is not None and num_classes != est.num_classes_:
        raise ValueError(f"checkpoint has {est.num_classes_} classes, dataset has {num_classes}")
    if len(X) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    y = np.asarray(y)
    labelled = y[y != est.ignore_id]
    if labelled.size and labelled.max() >= est.num_classes_:
        raise ValueError(f"dataset has label {labelled.max()} but the checkpoint has {est.num_classes_} classes")
    cm = est.confusion(X, y)
    if out_csv is not None:
        cm.to_csv(out_csv)
    return cm


def _overlay(image, positions, scale=4):
    """RGB overlay with the taps of each requested pixel drawn on an upscaled image."""
    rgb = np.clip(np.rint(np.asarray(image)[:3] * 255), 0, 255).astype(np.uint8)
    if rgb.shape[0] == 1:
        rgb = np.repeat(rgb, 3, axis=0)
    canvas = Image.fromarray(rgb.transpose(1, 2, 0), "RGB").resize(
        (rgb.shape[2] * scale, rgb.shape[1] * scale), Image.NEAREST)
    draw = ImageDraw.Draw(canvas)
    for (py, px), taps in positions:
        cy, cx = (py + 0.5) * scale, (px + 0.5) * scale
        draw.rectangle([cx - 2, cy - 2, cx + 2, cy + 2], outline=(255, 255, 255))
        for ty, tx in taps:
            y, x = (ty + 0.5) * scale, (tx + 0.5) * scale
            draw.ellipse([x - 2, y - 2, x + 2, y + 2], fill=(255, 32, 32))
    return canvas


def dump_kernels(checkpoint, image, pixels, out_dir, layer=None):
    """Write ``kernels.csv`` (one row per pixel and tap), ``kernels.png`` and the raw field.

    Returns the list of CSV rows.
    """
    est = FisheyeSegmenter.load(checkpoint)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError("image must be [C, H, W]")
    field = est.kernel_field(image[None], layer)
    _, _, H, W = field.shape
    for py, px in pixels:
        if not (0 <= py < H and 0 <= px < W):
            raise IndexError(f"pixel ({py}, {px}) outside the {H}x{W} image")
    os.makedirs(out_dir, exist_ok=True)
    k = est.model_.kernel_size
    grid = tap_grid(k)
    rows, drawn = [], []
    for py, px in pixels:
        taps = kernel_positions(field, (py, px), kernel_size=k)
        drawn.append(((py, px), taps))
        for t, ((ty, tx), (gy, gx)) in enumerate(zip(taps, grid)):
            rows.append((py, px, t, f"{ty:.6f}", f"{tx:.6f}", f"{ty - py - gy:.6f}", f"{tx - px - gx:.6f}"))
    atomic_write_text(os.path.join(out_dir, "kernels.csv"),
                      _csv_text(["y", "x", "tap", "pos_y", "pos_x", "dy", "dx"], rows))
    canvas = _overlay(image, drawn)
    atomic_save_png(canvas, os.path.join(out_dir, "kernels.png"))
    save_kernel_field(os.path.join(out_dir, "kernel_field.bin"), field)
    return rows


def radial_offset_profile(field, mask, center=None, inner=0.1, outer=0.8):
    """Mean offset magnitude near the optical centre and in the outer radial band.

    ``field`` is ``[B, 2T, H, W]``, ``mask`` ``[B, H, W]`` marks valid fisheye pixels.
    ``R`` is the largest radius of a valid pixel; the centre disk is ``r <= inner*R``
    and the band ``outer*R <= r <= R``.  Returns ``(center_mean, band_mean, R)``.
    """
    mag = offset_magnitude(field)
    mask = np.asarray(mask, dtype=bool)
    _, H, W = mag.shape
    cy, cx = ((H - 1) / 2, (W - 1) / 2) if center is None else center
    yy, xx = np.mgrid[0:H, 0:W]
    r = np.broadcast_to(np.hypot(yy - cy, xx - cx), mag.shape)
    R = float(r[mask].max())
    centre = mask & (r <= inner * R)
    band = mask & (r >= outer * R)
    return float(mag[centre].mean()), float(mag[band].mean()), R


def compare_modes(config: ExperimentConfig, out_dir=None, write=True):
    """Train every (mode, seed) pair of ``config.compare`` on one shared dataset.

    Returns ``(rows, summary)`` with rows ``(mode, seed, miou)`` and summary
    ``{mode: (mean, std)}``; writes ``compare.csv`` and ``compare_summary.csv``.
    """
    config.validate()
    data = make_dataset(config)
    out_dir = config.out if out_dir is None else out_dir
    rows = []
    for mode in config.compare.modes:
        for seed in config.compare.seeds:
            cfg = ExperimentConfig.from_dict(config.to_dict())
            cfg.model.mode = mode
            cfg.seed = int(seed)
            res = train(cfg, data=data, write=False)
            rows.append((mode, int(seed), res.miou))
    summary = {}
    for mode in dict.fromkeys(config.compare.modes):
        vals = np.array([m for md, _, m in rows if md == mode])
        summary[mode] = (float(vals.mean()), float(vals.std()))
    if write:
        os.makedirs(out_dir, exist_ok=True)
        atomic_write_text(os.path.join(out_dir, "compare.csv"),
                          _csv_text(["mode", "seed", "miou"], [(m, s, f"{v:.6f}") for m, s, v in rows]))
        atomic_write_text(os.path.join(out_dir, "compare_summary.csv"),
                          _csv_text(["mode", "mean_miou", "std_miou"],
                                    [(m, f"{a:.6f}", f"{b:.6f}") for m, (a, b) in summary.items()]))
        atomic_write_text(os.path.join(out_dir, "compare.json"), json.dumps(
            {"config_hash": config.hash(), "summary": summary}, indent=2))
    return rows, summary


def toy_offset_experiment(config: ExperimentConfig, data: ToyData | None = None):
    """Train ``config`` (expected mode hdk) and measure the radial offset profile on validation images."""
    data = make_dataset(config) if data is None else data
    res = train(config, data=data, write=False)
    X = data.X_val if data.X_val is not None else data.X_train
    mask = data.mask_val if data.mask_val is not None else data.mask_train
    field = res.estimator.kernel_field(X)
    centre, band, R = radial_offset_profile(field, mask)
    return {"center": centre, "band": band, "R": R, "miou": res.miou, "seconds": res.seconds,
            "estimator": res.estimator}


__all__ = [
    "CHECKPOINT_NAME", "ToyData", "TrainResult", "VOID_ID", "compare_modes", "dump_kernels",
    "evaluate", "make_dataset", "radial_offset_profile", "toy_offset_experiment", "train",
]
