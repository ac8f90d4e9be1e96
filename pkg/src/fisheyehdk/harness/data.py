"""Random shape scenes with per-pixel labels, and their fisheye counterparts."""

from __future__ import annotations

import numpy as np

from ..fisheye import VOID_ID, FisheyeProfile, LabeledImage, warp_to_fisheye

# class colours are fixed across datasets so a class keeps its appearance
_PALETTE_SEED = 20211


def class_palette(num_classes: int) -> np.ndarray:
    rng = np.random.default_rng(_PALETTE_SEED)
    palette = rng.uniform(0.15, 0.85, size=(max(num_classes, 1), 3))
    palette[0] = (0.45, 0.45, 0.45)
    return palette


def _shape_mask(rng, height, width):
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    kind = rng.integers(3)
    cy, cx = rng.uniform(0, height), rng.uniform(0, width)
    scale = min(height, width)
    if kind == 0:  # rectangle
        hh, hw = rng.uniform(0.08, 0.25, size=2) * scale
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    if kind == 1:  # disk
        r = rng.uniform(0.07, 0.2) * scale
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    # stripe: a band of random orientation across the image
    angle = rng.uniform(0, np.pi)
    half = rng.uniform(0.03, 0.08) * scale
    d = (yy - cy) * np.cos(angle) - (xx - cx) * np.sin(angle)
    return np.abs(d) <= half


def render_scene(rng, height, width, num_classes, noise=0.08, max_shapes=6):
    """One perspective image ``[3, H, W]`` and its labels (background is class 0)."""
    palette = class_palette(num_classes)
    labels = np.zeros((height, width), dtype=np.int64)
    if num_classes > 1:
        for _ in range(rng.integers(2, max_shapes + 1)):
            labels[_shape_mask(rng, height, width)] = rng.integers(1, num_classes)
    jitter = rng.normal(0.0, 0.05, size=(num_classes, 3))
    colours = np.clip(palette[:num_classes] + jitter, 0.0, 1.0)
    pixels = colours[labels].transpose(2, 0, 1)
    pixels = pixels + rng.normal(0.0, noise, size=pixels.shape)
    return np.clip(pixels, 0.0, 1.0), labels


def generate_toy_dataset(n, height, width, num_classes, profile: FisheyeProfile | None, seed=0,
                         void_id=VOID_ID, noise=0.08):
    """``n`` pairs ``(perspective, fisheye)`` of :class:`LabeledImage`.

    With ``profile=None`` the second element is the perspective image itself.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        pixels, labels = render_scene(rng, height, width, num_classes, noise)
        persp = LabeledImage(pixels, labels, void_id, np.ones((height, width), dtype=bool))
        fish = persp if profile is None else warp_to_fisheye(
            LabeledImage(pixels, labels, void_id), profile)
        pairs.append((persp, fish))
    return pairs


def stack_pairs(pairs, which="fisheye"):
    """``(X [n, 3, H, W], y [n, H, W], mask [n, H, W])`` from generated pairs."""
    pick = 1 if which == "fisheye" else 0
    items = [p[pick] for p in pairs]
    if not items:
        raise ValueError("empty dataset")
    X = np.stack([it.pixels for it in items])
    y = np.stack([it.labels for it in items])
    mask = np.stack([it.mask if it.mask is not None else np.ones(it.shape, bool) for it in items])
    return X, y, mask


def class_histogram(labels, num_classes, void_id=VOID_ID) -> np.ndarray:
    labels = np.asarray(labels)
    return np.bincount(labels[labels != void_id].ravel(), minlength=num_classes)
