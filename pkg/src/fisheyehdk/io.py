"""PNG reading and writing for images, label maps and validity masks."""

from __future__ import annotations

import os
import tempfile

import numpy as np
from PIL import Image


def atomic_save_png(image: Image.Image, path):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=directory)
    os.close(fd)
    try:
        image.save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes):
    """Write ``data`` to a sibling temp file, then rename it over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_image(path, pixels):
    """Save ``[C, H, W]`` values in [0, 1] as an 8-bit PNG (1 or 3 channels)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    arr = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[0] == 1:
        img = Image.fromarray(arr[0], mode="L")
    elif arr.shape[0] == 3:
        img = Image.fromarray(arr.transpose(1, 2, 0), mode="RGB")
    else:
        raise ValueError("only 1- or 3-channel images can be written")
    atomic_save_png(img, path)


def read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB") if img.mode not in ("L", "RGB") else img)
    arr = arr.astype(np.float64) / 255.0
    return arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)


def write_labels(path, labels):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label ids must fit in 8 bits")
    atomic_save_png(Image.fromarray(labels.astype(np.uint8), mode="L"), path)


def read_labels(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")).astype(np.int64)


def write_mask(path, mask):
    atomic_save_png(Image.fromarray(np.asarray(mask, dtype=bool)).convert("1"), path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 0
