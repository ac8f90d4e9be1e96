"""Segmentation loss and confusion-matrix metrics with an ignored void label."""

from __future__ import annotations

import csv
import io

import numpy as np

from . import autograd as ad
from .fisheye import VOID_ID
from .io import atomic_write_text
from .validation import check_labels


def weighted_cross_entropy(logits, labels, class_weights=None, ignore_id=VOID_ID):
    """Mean over non-ignored pixels of ``w[label] * -log softmax(logits)[label]``.

    ``logits`` is ``[B, K, H, W]`` (array or tensor), ``labels`` ``[B, H, W]``.
    """
    z = ad.as_array(logits)
    B, K, H, W = z.shape
    labels = check_labels(labels, K, ignore_id)
    if labels.shape != (B, H, W):
        raise ValueError(f"labels shape {labels.shape} != {(B, H, W)}")
    w = np.ones(K) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (K,):
        raise ValueError(f"expected {K} class weights, got shape {w.shape}")
    keep = labels != ignore_id
    n = int(keep.sum())
    if n == 0:
        raise ValueError("every pixel is ignored; the loss is undefined")

    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    safe = np.where(keep, labels, 0)
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    pix_w = np.where(keep, w[safe], 0.0)
    loss = float(-(pix_w * picked).sum() / n)

    def back(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
        return (g * (p - onehot) * (pix_w / n)[:, None],)

    return ad.wrap(np.asarray(loss), (logits,), back)


def inverse_frequency_weights(labels, num_classes, ignore_id=VOID_ID, clamp=(0.1, 10.0)):
    """``total / (K * count_k)`` clipped to ``clamp``; absent classes get the upper bound."""
    labels = np.asarray(labels)
    valid = labels[labels != ignore_id]
    counts = np.bincount(valid.ravel(), minlength=num_classes)[:num_classes].astype(np.float64)
    with np.errstate(divide="ignore"):
        w = np.where(counts > 0, valid.size / (num_classes * counts), np.inf)
    return np.clip(w, *clamp)


class ConfusionMatrix:
    """Counts with ground truth along rows and predictions along columns."""

    def __init__(self, num_classes, ignore_id=VOID_ID, counts=None):
        self.num_classes = int(num_classes)
        self.ignore_id = ignore_id
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64) if counts is None else np.array(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes):
            raise ValueError("counts must be square with num_classes rows")

    def accumulate(self, pred, truth):
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
        keep = truth != self.ignore_id
        t = truth[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        K = self.num_classes
        if t.size and (t.min() < 0 or t.max() >= K or p.min() < 0 or p.max() >= K):
            raise ValueError(f"labels outside [0, {K})")
        self.counts += np.bincount(t * K + p, minlength=K * K).reshape(K, K)
        return self

    def __add__(self, other):
        if other.num_classes != self.num_classes:
            raise ValueError("class counts differ")
        return ConfusionMatrix(self.num_classes, self.ignore_id, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _require_data(self):
        if self.total == 0:
            raise ValueError("confusion matrix is empty")

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN where the class is absent from truth and prediction."""
        self._require_data()
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(0) + self.counts.sum(1) - tp
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(union > 0, tp / union, np.nan)

    def per_class_acc(self) -> np.ndarray:
        self._require_data()
        tp = np.diag(self.counts).astype(np.float64)
        rows = self.counts.sum(1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, tp / rows, np.nan)

    def miou(self) -> float:
        return float(np.nanmean(self.per_class_iou()))

    def mean_acc(self) -> float:
        return float(np.nanmean(self.per_class_acc()))

    def pixel_acc(self) -> float:
        self._require_data()
        return float(np.trace(self.counts) / self.total)

    def rows(self, class_names=None):
        names = class_names or [f"class_{k}" for k in range(self.num_classes)]
        iou = self.per_class_iou()
        acc = self.per_class_acc()
        out = [(names[k], iou[k], acc[k]) for k in range(self.num_classes)]
        out.append(("mean", self.miou(), self.mean_acc()))
        return out

    def to_csv(self, path, class_names=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "iou", "acc"])
        for name, iou, acc in self.rows(class_names):
            writer.writerow([name, f"{iou:.6f}", f"{acc:.6f}"])
        atomic_write_text(path, buf.getvalue())


def miou(cm: ConfusionMatrix) -> float:
    return cm.miou()


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    return cm.per_class_iou()


def per_class_acc(cm: ConfusionMatrix) -> np.ndarray:
    return cm.per_class_acc()
