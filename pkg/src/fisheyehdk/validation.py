"""Input checks shared by the array ops and the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from . import autograd as ad


def check_feature_map(f, name="feature map"):
    """Validate a ``[B, C, H, W]`` array or tensor of finite values.

    Plain inputs are converted to float64 arrays; tensors are returned as-is.
    """
    if not ad.is_tensor(f):
        f = np.asarray(f, dtype=np.float64)
    data = ad.as_array(f)
    if data.ndim != 4:
        raise ValueError(f"{name} must be rank 4 [B, C, H, W], got shape {data.shape}")
    if min(data.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{name} contains non-finite values")
    return f


def check_kernel_size(kernel_size):
    if isinstance(kernel_size, numbers.Integral):
        kernel_size = (int(kernel_size), int(kernel_size))
    kh, kw = (int(k) for k in kernel_size)
    if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd and positive, got {(kh, kw)}")
    return kh, kw


def check_labels(labels, num_classes, ignore_id):
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    bad = (labels != ignore_id) & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise ValueError(f"labels outside [0, {num_classes}) and not equal to ignore id {ignore_id}")
    return labels


def check_images(X, channels=None):
    """Batch of images ``[n, C, H, W]`` in float64."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected images of shape [n, C, H, W], got {X.shape}")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {X.shape[1]}")
    return X
