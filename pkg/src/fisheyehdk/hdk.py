"""Hyperbolic deformable kernel (HDK) offset predictor.

The network maps a feature map to a per-pixel field of kernel tap offsets::

    average pool by 2**m -> nodes -> exp0 -> Mobius linear layer (+ bias)
    -> log0 -> neighbour aggregation on the grid graph -> bilinear upsample

The output has ``2 * kh * kw`` channels holding ``(dy, dx)`` for each tap in
row-major tap order, in pixels, added to the regular tap positions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autograd as ad
from . import gyro
from .graph import (
    aggregate_neighbors,
    build_grid_graph,
    downsample_avg,
    flatten_to_nodes,
    unflatten_nodes,
    upsample_bilinear,
)
from .io import atomic_write_bytes
from .validation import check_feature_map, check_kernel_size


@dataclass
class HdkParams:
    weight: object  # [2*kh*kw, d], ndarray or Tensor
    bias: object  # [2*kh*kw], a point of the ball
    c: float = 1.0
    kernel_size: tuple = (3, 3)
    m: int = 2
    connectivity: int = 4
    normalize: bool = True

    def __post_init__(self):
        self.kernel_size = check_kernel_size(self.kernel_size)
        if self.m < 0:
            raise ValueError("m must be non-negative")
        kh, kw = self.kernel_size
        w = ad.as_array(self.weight)
        b = ad.as_array(self.bias)
        if w.ndim != 2 or w.shape[0] != 2 * kh * kw:
            raise ValueError(f"weight must have {2 * kh * kw} rows, got shape {w.shape}")
        if b.shape != (2 * kh * kw,):
            raise ValueError(f"bias must have shape ({2 * kh * kw},), got {b.shape}")
        if np.sum(b * b) * self.c >= 1.0:
            raise ValueError("bias must lie strictly inside the ball")

    @property
    def out_channels(self) -> int:
        kh, kw = self.kernel_size
        return 2 * kh * kw

    @property
    def in_features(self) -> int:
        return ad.as_array(self.weight).shape[1]


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_hdk_params(d, kernel_size=(3, 3), c=1.0, m=2, seed=None, *, weight_radius=None, **kwargs) -> HdkParams:
    """Xavier-uniform weight and a zero bias.

    ``weight_radius``, when given, rescales the flattened weight so its norm is
    at most that value; used when the weight is optimised as a ball point.
    """
    kh, kw = check_kernel_size(kernel_size)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fan_out = 2 * kh * kw
    bound = xavier_bound(d, fan_out)
    weight = rng.uniform(-bound, bound, size=(fan_out, d))
    if weight_radius is not None:
        norm = np.linalg.norm(weight)
        if norm > weight_radius:
            weight = weight * (weight_radius / norm)
    return HdkParams(weight, np.zeros(fan_out), c=c, kernel_size=(kh, kw), m=m, **kwargs)


def hdk_forward(f, params: HdkParams):
    """Kernel offset field ``[B, 2*kh*kw, H, W]`` for the feature map ``f``."""
    B, C, H, W = check_feature_map(f).shape
    if C != params.in_features:
        raise ValueError(f"feature map has {C} channels, HDK weight expects {params.in_features}")
    c = params.c
    low = downsample_avg(f, params.m)
    h, w = ad.as_array(low).shape[2:]
    nodes = flatten_to_nodes(low)
    hyp = gyro.exp_map0(nodes, c)
    lin = gyro.mobius_matvec(params.weight, hyp, c)
    moved = gyro.mobius_add(lin, params.bias, c)
    tangent = gyro.log_map0(moved, c)
    agg = aggregate_neighbors(tangent, build_grid_graph(h, w, params.connectivity), params.normalize)
    field = unflatten_nodes(agg, h, w)
    return upsample_bilinear(field, H, W)


def tap_grid(kernel_size, dilation=1) -> np.ndarray:
    """Regular tap offsets ``[kh*kw, 2]`` relative to the kernel centre, row-major."""
    kh, kw = check_kernel_size(kernel_size)
    r = (np.arange(kh) - (kh - 1) // 2) * dilation
    s = (np.arange(kw) - (kw - 1) // 2) * dilation
    rr, ss = np.meshgrid(r, s, indexing="ij")
    return np.stack([rr.ravel(), ss.ravel()], axis=1).astype(np.float64)


def _kernel_from_channels(n_channels, kernel_size):
    if kernel_size is None:
        k = int(round(np.sqrt(n_channels / 2)))
        if 2 * k * k != n_channels:
            raise ValueError(f"cannot infer a square kernel from {n_channels} offset channels")
        return (k, k)
    kh, kw = check_kernel_size(kernel_size)
    if 2 * kh * kw != n_channels:
        raise ValueError(f"{n_channels} offset channels do not match kernel {kh}x{kw}")
    return kh, kw


def kernel_positions(field, pixel, dilation=1, kernel_size=None, batch=0) -> np.ndarray:
    """Sampling coordinates ``[kh*kw, 2]`` as ``(y, x)`` for one output pixel."""
    data = ad.as_array(field)
    _, K, H, W = data.shape
    y, x = pixel
    if not (0 <= y < H and 0 <= x < W):
        raise IndexError(f"pixel {pixel} outside {H}x{W} field")
    ks = _kernel_from_channels(K, kernel_size)
    offsets = data[batch, :, y, x].reshape(-1, 2)
    return np.array([y, x], dtype=np.float64) + tap_grid(ks, dilation) + offsets


def write_offsets(field: np.ndarray, tap: int, dy, dx) -> None:
    """Store the offset pair of one tap (broadcast over batch and pixels)."""
    field[:, 2 * tap] = dy
    field[:, 2 * tap + 1] = dx


def read_offsets(field, tap: int):
    data = ad.as_array(field)
    return data[:, 2 * tap], data[:, 2 * tap + 1]


def offset_magnitude(field, kernel_size=None) -> np.ndarray:
    """Mean tap displacement length per pixel, ``[B, H, W]``."""
    data = ad.as_array(field)
    B, K, H, W = data.shape
    _kernel_from_channels(K, kernel_size)
    pairs = data.reshape(B, K // 2, 2, H, W)
    return np.sqrt((pairs**2).sum(axis=2)).mean(axis=1)


# header: four little-endian int64 dims, then float64 little-endian payload
_HEADER = struct.Struct("<4q")


def save_kernel_field(path, field) -> None:
    data = np.ascontiguousarray(ad.as_array(field), dtype="<f8")
    if data.ndim != 4:
        raise ValueError("a kernel field is rank 4")
    atomic_write_bytes(path, _HEADER.pack(*data.shape) + data.tobytes())


def load_kernel_field(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    shape = _HEADER.unpack_from(raw)
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if payload.size != int(np.prod(shape)):
        raise ValueError("kernel field payload does not match its header")
    return payload.reshape(shape).astype(np.float64)


class HDKOffsetPredictor(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` draws parameters for the input width, ``transform`` predicts offsets.

    Parameters
    ----------
    kernel_size : int or (int, int)
        Size of the deformable kernel whose taps are predicted.
    curvature : float
        Ball curvature ``c``.
    m : int
        Average-pool factor exponent before graph construction.
    connectivity : {4, 8}
    normalize : bool
        Divide neighbour sums by ``1 + degree``.
    init : {"xavier", "zeros"}
    random_state : int, Generator or None
    """

    def __init__(self, kernel_size=3, curvature=1.0, m=2, connectivity=4, normalize=True,
                 init="xavier", random_state=None):
        self.kernel_size = kernel_size
        self.curvature = curvature
        self.m = m
        self.connectivity = connectivity
        self.normalize = normalize
        self.init = init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_feature_map(X)
        if self.init not in ("xavier", "zeros"):
            raise ValueError(f"unknown init {self.init!r}")
        params = init_hdk_params(
            X.shape[1], self.kernel_size, self.curvature, self.m, self.random_state,
            connectivity=self.connectivity, normalize=self.normalize,
        )
        if self.init == "zeros":
            params.weight = np.zeros_like(params.weight)
        self.params_ = params
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return hdk_forward(check_feature_map(X), self.params_)
