"""Plain, deformable and restricted-deformable 2D convolution.

All three share the same column layout ``[B, C_in, kh*kw, H_out, W_out]`` so
that a zero offset field reproduces :func:`conv2d` exactly.  Samples outside
the input read as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ad
from .hdk import tap_grid
from .validation import check_feature_map


def bilinear_sample(f, b: int, c: int, y: float, x: float) -> float:
    """Bilinear value of channel ``c`` of batch item ``b`` at ``(y, x)``, zero outside."""
    data = ad.as_array(f)
    H, W = data.shape[2:]
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    ly, lx = y - y0, x - x0
    total = 0.0
    for yy, wy in ((y0, 1.0 - ly), (y0 + 1, ly)):
        for xx, wx in ((x0, 1.0 - lx), (x0 + 1, lx)):
            if 0 <= yy < H and 0 <= xx < W:
                total += wy * wx * data[b, c, yy, xx]
    return float(total)


def bilinear_gather(f, py, px):
    """Sample every channel of ``f`` at positions ``py, px`` of shape ``[B, *S]``.

    Returns ``[B, C, *S]``; differentiable in ``f`` and in both position arrays.
    """
    x = ad.as_array(f)
    Y = ad.as_array(py)
    X = ad.as_array(px)
    B, C, H, W = x.shape
    if Y.shape != X.shape or Y.shape[0] != B:
        raise ValueError("position arrays must share a shape with leading batch dim")
    S = Y.shape[1:]
    L = int(np.prod(S))
    Y = Y.reshape(B, 1, L)
    X = X.reshape(B, 1, L)
    y0 = np.floor(Y)
    x0 = np.floor(X)
    ly = Y - y0
    lx = X - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    xflat = x.reshape(B, C, H * W)

    corners = []
    out = np.zeros((B, C, L))
    for dy in (0, 1):
        wy = ly if dy else 1.0 - ly
        sy = 1.0 if dy else -1.0
        yy = y0 + dy
        for dx in (0, 1):
            wx = lx if dx else 1.0 - lx
            sx = 1.0 if dx else -1.0
            xx = x0 + dx
            valid = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            idx = np.clip(yy, 0, H - 1) * W + np.clip(xx, 0, W - 1)
            vals = np.take_along_axis(xflat, idx, axis=2) * valid
            out += wy * wx * vals
            corners.append((idx, valid, wy, wx, sy, sx, vals))

    def back(g):
        g = g.reshape(B, C, L)
        gx = None
        if isinstance(f, ad.Tensor) and f.requires_grad:
            base = (np.arange(B)[:, None, None] * C + np.arange(C)[None, :, None]) * (H * W)
            flat_idx = []
            flat_w = []
            for idx, valid, wy, wx, *_ in corners:
                flat_idx.append((base + idx).ravel())
                flat_w.append((g * (wy * wx * valid)).ravel())
            gx = np.bincount(
                np.concatenate(flat_idx), weights=np.concatenate(flat_w), minlength=B * C * H * W
            ).reshape(B, C, H, W)
        gpy = np.zeros((B, 1, L))
        gpx = np.zeros((B, 1, L))
        for idx, valid, wy, wx, sy, sx, vals in corners:
            gv = (g * vals).sum(axis=1, keepdims=True)
            gpy += sy * wx * gv
            gpx += sx * wy * gv
        return gx, gpy.reshape((B,) + S), gpx.reshape((B,) + S)

    return ad.wrap(out.reshape((B, C) + S), (f, py, px), back)


def _out_size(n, k, stride, padding, dilation):
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(x, kh, kw, stride, padding, dilation):
    B, C, H, W = x.shape
    Ho = _out_size(H, kh, stride, padding, dilation)
    Wo = _out_size(W, kw, stride, padding, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = np.empty((B, C, kh * kw, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            ys = i * dilation
            xs = j * dilation
            cols[:, :, i * kw + j] = xp[:, :, ys : ys + stride * (Ho - 1) + 1 : stride, xs : xs + stride * (Wo - 1) + 1 : stride]
    return cols, Ho, Wo


def _contract(cols, weight, bias):
    """``out[b, o] = W[o] . cols[b] + bias[o]`` with backward to cols, weight and bias."""
    B, C, T, Ho, Wo = ad.as_array(cols).shape
    w = ad.as_array(weight)
    O = w.shape[0]
    colm = ad.as_array(cols).reshape(B, C * T, Ho * Wo)
    wm = w.reshape(O, C * T)
    out = np.matmul(wm, colm).reshape(B, O, Ho, Wo)
    if bias is not None:
        out = out + ad.as_array(bias)[None, :, None, None]

    def back(g):
        gm = g.reshape(B, O, Ho * Wo)
        gcols = np.matmul(wm.T, gm).reshape(B, C, T, Ho, Wo)
        gw = np.einsum("bop,bkp->ok", gm, colm).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gcols, gw, gb

    return ad.wrap(out, (cols, weight, bias), back)


def conv2d(f, weight, bias=None, stride=1, padding=0, dilation=1):
    """Cross-correlation of ``[B, C, H, W]`` with ``weight [O, C, kh, kw]``."""
    x = ad.as_array(check_feature_map(f))
    w = ad.as_array(weight)
    if w.ndim != 4 or w.shape[1] != x.shape[1]:
        raise ValueError(f"weight {w.shape} does not match input channels {x.shape[1]}")
    kh, kw = w.shape[2:]
    cols, Ho, Wo = _im2col(x, kh, kw, stride, padding, dilation)
    if Ho < 1 or Wo < 1:
        raise ValueError("kernel larger than padded input")
    if isinstance(f, ad.Tensor) and f.requires_grad:
        B, C, H, W = x.shape

        def back(g):
            gp = np.zeros((B, C, H + 2 * padding, W + 2 * padding))
            for i in range(kh):
                for j in range(kw):
                    ys, xs = i * dilation, j * dilation
                    gp[:, :, ys : ys + stride * (Ho - 1) + 1 : stride, xs : xs + stride * (Wo - 1) + 1 : stride] += g[:, :, i * kw + j]
            return (gp[:, :, padding : padding + H, padding : padding + W],)

        cols = ad.Tensor(cols, requires_grad=True, parents=(f,), backward=back)
    return _contract(cols, weight, bias)


def _check_field(field, B, T, Ho, Wo):
    shape = ad.as_array(field).shape
    if shape != (B, 2 * T, Ho, Wo):
        raise ValueError(f"kernel field shape {shape} != expected {(B, 2 * T, Ho, Wo)}")


def deform_conv2d(f, field, weight, bias=None, padding=0, dilation=1, stride=1):
    """Convolution whose taps are displaced by ``field [B, 2*kh*kw, H_out, W_out]``.

    Tap ``t`` at output ``(y, x)`` samples ``(y - padding + i*dilation + dy_t,
    x - padding + j*dilation + dx_t)``, channels ``(2t, 2t+1)`` holding
    ``(dy_t, dx_t)``.
    """
    if stride != 1:
        raise ValueError("deformable convolution supports stride 1 only")
    x = ad.as_array(check_feature_map(f))
    w = ad.as_array(weight)
    if w.ndim != 4 or w.shape[1] != x.shape[1]:
        raise ValueError(f"weight {w.shape} does not match input channels {x.shape[1]}")
    B, C, H, W = x.shape
    kh, kw = w.shape[2:]
    T = kh * kw
    Ho = _out_size(H, kh, 1, padding, dilation)
    Wo = _out_size(W, kw, 1, padding, dilation)
    _check_field(field, B, T, Ho, Wo)
    taps = tap_grid((kh, kw), dilation) + np.array([(kh - 1) // 2, (kw - 1) // 2]) * dilation - padding
    base_y = np.arange(Ho)[None, None, :, None] + taps[:, 0][None, :, None, None]
    base_x = np.arange(Wo)[None, None, None, :] + taps[:, 1][None, :, None, None]
    if not isinstance(field, ad.Tensor):
        field = np.asarray(field, dtype=np.float64)
    pairs = field.reshape(B, T, 2, Ho, Wo)
    py = pairs[:, :, 0] + base_y
    px = pairs[:, :, 1] + base_x
    cols = bilinear_gather(f, py, px)
    return _contract(cols, weight, bias)


def center_tap_mask(kernel_size) -> np.ndarray:
    """``[2*kh*kw]`` multiplier that zeroes the centre tap's offset channels."""
    kh, kw = kernel_size
    mask = np.ones(2 * kh * kw)
    t = (kh // 2) * kw + kw // 2
    mask[2 * t : 2 * t + 2] = 0.0
    return mask


def rdc_conv2d(f, field, weight, bias=None, padding=0, dilation=1, stride=1):
    """Deformable convolution with the kernel centre pinned to its regular position."""
    kh, kw = ad.as_array(weight).shape[2:]
    mask = center_tap_mask((kh, kw))[None, :, None, None]
    return deform_conv2d(f, field * mask, weight, bias, padding, dilation, stride)


@dataclass
class ConvParams:
    weights: object  # [C_out, C_in, kh, kw]
    bias: object = None  # [C_out]
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    @property
    def kernel_size(self):
        return tuple(ad.as_array(self.weights).shape[2:])

    def conv(self, f):
        return conv2d(f, self.weights, self.bias, self.stride, self.padding, self.dilation)

    def deform(self, f, field):
        return deform_conv2d(f, field, self.weights, self.bias, self.padding, self.dilation, self.stride)

    def rdc(self, f, field):
        return rdc_conv2d(f, field, self.weights, self.bias, self.padding, self.dilation, self.stride)
