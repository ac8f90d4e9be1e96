"""Poincare ball arithmetic.

Every function works on the last axis and broadcasts over leading axes.  It
accepts plain float64 arrays or :class:`~fisheyehdk.autograd.Tensor` inputs;
with tensors the result is differentiable.  Outputs that are ball points are
passed through :func:`project_to_ball` so they never reach the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ad

DEFAULT_C = 1.0
DEFAULT_EPS = 1e-5
# norms are clamped at this value before division; keeps 0/0 at the origin finite
MIN_NORM = 1e-15
# artanh argument bound in float64
ATANH_BOUND = 1.0 - 1e-15


def _check_c(c):
    c = float(c)
    if not c > 0:
        raise ValueError(f"curvature must be positive, got {c}")
    return c


def _check_same_dim(*xs):
    dims = {np.shape(ad.as_array(x))[-1] for x in xs}
    if len(dims) > 1:
        raise ValueError(f"dimension mismatch between ball points: {sorted(dims)}")


def _sqnorm(x):
    return ad.tsum(x * x, axis=-1, keepdims=True)


def _norm(x):
    return ad.sqrt(ad.clamp_min(_sqnorm(x), MIN_NORM**2))


def _artanh(x):
    return ad.artanh(ad.clip(x, -ATANH_BOUND, ATANH_BOUND))


def _squeeze_last(v):
    if ad.is_tensor(v):
        return v.reshape(v.shape[:-1])
    return v[..., 0]


def project_to_ball(x, c=DEFAULT_C, eps=DEFAULT_EPS):
    """Rescale rows whose norm exceeds ``(1 - eps) / sqrt(c)`` onto that radius."""
    c = _check_c(c)
    maxnorm = (1.0 - eps) / np.sqrt(c)
    norm = _norm(x)
    outside = ad.as_array(norm) > maxnorm
    if not outside.any():
        return x
    return ad.where(outside, x / norm * maxnorm, x)


def conformal_factor(x, c=DEFAULT_C):
    """``2 / (1 - c |x|^2)``; raises if ``x`` is not strictly inside the ball."""
    c = _check_c(c)
    sq = _sqnorm(x)
    if np.any(ad.as_array(sq) * c >= 1.0):
        raise ValueError("point lies on or outside the ball boundary")
    return _squeeze_last(2.0 / (1.0 - c * sq))


def mobius_add(x, y, c=DEFAULT_C, eps=DEFAULT_EPS):
    c = _check_c(c)
    _check_same_dim(x, y)
    xy = ad.tsum(x * y, axis=-1, keepdims=True)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return project_to_ball(num / ad.clamp_min(den, MIN_NORM), c, eps)


def mobius_scalar_mul(a, x, c=DEFAULT_C, eps=DEFAULT_EPS):
    c = _check_c(c)
    sc = np.sqrt(c)
    xn = _norm(x)
    out = ad.tanh(a * _artanh(sc * xn)) * x / (xn * sc)
    return project_to_ball(out, c, eps)


def exp_map0(v, c=DEFAULT_C, eps=DEFAULT_EPS):
    c = _check_c(c)
    sc = np.sqrt(c)
    vn = _norm(v)
    return project_to_ball(ad.tanh(sc * vn) * v / (sc * vn), c, eps)


def log_map0(y, c=DEFAULT_C):
    c = _check_c(c)
    sc = np.sqrt(c)
    yn = _norm(y)
    return _artanh(sc * yn) * y / (sc * yn)


def exp_map(x, v, c=DEFAULT_C, eps=DEFAULT_EPS):
    """Exponential map at ``x``; ``exp_map(x, 0) == x``."""
    c = _check_c(c)
    _check_same_dim(x, v)
    sc = np.sqrt(c)
    vn = _norm(v)
    lam = 2.0 / (1.0 - c * _sqnorm(x))
    second = ad.tanh(sc * lam * vn / 2.0) * v / (sc * vn)
    return mobius_add(x, second, c, eps)


def log_map(x, y, c=DEFAULT_C, eps=DEFAULT_EPS):
    """Logarithmic map at ``x``; inverse of :func:`exp_map`."""
    c = _check_c(c)
    _check_same_dim(x, y)
    sc = np.sqrt(c)
    sub = mobius_add(-x, y, c, eps)
    sn = _norm(sub)
    lam = 2.0 / (1.0 - c * _sqnorm(x))
    return 2.0 / (sc * lam) * _artanh(sc * sn) * sub / sn


def mobius_matvec(W, x, c=DEFAULT_C, eps=DEFAULT_EPS):
    """Apply the real matrix ``W`` (shape ``[d_out, d_in]``) through the origin's tangent space.

    ``x`` has shape ``[..., d_in]``; the result is ``exp0(log0(x) @ W.T)``.
    """
    c = _check_c(c)
    w = ad.as_array(W)
    if w.ndim != 2 or w.shape[1] != np.shape(ad.as_array(x))[-1]:
        raise ValueError(f"matrix of shape {w.shape} cannot act on points of dim {np.shape(ad.as_array(x))[-1]}")
    u = log_map0(x, c)
    Wt = W.transpose(1, 0) if ad.is_tensor(W) else w.T
    return exp_map0(u @ Wt, c, eps)


def distance(x, y, c=DEFAULT_C):
    """Geodesic distance of the metric ``lambda_x^2 * I``.

    ``(1/sqrt(c)) * acosh(1 + 2 c |x - y|^2 / ((1 - c|x|^2)(1 - c|y|^2)))``, evaluated as
    ``log1p(z + sqrt(z (z + 2)))`` for accuracy near 0.  The factor ``c`` inside is what
    makes ``distance(0, exp_map0(v)) == 2 |v|`` for every curvature.
    """
    c = _check_c(c)
    _check_same_dim(x, y)
    diff = x - y
    z = 2.0 * c * _sqnorm(diff) / ((1.0 - c * _sqnorm(x)) * (1.0 - c * _sqnorm(y)))
    zc = ad.clamp_min(z, 0.0)
    root = ad.sqrt(ad.clamp_min(zc * (zc + 2.0), MIN_NORM**2))
    return _squeeze_last(ad.log1p(zc + root) / np.sqrt(c))


@dataclass(frozen=True)
class PoincareBall:
    """Curvature and boundary margin bundled with the ball operations."""

    c: float = DEFAULT_C
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        _check_c(self.c)
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")

    @property
    def radius(self) -> float:
        return 1.0 / np.sqrt(self.c)

    def contains(self, x) -> bool:
        return bool(np.all(np.sum(np.square(ad.as_array(x)), axis=-1) < 1.0 / self.c))

    def proj(self, x):
        return project_to_ball(x, self.c, self.eps)

    def lambda_x(self, x):
        return conformal_factor(x, self.c)

    def add(self, x, y):
        return mobius_add(x, y, self.c, self.eps)

    def scalar_mul(self, a, x):
        return mobius_scalar_mul(a, x, self.c, self.eps)

    def matvec(self, W, x):
        return mobius_matvec(W, x, self.c, self.eps)

    def expmap(self, x, v):
        return exp_map(x, v, self.c, self.eps)

    def logmap(self, x, y):
        return log_map(x, y, self.c, self.eps)

    def expmap0(self, v):
        return exp_map0(v, self.c, self.eps)

    def logmap0(self, y):
        return log_map0(y, self.c)

    def dist(self, x, y):
        return distance(x, y, self.c)
