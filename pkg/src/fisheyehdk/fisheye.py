"""Synthetic fisheye distortion with the equidistant / fourth-order polynomial model.

A fisheye pixel at radius ``r_d`` from the distortion centre sees the ray at
incidence ``theta`` with ``f * theta_d(theta) = r_d``; the same ray lands at
``r_u = f_u * tan(theta)`` in the perspective image.  Warping and rectifying
are both inverse maps evaluated per output pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from sklearn.base import BaseEstimator, TransformerMixin

HALF_PI = np.pi / 2
VOID_ID = 255


@dataclass(frozen=True)
class FisheyeProfile:
    """Lens parameters in pixels.

    ``center`` defaults to the image centre and ``f_u`` (the perspective focal
    length) defaults to ``f``.
    """

    f: float
    coeffs: tuple = (0.0, 0.0, 0.0, 0.0)
    center: tuple | None = None
    f_u: float | None = None

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError("f must be positive")
        if self.f_u is not None and not self.f_u > 0:
            raise ValueError("f_u must be positive")
        coeffs = tuple(float(k) for k in self.coeffs)
        if len(coeffs) != 4:
            raise ValueError("expected four polynomial coefficients")
        object.__setattr__(self, "coeffs", coeffs)
        if any(coeffs):
            th = np.linspace(0.0, HALF_PI, 2001)
            if np.any(np.diff(theta_distorted(th, coeffs)) <= 0):
                raise ValueError("theta_d must increase monotonically on [0, pi/2)")

    @property
    def perspective_focal(self) -> float:
        return self.f if self.f_u is None else self.f_u

    def center_for(self, height, width):
        if self.center is None:
            return (height - 1) / 2.0, (width - 1) / 2.0
        cy, cx = self.center
        if not (0 <= cy <= height - 1 and 0 <= cx <= width - 1):
            raise ValueError(f"distortion centre {self.center} outside a {height}x{width} image")
        return float(cy), float(cx)


@dataclass
class LabeledImage:
    pixels: np.ndarray  # [C, H, W] in [0, 1]
    labels: np.ndarray | None = None  # [H, W] ints
    void_id: int = VOID_ID
    mask: np.ndarray | None = field(default=None)  # [H, W] bool, True where valid

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[None]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.pixels.shape[1:]:
                raise ValueError("labels and pixels disagree on spatial size")

    @property
    def shape(self):
        return self.pixels.shape[1:]


def theta_distorted(theta, coeffs=(0.0, 0.0, 0.0, 0.0)):
    k1, k2, k3, k4 = coeffs
    t2 = np.square(theta)
    return theta * (1 + k1 * t2 + k2 * t2**2 + k3 * t2**3 + k4 * t2**4)


def invert_theta_distorted(theta_d, coeffs=(0.0, 0.0, 0.0, 0.0), tol=1e-10):
    """Incidence angle for distorted angle(s) ``theta_d``; NaN beyond ``theta_d(pi/2)``."""
    theta_d = np.asarray(theta_d, dtype=np.float64)
    if not any(coeffs):
        return np.where(theta_d < HALF_PI, theta_d, np.nan)
    lo = np.zeros_like(theta_d)
    hi = np.full_like(theta_d, HALF_PI)
    reachable = theta_d < theta_distorted(HALF_PI, coeffs)
    # bisection halves the bracket each pass; pi/2 / 2**40 < 1e-12
    for _ in range(int(np.ceil(np.log2(HALF_PI / tol))) + 1):
        mid = 0.5 * (lo + hi)
        above = theta_distorted(mid, coeffs) > theta_d
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return np.where(reachable, 0.5 * (lo + hi), np.nan)


def source_radius(r_d, profile: FisheyeProfile):
    """Perspective radius that a fisheye pixel at radius ``r_d`` samples; NaN when invalid."""
    theta = invert_theta_distorted(np.asarray(r_d, dtype=np.float64) / profile.f, profile.coeffs)
    with np.errstate(invalid="ignore"):
        return np.where(theta < HALF_PI, profile.perspective_focal * np.tan(theta), np.nan)


def fisheye_radius(r_u, profile: FisheyeProfile):
    """Fisheye radius of a perspective pixel at radius ``r_u``."""
    theta = np.arctan(np.asarray(r_u, dtype=np.float64) / profile.perspective_focal)
    return profile.f * theta_distorted(theta, profile.coeffs)


def _radial_grid(height, width, center):
    cy, cx = center
    yy, xx = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    return dy, dx, np.hypot(dy, dx)


def _resample(img: LabeledImage, sy, sx, valid):
    H, W = img.shape
    # a source counts as inside when it falls within some pixel's footprint
    valid = valid & (sy >= -0.5) & (sy <= H - 0.5) & (sx >= -0.5) & (sx <= W - 0.5)
    if img.mask is not None:
        # every bilinear support pixel must itself be valid
        y0 = np.clip(np.floor(np.where(valid, sy, 0.0)), 0, H - 1).astype(int)
        x0 = np.clip(np.floor(np.where(valid, sx, 0.0)), 0, W - 1).astype(int)
        y1 = np.minimum(y0 + 1, H - 1)
        x1 = np.minimum(x0 + 1, W - 1)
        m = img.mask
        valid &= m[y0, x0] & m[y0, x1] & m[y1, x0] & m[y1, x1]
    coords = np.stack([np.where(valid, sy, 0.0), np.where(valid, sx, 0.0)])
    pixels = np.stack([map_coordinates(ch, coords, order=1, mode="nearest") for ch in img.pixels])
    pixels[:, ~valid] = 0.0
    labels = None
    if img.labels is not None:
        ny = np.clip(np.rint(coords[0]), 0, H - 1).astype(int)
        nx = np.clip(np.rint(coords[1]), 0, W - 1).astype(int)
        labels = np.where(valid, img.labels[ny, nx], img.void_id)
    return LabeledImage(pixels, labels, img.void_id, valid)


def warp_to_fisheye(img: LabeledImage, profile: FisheyeProfile) -> LabeledImage:
    """Distort a perspective image; the result's ``mask`` marks pixels with a valid source."""
    H, W = img.shape
    center = profile.center_for(H, W)
    dy, dx, r_d = _radial_grid(H, W, center)
    r_u = source_radius(r_d, profile)
    valid = np.isfinite(r_u)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r_d > 0, r_u / np.where(r_d > 0, r_d, 1.0), profile.perspective_focal / profile.f)
    scale = np.where(valid, scale, 0.0)
    return _resample(img, center[0] + dy * scale, center[1] + dx * scale, valid)


def rectify(img: LabeledImage, profile: FisheyeProfile) -> LabeledImage:
    """Undo :func:`warp_to_fisheye`; honours ``img.mask`` when present."""
    H, W = img.shape
    center = profile.center_for(H, W)
    dy, dx, r_u = _radial_grid(H, W, center)
    r_d = fisheye_radius(r_u, profile)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r_u > 0, r_d / np.where(r_u > 0, r_u, 1.0), profile.f / profile.perspective_focal)
    return _resample(img, center[0] + dy * scale, center[1] + dx * scale, np.ones((H, W), dtype=bool))


def displacement_field(height, width, profile: FisheyeProfile):
    """Per-pixel ``(sy - y, sx - x)`` of the fisheye warp and its validity."""
    center = profile.center_for(height, width)
    dy, dx, r_d = _radial_grid(height, width, center)
    r_u = source_radius(r_d, profile)
    valid = np.isfinite(r_u)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r_d > 0, r_u / np.where(r_d > 0, r_d, 1.0), 1.0)
    return np.stack([dy * (scale - 1), dx * (scale - 1)]), valid


class FisheyeWarper(TransformerMixin, BaseEstimator):
    """Transformer distorting image batches ``[n, C, H, W]`` (``inverse_transform`` rectifies)."""

    def __init__(self, f=200.0, coeffs=(0.0, 0.0, 0.0, 0.0), center=None, f_u=None):
        self.f = f
        self.coeffs = coeffs
        self.center = center
        self.f_u = f_u

    def fit(self, X=None, y=None):
        self.profile_ = FisheyeProfile(self.f, tuple(self.coeffs), self.center, self.f_u)
        return self

    def _profile(self):
        return getattr(self, "profile_", None) or self.fit().profile_

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        return np.stack([warp_to_fisheye(LabeledImage(x), self._profile()).pixels for x in X])

    def inverse_transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        return np.stack([rectify(LabeledImage(x), self._profile()).pixels for x in X])
