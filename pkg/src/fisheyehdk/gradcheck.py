"""Finite-difference check of every differentiable op on small random instances."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ad
from .dconv import bilinear_gather, conv2d, deform_conv2d
from .gyro import distance
from .hdk import HdkParams, hdk_forward
from .metrics import weighted_cross_entropy
from .optim import check_gradient

TOLERANCE = 1e-4


@dataclass
class GradcheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rel_err) and self.rel_err <= self.tol)


def _away_from_grid(rng, shape, lo, hi):
    # bilinear sampling has kinks at integer coordinates; keep fractions in [0.2, 0.8]
    base = rng.integers(lo, hi, size=shape).astype(np.float64)
    return base + rng.uniform(0.2, 0.8, size=shape)


def _cases(rng, size=4):
    B, C, O, k = 2, 2, 3, 3
    H = W = size
    f = rng.normal(size=(B, C, H, W))
    w = rng.normal(size=(O, C, k, k))
    bias = rng.normal(size=O)
    # offsets whose sampling positions stay off the integer grid
    field = rng.uniform(0.2, 0.8, size=(B, 2 * k * k, H, W)) * rng.choice([-1.0, 1.0], size=(B, 2 * k * k, H, W))
    R = rng.normal(size=(B, O, H, W))

    def probe(out, weights):
        return ad.tsum(out * weights)

    yield "conv2d/input", lambda t: probe(conv2d(t, w, bias, padding=1), R), f
    yield "conv2d/weight", lambda t: probe(conv2d(f, t, bias, padding=1), R), w
    yield "conv2d/bias", lambda t: probe(conv2d(f, w, t, padding=1), R), bias
    yield "deform_conv2d/input", lambda t: probe(deform_conv2d(t, field, w, bias, padding=1), R), f
    yield "deform_conv2d/weight", lambda t: probe(deform_conv2d(f, field, t, bias, padding=1), R), w
    yield "deform_conv2d/field", lambda t: probe(deform_conv2d(f, t, w, bias, padding=1), R), field

    py = _away_from_grid(rng, (B, 5), -1, H)
    px = _away_from_grid(rng, (B, 5), -1, W)
    Rg = rng.normal(size=(B, C, 5))
    yield "bilinear_sample/input", lambda t: probe(bilinear_gather(t, py, px), Rg), f
    yield "bilinear_sample/y", lambda t: probe(bilinear_gather(f, t, px), Rg), py
    yield "bilinear_sample/x", lambda t: probe(bilinear_gather(f, py, t), Rg), px

    T2 = 2 * k * k
    hw = rng.normal(size=(T2, C)) * 0.3
    hb = rng.normal(size=T2) * 0.05
    Rh = rng.normal(size=(B, T2, H, W))

    def hdk(feat, weight, b):
        return hdk_forward(feat, HdkParams(weight, b, c=1.0, kernel_size=(k, k), m=1))

    yield "hdk_forward/input", lambda t: probe(hdk(t, hw, hb), Rh), f * 0.5
    yield "hdk_forward/weight", lambda t: probe(hdk(f * 0.5, t, hb), Rh), hw
    yield "hdk_forward/bias", lambda t: probe(hdk(f * 0.5, hw, t), Rh), hb

    K = 3
    logits = rng.normal(size=(B, K, H, W))
    labels = rng.integers(0, K, size=(B, H, W))
    labels[0, 0, 0] = 255
    cw = rng.uniform(0.5, 2.0, size=K)
    yield "weighted_ce/logits", lambda t: weighted_cross_entropy(t, labels, cw), logits

    x = rng.uniform(-0.4, 0.4, size=(6, 3))
    y = rng.uniform(-0.4, 0.4, size=(6, 3))
    yield "distance/x", lambda t: ad.tsum(distance(t, y, 1.0)), x
    yield "distance/y", lambda t: ad.tsum(distance(x, t, 0.5)), y


def run_gradcheck(seed=0, size=4, tol=TOLERANCE, h=1e-6):
    """Return ``(results, seconds)`` for the full suite."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    results = []
    for name, fn, x in _cases(rng, size):
        _, _, err = check_gradient(fn, x, h=h)
        results.append(GradcheckResult(name, err, tol))
    return results, time.perf_counter() - t0
