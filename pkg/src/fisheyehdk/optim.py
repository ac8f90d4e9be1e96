"""SGD with momentum, Riemannian SGD on the Poincare ball, and finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ad
from .gyro import DEFAULT_EPS, project_to_ball

ENCODER_LR = 1e-3
DECODER_LR = 1e-2
RSGD_LR = 1e-2
MOMENTUM = 0.9
WEIGHT_DECAY = 5e-4
POLY_POWER = 0.9


def poly_lr(lr0: float, it: int, max_iter: int, power: float = POLY_POWER) -> float:
    if not 0 <= it <= max_iter:
        raise ValueError(f"iteration {it} outside [0, {max_iter}]")
    return lr0 * (1.0 - it / max_iter) ** power


@dataclass
class SgdState:
    lr0: float = ENCODER_LR
    momentum: float = MOMENTUM
    weight_decay: float = WEIGHT_DECAY
    power: float = POLY_POWER
    max_iter: int = 1
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")

    def lr_at(self, it: int) -> float:
        return poly_lr(self.lr0, it, self.max_iter, self.power)


def sgd_step(params, grads, state: SgdState, lr=None):
    """In-place momentum SGD on a list of arrays; returns the list.

    ``g <- grad + wd * p; v <- momentum * v + g; p <- p - lr * v``.
    """
    lr = state.lr0 if lr is None else lr
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"parameter {i} has shape {p.shape}, gradient {g.shape}")
        g = g + state.weight_decay * p
        v = state.velocity.get(i)
        v = g.copy() if v is None else state.momentum * v + g
        state.velocity[i] = v
        p -= lr * v
    return params


@dataclass
class RsgdState:
    lr: float = RSGD_LR
    c: float = 1.0
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def riemannian_scale(theta, c: float = 1.0) -> float:
    """Inverse squared conformal factor ``(1 - c |theta|^2)^2 / 4`` of the flattened point."""
    sq = float(np.sum(np.square(theta)))
    return (1.0 - c * sq) ** 2 / 4.0


def rsgd_step(theta, euclid_grad, state: RsgdState, lr=None):
    """One retraction step; the whole array is treated as a single ball point."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(euclid_grad, dtype=np.float64)
    if theta.shape != grad.shape:
        raise ValueError(f"point shape {theta.shape} != gradient shape {grad.shape}")
    lr = state.lr if lr is None else lr
    step = theta - lr * riemannian_scale(theta, state.c) * grad
    return project_to_ball(step.reshape(1, -1), state.c, state.eps).reshape(theta.shape)


def finite_diff_grad(loss, params, h: float = 1e-5, scheme: str = "central") -> np.ndarray:
    """Coordinate-wise numerical gradient of a scalar ``loss(params)``.

    ``scheme="forward"`` uses one-sided differences.
    """
    params = np.array(params, dtype=np.float64)
    flat = params.ravel()
    grad = np.zeros_like(flat)
    base = None
    if scheme == "forward":
        base = float(loss(params))
        if not np.isfinite(base):
            raise FloatingPointError("loss is not finite at the base point")
    elif scheme != "central":
        raise ValueError(f"unknown scheme {scheme!r}")
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss(params))
        if scheme == "central":
            flat[i] = orig - h
            fm = float(loss(params))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"loss is not finite near coordinate {i}")
            grad[i] = (fp - fm) / (2 * h)
        else:
            flat[i] = orig
            if not np.isfinite(fp):
                raise FloatingPointError(f"loss is not finite near coordinate {i}")
            grad[i] = (fp - base) / h
    return grad.reshape(params.shape)


def backward(loss, params):
    """Reverse-mode gradients of a scalar tensor with respect to ``params``.

    Parameters that the loss does not depend on get exact zeros.
    """
    if not isinstance(loss, ad.Tensor):
        raise TypeError("loss was not recorded; build it from Tensor inputs")
    if loss.data.size != 1:
        raise ValueError("loss must be a scalar")
    for p in params:
        p.grad = None
    if loss.requires_grad:
        loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def check_gradient(fn, x, h=1e-6, analytic=None):
    """Compare reverse-mode and central-difference gradients of ``fn(x) -> scalar``.

    Returns ``(analytic, numeric, rel_err)``: the largest entry-wise deviation
    divided by the largest numeric gradient entry.
    """
    x = np.asarray(x, dtype=np.float64)
    if analytic is None:
        t = ad.Tensor(x.copy(), requires_grad=True)
        out = fn(t)
        analytic = backward(out, [t])[0]
    numeric = finite_diff_grad(lambda v: ad.as_array(fn(v)).item(), x, h)
    scale = max(float(np.abs(numeric).max()), 1e-8)
    return analytic, numeric, float(np.abs(analytic - numeric).max() / scale)
