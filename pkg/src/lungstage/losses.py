"""Reference overlap losses with closed-form gradients.

These are numeric references, not training code: each loss returns its value
together with the analytic gradient with respect to the predicted
probabilities, so finite differences can certify the algebra.  The smoothing
constant epsilon sits in both numerator and denominator of each ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ValidationError


@dataclass(frozen=True)
class LossInput:
    """Predicted probabilities p in [0,1] against binary labels y."""

    p: np.ndarray
    y: np.ndarray
    epsilon: float = 1e-6

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if p.shape != y.shape:
            raise ShapeMismatch(f"p {p.shape} vs y {y.shape}")
        if p.size == 0:
            raise ValidationError("p", "empty grid")
        if np.any(p < 0) or np.any(p > 1):
            raise ValidationError("p", "probabilities must lie in [0, 1]")
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("y", "labels must be 0 or 1")
        if not self.epsilon > 0:
            raise ValidationError("epsilon", f"must be > 0, got {self.epsilon}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "y", y)


def dice_loss(inp: LossInput) -> tuple[float, np.ndarray]:
    """1 - (2*sum(y*p) + eps) / (sum(y) + sum(p) + eps), with gradient.

    With S = sum(y*p) and D = sum(y) + sum(p) + eps, the derivative in p_j is
    -(2*y_j*D - (2*S + eps)) / D**2 by the quotient rule (dD/dp_j = 1).
    """
    p, y, eps = inp.p, inp.y, inp.epsilon
    s = float(np.sum(y * p))
    d = float(np.sum(y) + np.sum(p) + eps)
    value = 1.0 - (2.0 * s + eps) / d
    grad = -(2.0 * y * d - (2.0 * s + eps)) / (d * d)
    return value, grad


def jaccard_loss(inp: LossInput) -> tuple[float, np.ndarray]:
    """1 - (sum(y*p) + eps) / (sum(y) + sum(p) - sum(y*p) + eps), with gradient.

    With S = sum(y*p) and M = sum(y) + sum(p) - S + eps, the derivative in
    p_j is -(y_j*M - (S + eps)*(1 - y_j)) / M**2, since dS/dp_j = y_j and
    dM/dp_j = 1 - y_j.
    """
    p, y, eps = inp.p, inp.y, inp.epsilon
    s = float(np.sum(y * p))
    m = float(np.sum(y) + np.sum(p) - s + eps)
    value = 1.0 - (s + eps) / m
    grad = -(y * m - (s + eps) * (1.0 - y)) / (m * m)
    return value, grad


def overlap_loss(inp: LossInput) -> tuple[float, np.ndarray]:
    """Equal-weight blend of the dice and jaccard losses, gradient included."""
    dv, dg = dice_loss(inp)
    jv, jg = jaccard_loss(inp)
    return 0.5 * dv + 0.5 * jv, 0.5 * dg + 0.5 * jg


def finite_difference_grad(loss_fn, inp: LossInput, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a loss over each p_j; the test oracle."""
    base = inp.p
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        hi = base.copy()
        lo = base.copy()
        hi[idx] = min(hi[idx] + step, 1.0)
        lo[idx] = max(lo[idx] - step, 0.0)
        v_hi, _ = loss_fn(LossInput(p=hi, y=inp.y, epsilon=inp.epsilon))
        v_lo, _ = loss_fn(LossInput(p=lo, y=inp.y, epsilon=inp.epsilon))
        grad[idx] = (v_hi - v_lo) / (hi[idx] - lo[idx])
    return grad


def gradient_check(loss_fn, inp: LossInput, step: float = 1e-5) -> float:
    """Worst relative error between analytic and finite-difference gradients."""
    _, analytic = loss_fn(inp)
    numeric = finite_difference_grad(loss_fn, inp, step)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric) / np.where(scale > 1e-12, scale, 1.0)
    return float(err.max())
