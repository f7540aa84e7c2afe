"""Loss functions for metric training, with analytic gradients.

Every operation is pure and returns (value, gradient).  Hinge and
absolute-value kinks use the subgradient 0 at the exact kink point, and
the inner max of the relation loss passes its gradient to neither operand
on a tie.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ReconstructionTarget

__all__ = [
    "MarginParams",
    "LossWeights",
    "QuadrupletDistances",
    "triplet_loss",
    "metric_losses",
    "reconstruction_error",
    "sparse_reconstruction_loss",
    "total_loss",
    "base_combined_loss",
]


def _check_nonneg(value, name):
    if value < 0:
        raise ValueError(f"{name} must be nonnegative, got {value}")


@dataclass(frozen=True)
class MarginParams:
    """Margins of the three metric hinge terms."""

    alpha_g: float = 1.0
    alpha_r: float = 1.0
    alpha_t: float = 1.0

    def __post_init__(self):
        for name in ("alpha_g", "alpha_r", "alpha_t"):
            _check_nonneg(getattr(self, name), name)


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the metric terms and the four reconstruction
    pixel subsets."""

    beta_m: float = 1.0
    beta_g: float = 1.0
    beta_r: float = 1.0
    beta_t: float = 1.0
    beta_rec: float = 10.0
    gamma_i: float = 5.0
    gamma_i_bar: float = 10.0
    gamma_t: float = 5.0
    gamma_t_bar: float = 20.0

    def __post_init__(self):
        for name in (
            "beta_m",
            "beta_g",
            "beta_r",
            "beta_t",
            "beta_rec",
            "gamma_i",
            "gamma_i_bar",
            "gamma_t",
            "gamma_t_bar",
        ):
            _check_nonneg(getattr(self, name), name)


@dataclass(frozen=True)
class QuadrupletDistances:
    """Squared Euclidean latent distances from the anchor embedding."""

    d_pp: float
    d_pn: float
    d_nn: float

    def __post_init__(self):
        for name in ("d_pp", "d_pn", "d_nn"):
            _check_nonneg(getattr(self, name), name)


def triplet_loss(d_ap: float, d_an: float, alpha: float):
    """max(alpha + d_ap - d_an, 0) and its (d_ap, d_an) gradient."""
    _check_nonneg(d_ap, "d_ap")
    _check_nonneg(d_an, "d_an")
    _check_nonneg(alpha, "alpha")
    raw = alpha + d_ap - d_an
    if raw > 0:
        return raw, (1.0, -1.0)
    return 0.0, (0.0, 0.0)


def metric_losses(dist: QuadrupletDistances, s_t: float, m: MarginParams):
    """The three quadruplet terms and their gradients.

    Returns ((L_G, L_R, L_T), grad) where grad[k] is the gradient of the
    k-th loss with respect to (d_pp, d_pn, d_nn).
    """
    if not (0.0 <= s_t <= 1.0):
        raise ValueError(f"s_t must lie in [0, 1], got {s_t}")
    d_pp, d_pn, d_nn = dist.d_pp, dist.d_pn, dist.d_nn
    grad = np.zeros((3, 3))

    l_g = m.alpha_g + d_pn - d_nn
    if l_g > 0:
        grad[0, 1] = 1.0
        grad[0, 2] = -1.0
    else:
        l_g = 0.0

    inner = max(m.alpha_t, d_pp)
    l_r = m.alpha_r + inner - d_pn
    if l_r > 0:
        grad[1, 1] = -1.0
        if d_pp > m.alpha_t:
            grad[1, 0] = 1.0
    else:
        l_r = 0.0

    gap = (1.0 - s_t) * m.alpha_t - d_pp
    l_t = abs(gap)
    if gap > 0:
        grad[2, 0] = -1.0
    elif gap < 0:
        grad[2, 0] = 1.0

    return (l_g, l_r, l_t), grad


def reconstruction_error(target: np.ndarray, pred: np.ndarray):
    """Plain mean squared error over every cell, with gradient wrt pred."""
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if target.shape != pred.shape:
        raise ValueError(
            f"shape mismatch: target {target.shape} vs prediction {pred.shape}"
        )
    diff = target - pred
    value = float(np.mean(diff**2))
    grad = -2.0 * diff / diff.size
    return value, grad


def sparse_reconstruction_loss(
    target: ReconstructionTarget, pred: np.ndarray, w: LossWeights
):
    """Weighted mean squared error over the four pixel subsets given by
    the nonzero/zero cells of each target channel.

    Empty subsets contribute 0.  Returns (value, gradient wrt pred).
    """
    values = target.channels.astype(np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != values.shape:
        raise ValueError(
            f"shape mismatch: target {values.shape} vs prediction {pred.shape}"
        )

    diff = values - pred
    grad = np.zeros_like(pred)
    total = 0.0
    subsets = (
        (values[:, :, 0] != 0, 0, w.gamma_i),
        (values[:, :, 0] == 0, 0, w.gamma_i_bar),
        (values[:, :, 1] != 0, 1, w.gamma_t),
        (values[:, :, 1] == 0, 1, w.gamma_t_bar),
    )
    for mask, channel, gamma in subsets:
        count = int(mask.sum())
        if count == 0:
            continue
        d = diff[:, :, channel][mask]
        total += gamma * float(np.sum(d**2)) / count
        grad[:, :, channel][mask] += -2.0 * gamma * d / count
    return total, grad


def total_loss(l_g: float, l_r: float, l_t: float, l_rec: float, w: LossWeights):
    """Combined objective; linear, so component gradients are the beta
    products (beta_m*beta_g, beta_m*beta_r, beta_m*beta_t, beta_rec)."""
    for name, value in (("L_G", l_g), ("L_R", l_r), ("L_T", l_t), ("L_Rec", l_rec)):
        _check_nonneg(value, name)
    return w.beta_m * (w.beta_g * l_g + w.beta_r * l_r + w.beta_t * l_t) + (
        w.beta_rec * l_rec
    )


def base_combined_loss(
    d_ap: float,
    d_an: float,
    alpha: float,
    target: np.ndarray,
    pred: np.ndarray,
    beta_rec: float = 1.0,
):
    """Baseline objective: triplet hinge plus unweighted mean squared
    reconstruction over the full grid."""
    hinge, _ = triplet_loss(d_ap, d_an, alpha)
    mse, _ = reconstruction_error(target, pred)
    return hinge + beta_rec * mse
