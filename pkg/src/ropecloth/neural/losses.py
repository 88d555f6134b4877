"""Data term and the collision penalty with detached push-out targets."""

from __future__ import annotations

import numpy as np


def data_loss(pred: np.ndarray, truth: np.ndarray):
    """Sum of squared vertex errors and its gradient ``2 (x - x_gt)``."""
    diff = np.asarray(pred) - np.asarray(truth)
    return float(np.sum(diff * diff)), 2.0 * diff


def pushout_targets(pred: np.ndarray, truth: np.ndarray, sdf, eps: float):
    """Non-interpenetrating targets ``x + (|phi| + eps) r_hat`` for vertices with ``phi < 0``.

    ``r_hat`` points from the prediction to its ground truth; a vertex sitting
    on its ground truth uses the SDF gradient instead.  Returns
    ``(targets, inside_mask)`` with ``targets`` equal to ``pred`` elsewhere.
    """
    x = np.asarray(pred, dtype=np.float64)
    flat = x.reshape(-1, 3)
    phi, grad = sdf.phi_grad(flat)
    inside = phi < 0.0
    targets = flat.copy()
    if np.any(inside):
        r = np.asarray(truth, dtype=np.float64).reshape(-1, 3)[inside] - flat[inside]
        length = np.linalg.norm(r, axis=1)
        r_hat = grad[inside].copy()
        ok = length > 1e-12
        r_hat[ok] = r[ok] / length[ok, None]
        targets[inside] = flat[inside] + (np.abs(phi[inside]) + eps)[:, None] * r_hat
    return targets.reshape(x.shape), inside.reshape(x.shape[:-1])


def pinn_collision_loss(pred: np.ndarray, truth: np.ndarray, sdf, eps: float):
    """``sum |x - target|^2`` over interpenetrating vertices, with targets held constant.

    Returns ``(loss, dloss/dpred, inside_mask)``.
    """
    targets, inside = pushout_targets(pred, truth, sdf, eps)
    diff = np.asarray(pred) - targets
    return float(np.sum(diff * diff)), 2.0 * diff, inside
