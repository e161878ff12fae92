"""Auxiliary objectives and the composite loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import DimensionError, as_matrix, layer_norm_backward, layer_norm_forward


@dataclass(frozen=True)
class CompositeLossWeights:
    lambda_b: float = 1.0
    lambda_d: float = 1.0

    def __post_init__(self):
        if self.lambda_b < 0 or self.lambda_d < 0:
            raise ValueError("loss weights must be non-negative")


def normalized_distillation(h_student, h_teacher):
    """Sum over tokens of ``||LN(student_i) - LN(teacher_i)||^2``.

    Returns ``(loss, dloss/dstudent)``; the teacher side is treated as constant.
    """
    hs = as_matrix(h_student, "h_student")
    ht = as_matrix(h_teacher, "h_teacher")
    if hs.shape != ht.shape:
        raise DimensionError(f"shape mismatch: {hs.shape} vs {ht.shape}")
    ns, inv_std = layer_norm_forward(hs)
    nt, _ = layer_norm_forward(ht)
    diff = ns - nt
    loss = float(np.sum(diff * diff))
    return loss, layer_norm_backward(2.0 * diff, ns, inv_std)


def sparsity_penalty(k_cont: float, lam: float):
    """Linear per-token cost ``lam * k``; returns ``(loss, dloss/dk)``."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return lam * k_cont, lam


def captured_signal_loss(x_sel):
    """Synthetic task loss: minus the mean feature value summed over selected rows.

    Returns ``(loss, dloss/dx_sel)``.  Each selected token lowers the loss by
    its own feature mean, so signal tokens are worth ~their magnitude and
    noise tokens ~nothing.
    """
    x_sel = np.asarray(x_sel, dtype=np.float64)
    d = x_sel.shape[1]
    return -float(x_sel.sum()) / d, np.full_like(x_sel, -1.0 / d)


def mse_loss(y, target):
    """``mean((y - target)^2)`` and its gradient."""
    y = np.asarray(y, dtype=np.float64)
    diff = y - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def composite_loss(task: float, budget: float, distill: float, weights: CompositeLossWeights) -> float:
    return task + weights.lambda_b * budget + weights.lambda_d * distill
