"""Central finite differences used as an independent oracle for analytic gradients."""

from __future__ import annotations

import numpy as np


def numeric_grad(fn, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d fn() / d arr by central differences, perturbing ``arr`` in place.

    ``fn`` takes no arguments and must read ``arr`` when called.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def numeric_jacobian(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Jacobian of vector-valued ``fn(x)`` w.r.t. vector ``x``; row i = d out_i."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for m in range(x.size):
        e = np.zeros_like(x)
        e[m] = h
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2.0 * h))
    return np.stack(cols, axis=1)


def rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
