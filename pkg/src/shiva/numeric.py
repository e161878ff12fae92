"""Dense float64 helpers, elementwise activations and seeded randomness.

Matrices are plain ``numpy.ndarray`` objects (float64, C order).  The
``as_matrix`` / ``as_vector`` helpers are the construction boundary where
shapes are checked and non-finite values are rejected.

All randomness goes through :func:`make_rng`, which builds a
``numpy.random.Generator`` over the counter-based Philox bit generator.  The
same seed therefore yields the same stream on every platform, and child
streams for parallel trials are derived deterministically with
:func:`fork_rng`.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

LAYER_NORM_EPS = 1e-6

Rng = np.random.Generator


class DimensionError(ValueError):
    """Raised when array shapes do not agree."""


def as_vector(v, name="vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_matrix(m, name="matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def sigmoid(x):
    """Logistic function, stable for large ``|x|`` (no overflow, no ``inf/inf``)."""
    out = expit(np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


def sigmoid_grad(x):
    """sigma'(x) = sigma(x) * sigma(-x); avoids the cancellation in 1 - sigma(x)."""
    return sigmoid(x) * sigmoid(-np.asarray(x, dtype=np.float64))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("logit is defined on the open interval (0, 1)")
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def silu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    s = sigmoid(x)
    return s + x * s * sigmoid(-x)


def layer_norm(v, gain=None, bias=None, eps=LAYER_NORM_EPS):
    """Normalise along the last axis to zero mean and unit population variance.

    ``eps`` is added to the variance under the square root.  ``gain`` and
    ``bias`` default to the identity affine map.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] < 2:
        raise DimensionError("layer_norm needs at least two features")
    mu = v.mean(axis=-1, keepdims=True)
    centred = v - mu
    var = np.mean(centred * centred, axis=-1, keepdims=True)
    out = centred / np.sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def layer_norm_forward(v, eps=LAYER_NORM_EPS):
    """Unit layer norm that also returns ``(normed, inv_std)`` for backward."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 2:
        raise DimensionError("layer_norm needs at least two features")
    centred = v - v.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centred * centred, axis=-1, keepdims=True) + eps)
    return centred * inv_std, inv_std


def layer_norm_backward(d_normed, normed, inv_std):
    """Gradient through unit layer norm along the last axis.

    dx = inv_std * (dy - mean(dy) - y * mean(dy * y)); exact including eps.
    """
    mean_d = d_normed.mean(axis=-1, keepdims=True)
    mean_dy = np.mean(d_normed * normed, axis=-1, keepdims=True)
    return inv_std * (d_normed - mean_d - normed * mean_dy)


def make_rng(seed: int) -> Rng:
    """Philox-backed generator; the single RNG algorithm used across the package."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def fork_rng(seed: int, *path: int) -> Rng:
    """Child generator for sub-task ``path`` of run ``seed``.

    ``path`` becomes the SeedSequence spawn key, so every path (including
    ones ending in zeros) gets a stream distinct from the root and from
    every other path.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def gaussian(rng: Rng, mean=0.0, std=1.0, size=None):
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    if std == 0:
        return float(mean) if size is None else np.full(size, float(mean))
    return rng.normal(mean, std, size=size)
