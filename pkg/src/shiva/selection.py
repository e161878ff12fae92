"""Hard top-k partitioning and the residual straight-through gradient.

Forward: the ``k`` highest-scoring tokens go through the block, the rest
skip it unchanged.  Backward: the gradient with respect to a token's
inclusion probability is read off the one path that actually ran::

    dL/dpi_i =  <grad_sel_i, x_i>   if i was selected
    dL/dpi_i = -<grad_rej_i, x_i>   otherwise

``surrogate_grad_exact`` is the two-path reference used only for checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import DimensionError, as_matrix, as_vector


class PathGradientError(ValueError):
    """A token is missing the gradient of its executed path."""


@dataclass(frozen=True)
class SelectionOutcome:
    indices_sel: np.ndarray
    indices_rej: np.ndarray
    mask: np.ndarray
    x_sel: np.ndarray | None = None
    x_rej: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def k(self) -> int:
        return self.indices_sel.shape[0]


@dataclass(frozen=True)
class PathGradients:
    grad_sel: np.ndarray  # rows follow outcome.indices_sel
    grad_rej: np.ndarray  # rows follow outcome.indices_rej


def budget_to_count(n_tokens: int, ratio: float) -> int:
    """Executed token count for a retention ratio: ``max(1, floor(N * r))``."""
    return max(1, min(n_tokens, int(np.floor(n_tokens * ratio))))


def hard_topk(scores, k_int: int, x=None) -> SelectionOutcome:
    """Top-``k_int`` partition; ties go to the lower index.

    Both index lists are returned in ascending order so gather and scatter
    preserve the original token order.
    """
    s = as_vector(scores, "scores")
    n = s.shape[0]
    if not 1 <= k_int <= n:
        raise ValueError(f"k_int={k_int} must lie in [1, {n}]")
    order = np.argsort(-s, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:k_int]] = True
    sel = np.flatnonzero(mask)
    rej = np.flatnonzero(~mask)
    x_sel = x_rej = None
    if x is not None:
        x = as_matrix(x, "x")
        if x.shape[0] != n:
            raise DimensionError(f"x has {x.shape[0]} rows for {n} scores")
        x_sel, x_rej = x[sel], x[rej]
    return SelectionOutcome(sel, rej, mask, x_sel, x_rej)


def scatter_back(outcome: SelectionOutcome, y_sel, x_rej) -> np.ndarray:
    y_sel = np.asarray(y_sel, dtype=np.float64)
    x_rej = np.asarray(x_rej, dtype=np.float64)
    if y_sel.ndim != 2 or y_sel.shape[0] != outcome.k:
        raise DimensionError(f"y_sel has shape {y_sel.shape}, expected {outcome.k} rows")
    n_rej = outcome.n - outcome.k
    if n_rej and (x_rej.ndim != 2 or x_rej.shape != (n_rej, y_sel.shape[1])):
        raise DimensionError(f"x_rej has shape {x_rej.shape}, expected ({n_rej}, {y_sel.shape[1]})")
    out = np.empty((outcome.n, y_sel.shape[1]), dtype=np.float64)
    out[outcome.indices_sel] = y_sel
    if n_rej:
        out[outcome.indices_rej] = x_rej
    return out


def residual_ste_grad(paths: PathGradients, outcome: SelectionOutcome, x) -> np.ndarray:
    x = as_matrix(x, "x")
    g_sel = paths.grad_sel
    g_rej = paths.grad_rej
    if g_sel is None or np.shape(g_sel)[0] != outcome.k:
        raise PathGradientError("missing selected-path gradient for some selected tokens")
    n_rej = outcome.n - outcome.k
    if n_rej and (g_rej is None or np.shape(g_rej)[0] != n_rej):
        raise PathGradientError("missing rejected-path gradient for some rejected tokens")
    out = np.empty(outcome.n, dtype=np.float64)
    out[outcome.indices_sel] = np.einsum("ij,ij->i", g_sel, x[outcome.indices_sel])
    if n_rej:
        out[outcome.indices_rej] = -np.einsum("ij,ij->i", g_rej, x[outcome.indices_rej])
    return out


def surrogate_grad_exact(grad_sel_full, grad_rej_full, x) -> np.ndarray:
    """Exact dL/dpi for the input-gating model x_sel = pi x, x_rej = (1 - pi) x."""
    x = as_matrix(x, "x")
    gs = np.asarray(grad_sel_full, dtype=np.float64)
    gr = np.asarray(grad_rej_full, dtype=np.float64)
    if gs.shape != x.shape or gr.shape != x.shape:
        raise DimensionError(f"path gradients {gs.shape}, {gr.shape} do not match x {x.shape}")
    return np.einsum("ij,ij->i", gs - gr, x)


def budget_grad(dl_dpi, dpi_dk) -> float:
    a = as_vector(dl_dpi, "dl_dpi")
    b = as_vector(dpi_dk, "dpi_dk")
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(a @ b)
