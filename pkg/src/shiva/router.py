"""Context-conditioned token scorer with a hand-written backward pass.

For token features ``x_i`` and optional context vectors::

    h_ctx = t_emb @ W_t + c_emb @ W_p + layer_emb[slot]
    s_i   = w . LayerNorm(SiLU(x_i @ W_x + b_x + h_ctx))

The layer embedding table already lives in the bottleneck width, so its
projection is the identity.  Routers are shared across groups of adjacent
layers through :class:`RouterGroupMap`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numeric import (DimensionError, Rng, as_matrix, as_vector, layer_norm_backward,
                      layer_norm_forward, make_rng, silu, silu_grad)
from .params import ParamSet

DEFAULT_BOTTLENECK = 64

SHARING_GROUP_SIZE = {"independent": 1, "pairwise": 2, "triple": 3}


class CacheError(RuntimeError):
    """Backward called without a matching forward cache."""


@dataclass
class RouterParams(ParamSet):
    w_x: np.ndarray
    b_x: np.ndarray
    w_t: np.ndarray
    w_p: np.ndarray
    layer_emb: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    w: np.ndarray

    @property
    def d_model(self) -> int:
        return self.w_x.shape[0]

    @property
    def bottleneck(self) -> int:
        return self.w_x.shape[1]

    @classmethod
    def init(cls, d_model: int, bottleneck: int = DEFAULT_BOTTLENECK, t_dim: int = 0,
             c_dim: int = 0, layer_slots: int = 0, rng: Rng | None = None) -> "RouterParams":
        """Fan-in uniform projections; zero readout so initial scores are flat."""
        rng = make_rng(0) if rng is None else rng

        def fan_in(rows):
            bound = 1.0 / math.sqrt(max(rows, 1))
            return rng.uniform(-bound, bound, size=(rows, bottleneck))

        return cls(
            w_x=fan_in(d_model),
            b_x=np.zeros(bottleneck),
            w_t=fan_in(t_dim),
            w_p=fan_in(c_dim),
            layer_emb=rng.normal(0.0, 0.02, size=(layer_slots, bottleneck)),
            ln_gain=np.ones(bottleneck),
            ln_bias=np.zeros(bottleneck),
            w=np.zeros(bottleneck),
        )


@dataclass
class RouterCache:
    x: np.ndarray
    pre: np.ndarray
    normed: np.ndarray
    inv_std: np.ndarray
    t_emb: np.ndarray | None
    c_emb: np.ndarray | None
    slot: int | None
    params: RouterParams


def _context(params, t_emb, c_emb, slot):
    h = np.zeros(params.bottleneck)
    if t_emb is not None:
        if t_emb.shape[0] != params.w_t.shape[0]:
            raise DimensionError(f"t_emb has {t_emb.shape[0]} dims, router expects {params.w_t.shape[0]}")
        h = h + t_emb @ params.w_t
    if c_emb is not None:
        if c_emb.shape[0] != params.w_p.shape[0]:
            raise DimensionError(f"c_emb has {c_emb.shape[0]} dims, router expects {params.w_p.shape[0]}")
        h = h + c_emb @ params.w_p
    if slot is not None:
        if not 0 <= slot < params.layer_emb.shape[0]:
            raise DimensionError(f"layer slot {slot} outside table of {params.layer_emb.shape[0]}")
        h = h + params.layer_emb[slot]
    return h


def router_forward(params: RouterParams, x, t_emb=None, c_emb=None, layer: int | None = None):
    """Score every row of ``x``.  Returns ``(scores, cache)``.

    ``layer`` indexes the router's own layer-embedding table; absent
    contexts contribute nothing to the fused shift.
    """
    x = as_matrix(x, "x")
    if x.shape[1] != params.d_model:
        raise DimensionError(f"x has {x.shape[1]} features, router expects {params.d_model}")
    t_emb = None if t_emb is None else as_vector(t_emb, "t_emb")
    c_emb = None if c_emb is None else as_vector(c_emb, "c_emb")
    pre = x @ params.w_x + params.b_x + _context(params, t_emb, c_emb, layer)
    normed, inv_std = layer_norm_forward(silu(pre))
    scores = (normed * params.ln_gain + params.ln_bias) @ params.w
    return scores, RouterCache(x, pre, normed, inv_std, t_emb, c_emb, layer, params)


def router_backward(cache: RouterCache, dl_ds):
    """Returns ``(param_grads, dl_dx)`` for the forward that produced ``cache``."""
    if not isinstance(cache, RouterCache):
        raise CacheError("router_backward needs the cache returned by router_forward")
    p = cache.params
    g = as_vector(dl_ds, "dl_ds")
    if g.shape[0] != cache.x.shape[0]:
        raise DimensionError(f"{g.shape[0]} score gradients for {cache.x.shape[0]} tokens")

    grads = p.zeros_like()
    affine = cache.normed * p.ln_gain + p.ln_bias
    grads.w[:] = affine.T @ g
    d_affine = np.outer(g, p.w)
    grads.ln_gain[:] = np.sum(d_affine * cache.normed, axis=0)
    grads.ln_bias[:] = d_affine.sum(axis=0)
    d_act = layer_norm_backward(d_affine * p.ln_gain, cache.normed, cache.inv_std)
    d_pre = d_act * silu_grad(cache.pre)

    grads.w_x[:] = cache.x.T @ d_pre
    d_ctx = d_pre.sum(axis=0)
    grads.b_x[:] = d_ctx
    if cache.t_emb is not None:
        grads.w_t[:] = np.outer(cache.t_emb, d_ctx)
    if cache.c_emb is not None:
        grads.w_p[:] = np.outer(cache.c_emb, d_ctx)
    if cache.slot is not None:
        grads.layer_emb[cache.slot] = d_ctx
    dl_dx = d_pre @ p.w_x.T
    return grads, dl_dx


def unified_score(s_cond, s_uncond) -> np.ndarray:
    """Elementwise max so both guidance branches select the same tokens."""
    a = as_vector(s_cond, "s_cond")
    b = as_vector(s_uncond, "s_uncond")
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return np.maximum(a, b)


class RouterGroupMap:
    """Assigns layers to shared routers.

    ``sharing`` is one of ``"global"`` (one router), ``"pairwise"`` (layers
    (0,1), (2,3), ...), ``"triple"`` or ``"independent"``.
    """

    def __init__(self, n_layers: int, d_model: int, sharing: str = "pairwise",
                 bottleneck: int = DEFAULT_BOTTLENECK, t_dim: int = 0, c_dim: int = 0,
                 rng: Rng | None = None):
        if sharing == "global":
            size = n_layers
        elif sharing in SHARING_GROUP_SIZE:
            size = SHARING_GROUP_SIZE[sharing]
        else:
            raise ValueError(f"unknown sharing mode {sharing!r}")
        rng = make_rng(0) if rng is None else rng
        self.n_layers = n_layers
        self.sharing = sharing
        self.group_size = size
        self.n_groups = math.ceil(n_layers / size)
        self.routers = [RouterParams.init(d_model, bottleneck, t_dim, c_dim, size, rng)
                        for _ in range(self.n_groups)]

    def group_of(self, layer: int) -> int:
        if not 0 <= layer < self.n_layers:
            raise IndexError(f"layer {layer} outside [0, {self.n_layers})")
        return layer // self.group_size

    def slot_of(self, layer: int) -> int:
        return layer % self.group_size

    def router_for(self, layer: int) -> RouterParams:
        return self.routers[self.group_of(layer)]

    def num_params(self) -> int:
        return sum(r.num_params() for r in self.routers)
