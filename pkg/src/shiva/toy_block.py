"""A stack of per-token residual blocks with learned token selection.

Each block is ``y = z + SiLU(z W1) W2`` applied row-wise.  In ``"hard"``
mode every pruned layer scores its tokens, keeps the top
``max(1, floor(N r))`` of them for the block and passes the rest through
unchanged.  ``"surrogate"`` mode runs both paths for every token, gated by
the inclusion probabilities (``x + F(pi * x)``); it is smooth, which makes
it the mode to finite-difference.

The block has no biases so ``F(0) = 0`` and the gated surrogate reduces to
the hard forward at ``pi`` in {0, 1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import selection as sel
from .soft_rank import (InclusionProbs, SoftRankState, chain_scores_grad, inclusion_grads,
                        inclusion_prob, perturb_scores, soft_rank)
from .numeric import Rng, as_matrix, make_rng, silu, silu_grad
from .params import ParamSet
from .ratio_policy import (RatioPolicyParams, policy_backward_batch, policy_forward,
                           timestep_embedding)
from .router import RouterGroupMap, RouterParams, router_backward, router_forward


class StaleTraceError(RuntimeError):
    """stack_backward was handed a trace it cannot use."""


@dataclass
class BlockParams(ParamSet):
    w1: np.ndarray
    w2: np.ndarray

    @classmethod
    def init(cls, d_model: int, hidden: int, rng: Rng, scale: float = 1.0) -> "BlockParams":
        return cls(rng.normal(0.0, scale / math.sqrt(d_model), size=(d_model, hidden)),
                   rng.normal(0.0, scale / math.sqrt(hidden), size=(hidden, d_model)))


def block_forward(p: BlockParams, z):
    h = z @ p.w1
    a = silu(h)
    return z + a @ p.w2, (z, h, a)


def block_backward(p: BlockParams, cache, g):
    """Returns ``(grads, dL/dz)`` for ``y = z + F(z)``."""
    z, h, a = cache
    grads = BlockParams(z.T @ ((g @ p.w2.T) * silu_grad(h)), a.T @ g)
    dz = g + ((g @ p.w2.T) * silu_grad(h)) @ p.w1.T
    return grads, dz


@dataclass
class StackConfig:
    n_layers: int = 4
    d_model: int = 16
    hidden: int = 32
    sharing: str = "pairwise"
    bottleneck: int = 64
    router_freq: int = 8
    c_dim: int = 0
    tau_rank: float = 0.2
    tau_sel: float = 0.1
    normalized: bool = True
    score_noise: float = 0.05
    first_block_skip: bool = True
    router_grad_to_features: bool = False
    r_target: float = 0.6
    t_max: float = 1000.0
    policy_hidden: int = 256
    policy_freq: int = 64


class BlockStack:
    def __init__(self, config: StackConfig, rng: Rng | None = None):
        rng = make_rng(0) if rng is None else rng
        c = config
        self.config = c
        self.blocks = [BlockParams.init(c.d_model, c.hidden, rng) for _ in range(c.n_layers)]
        self.groups = RouterGroupMap(c.n_layers, c.d_model, c.sharing, c.bottleneck,
                                     t_dim=2 * c.router_freq if c.router_freq else 0,
                                     c_dim=c.c_dim, rng=rng)
        self.policy = RatioPolicyParams.init(c.n_layers, c.r_target, c.policy_hidden,
                                             c.policy_freq, rng)

    def pruned(self, layer: int) -> bool:
        return not (self.config.first_block_skip and layer == 0)

    def router_time_embedding(self, t: float):
        if not self.config.router_freq:
            return None
        return timestep_embedding(t / self.config.t_max * 1000.0, self.config.router_freq)


@dataclass
class LayerTrace:
    layer: int
    x: np.ndarray
    block_cache: tuple
    pruned: bool
    ratio: float = 1.0
    k_cont: float = 0.0
    k_int: int = 0
    outcome: sel.SelectionOutcome | None = None
    router_cache: object = None
    policy_cache: object = None
    state: SoftRankState | None = None
    probs: InclusionProbs | None = None


@dataclass
class StackTrace:
    stack: BlockStack
    mode: str
    layers: list = field(default_factory=list)
    consumed: bool = False

    @property
    def processed_tokens(self) -> int:
        """Rows that went through a block, summed over layers."""
        return sum(lt.x.shape[0] if lt.outcome is None else lt.outcome.k for lt in self.layers)

    @property
    def ratios(self) -> list:
        return [lt.ratio for lt in self.layers if lt.pruned]

    @property
    def selected_counts(self) -> list:
        return [lt.k_int for lt in self.layers if lt.pruned]


@dataclass
class StackGrads:
    blocks: list
    routers: list
    policy: RatioPolicyParams
    dl_dx: np.ndarray
    dl_dk: list
    dl_dpi: list


def _layer_ratio(stack, layer, t, ratios, policy_noise, rng):
    if ratios is not None:
        r = float(ratios[layer]) if np.ndim(ratios) else float(ratios)
        return r, None
    _, r, cache = policy_forward(stack.policy, t, layer, policy_noise, rng)
    return r, cache


def stack_forward(stack: BlockStack, x, t: float, mode: str = "hard", ratios=None,
                  c_emb=None, rng: Rng | None = None, policy_noise: float = 0.0,
                  score_noise: float | None = None):
    """Run the stack on one token matrix at timestep ``t``.

    ``ratios`` (scalar or per-layer sequence) overrides the policy.
    ``score_noise`` is the perturbation std as a fraction of the score std.
    """
    if mode not in ("hard", "surrogate"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = stack.config
    score_noise = cfg.score_noise if score_noise is None else score_noise
    x = as_matrix(x, "x")
    n = x.shape[0]
    t_emb = stack.router_time_embedding(t)
    trace = StackTrace(stack, mode)
    for layer, bp in enumerate(stack.blocks):
        if not stack.pruned(layer):
            y, bc = block_forward(bp, x)
            trace.layers.append(LayerTrace(layer, x, bc, pruned=False, k_int=n))
            x = y
            continue
        r, pcache = _layer_ratio(stack, layer, t, ratios, policy_noise, rng)
        k_cont = n * r
        k_int = sel.budget_to_count(n, r)
        router = stack.groups.router_for(layer)
        scores, rcache = router_forward(router, x, t_emb, c_emb, stack.groups.slot_of(layer))
        sigma = score_noise * float(np.std(scores))
        s_tilde = perturb_scores(scores, sigma, rng)
        state = soft_rank(s_tilde, cfg.tau_rank)
        probs = inclusion_prob(state, k_cont, cfg.tau_sel, cfg.normalized, n)
        lt = LayerTrace(layer, x, (), True, r, k_cont, k_int, None, rcache, pcache, state, probs)
        if mode == "hard":
            outcome = sel.hard_topk(s_tilde, k_int, x)
            y_sel, bc = block_forward(bp, outcome.x_sel)
            y = sel.scatter_back(outcome, y_sel, outcome.x_rej)
            lt.outcome = outcome
        else:
            y_gate, bc = block_forward(bp, probs.pi[:, None] * x)
            y = y_gate + (1.0 - probs.pi[:, None]) * x
        lt.block_cache = bc
        trace.layers.append(lt)
        x = y
    return x, trace


def stack_backward(trace: StackTrace, dl_dout, dl_dratio=None, extra_grads=None) -> StackGrads:
    """Backward through a traced forward.

    ``dl_dratio`` adds direct loss gradients on each layer's ratio (e.g. the
    budget loss); ``extra_grads`` maps a layer index to a gradient on that
    layer's output (e.g. intermediate distillation).
    """
    if not isinstance(trace, StackTrace) or trace.consumed:
        raise StaleTraceError("stack_backward needs a fresh trace from stack_forward")
    trace.consumed = True
    stack = trace.stack
    cfg = stack.config
    g = as_matrix(dl_dout, "dl_dout").copy()
    block_grads = [bp.zeros_like() for bp in stack.blocks]
    router_grads = [rp.zeros_like() for rp in stack.groups.routers]
    policy_terms = []
    dl_dk = [0.0] * len(stack.blocks)
    dl_dpi = [None] * len(stack.blocks)
    extra_grads = extra_grads or {}

    for lt in reversed(trace.layers):
        layer = lt.layer
        if layer in extra_grads:
            g = g + extra_grads[layer]
        bp = stack.blocks[layer]
        if not lt.pruned:
            block_grads[layer], g = block_backward(bp, lt.block_cache, g)
            continue

        x = lt.x
        if trace.mode == "hard":
            out = lt.outcome
            grad_rej = g[out.indices_rej]
            block_grads[layer], grad_sel = block_backward(bp, lt.block_cache, g[out.indices_sel])
            dpi = sel.residual_ste_grad(sel.PathGradients(grad_sel, grad_rej), out, x)
            dx = np.empty_like(g)
            dx[out.indices_sel] = grad_sel
            dx[out.indices_rej] = grad_rej
        else:
            pi = lt.probs.pi[:, None]
            block_grads[layer], grad_sel = block_backward(bp, lt.block_cache, g)
            grad_rej = g
            dpi = sel.surrogate_grad_exact(grad_sel, grad_rej, x)
            dx = pi * grad_sel + (1.0 - pi) * grad_rej

        dl_dpi[layer] = dpi
        ds = chain_scores_grad(dpi, lt.probs, lt.state)
        rgrads, dx_router = router_backward(lt.router_cache, ds)
        router_grads[stack.groups.group_of(layer)].add_(rgrads)
        if cfg.router_grad_to_features:
            dx = dx + dx_router

        _, dpi_dk = inclusion_grads(lt.probs, lt.state)
        dl_dk[layer] = sel.budget_grad(dpi, dpi_dk)
        if lt.policy_cache is not None:
            dr = x.shape[0] * dl_dk[layer]
            if dl_dratio is not None:
                dr += float(dl_dratio[layer])
            policy_terms.append((lt.policy_cache, dr))
        g = dx

    if policy_terms:
        policy_grads = policy_backward_batch(*zip(*policy_terms))
    else:
        policy_grads = stack.policy.zeros_like()
    return StackGrads(block_grads, router_grads, policy_grads, g, dl_dk, dl_dpi)


def dense_forward(blocks, x):
    """The same blocks with selection removed: every token through every block."""
    caches = []
    x = as_matrix(x, "x")
    for bp in blocks:
        x, bc = block_forward(bp, x)
        caches.append(bc)
    return x, caches


def dense_backward(blocks, caches, dl_dout, extra_grads=None):
    """``extra_grads`` works as in :func:`stack_backward`."""
    g = as_matrix(dl_dout, "dl_dout").copy()
    grads = [None] * len(blocks)
    extra_grads = extra_grads or {}
    for layer in reversed(range(len(blocks))):
        if layer in extra_grads:
            g = g + extra_grads[layer]
        grads[layer], g = block_backward(blocks[layer], caches[layer], g)
    return grads, g
