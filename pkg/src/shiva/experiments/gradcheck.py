"""Every analytic gradient in the library against central finite differences.

Each check builds a small fixed-seed instance and returns the largest error
it saw together with its tolerance.  ``run_gradcheck`` runs the whole
registry; the command exits nonzero if any check fails.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import selection as sel
from ..budget import BudgetTracker, budget_loss
from ..finite_diff import numeric_grad, numeric_jacobian, rel_error
from ..losses import normalized_distillation
from ..numeric import fork_rng, layer_norm_backward, layer_norm_forward, silu, silu_grad
from ..ratio_policy import RatioPolicyParams, policy_backward, policy_forward
from ..router import RouterParams, router_backward, router_forward
from ..soft_rank import (chain_scores_grad, inclusion_grads, inclusion_prob, rank_vjp, soft_rank,
                         soft_rank_jacobian)
from ..toy_block import (BlockParams, BlockStack, StackConfig, block_backward, block_forward,
                         stack_backward, stack_forward)
from .config import GradcheckConfig
from .report import RunReport, config_dict, series_to_csv


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    metric: str  # "abs" or "rel"

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error <= self.tolerance)


# Central differences carry ~1e-10 |L| / h of rounding noise.  Entries whose
# true gradient is exactly zero (e.g. the router's LayerNorm bias: a uniform
# score shift leaves the soft ranks unchanged) are measured against this
# absolute floor instead of their own magnitude, so gradients below it are
# held to ``tolerance * GRAD_FLOOR`` absolute error.
GRAD_FLOOR = 1e-4


def _params_error(params, grads, loss_fn, h, floor=GRAD_FLOOR):
    return max(rel_error(getattr(grads, name), numeric_grad(loss_fn, arr, h), floor)
               for name, arr in params.arrays().items())


def check_soft_rank_jacobian(rng):
    s = rng.normal(size=8)
    tau = 0.5
    num = numeric_jacobian(lambda v: soft_rank(v, tau).ranks, s, 1e-6)
    return float(np.max(np.abs(soft_rank_jacobian(soft_rank(s, tau)) - num))), 1e-5, "abs"


def check_rank_vjp(rng):
    s, g = rng.normal(size=12), rng.normal(size=12)
    state = soft_rank(s, 0.3)
    return rel_error(rank_vjp(state, g), g @ soft_rank_jacobian(state)), 1e-10, "rel"


def check_inclusion_dk(rng):
    state = soft_rank(rng.normal(size=10), 0.4)
    k, h = 4.3, 1e-6
    _, dpi_dk = inclusion_grads(inclusion_prob(state, k, 0.1), state)
    num = (inclusion_prob(state, k + h, 0.1).pi - inclusion_prob(state, k - h, 0.1).pi) / (2 * h)
    return rel_error(dpi_dk, num), 1e-6, "rel"


def check_chain_scores(rng):
    s, w = rng.normal(size=6), rng.normal(size=6)
    k, tau_rank, tau_sel = 2.7, 0.5, 0.2

    def loss(v):
        return float(w @ inclusion_prob(soft_rank(v, tau_rank), k, tau_sel).pi)

    state = soft_rank(s, tau_rank)
    ana = chain_scores_grad(w, inclusion_prob(state, k, tau_sel), state)
    num = numeric_jacobian(lambda v: np.array([loss(v)]), s, 1e-6)[0]
    return rel_error(ana, num), 1e-5, "rel"


def _gate_setup(rng, n=5, d=4, h=6):
    x = rng.normal(size=(n, d))
    w1, w2 = rng.normal(size=(d, h)) / 2, rng.normal(size=(h, d)) / 2
    target = rng.normal(size=(n, d))
    return x, w1, w2, target


def check_surrogate_exact(rng):
    """Gating model: block on ``pi x``, identity on ``(1 - pi) x``."""
    x, w1, w2, target = _gate_setup(rng)
    pi = rng.uniform(0.1, 0.9, size=x.shape[0])

    def loss():
        y = silu((pi[:, None] * x) @ w1) @ w2 + (1.0 - pi[:, None]) * x
        return 0.5 * float(np.sum((y - target) ** 2))

    xs = pi[:, None] * x
    pre = xs @ w1
    g = silu(pre) @ w2 + (1.0 - pi[:, None]) * x - target
    grad_sel = ((g @ w2.T) * silu_grad(pre)) @ w1.T
    ana = sel.surrogate_grad_exact(grad_sel, g, x)
    return rel_error(ana, numeric_grad(loss, pi, 1e-6)), 1e-5, "rel"


def check_budget_grad(rng):
    state = soft_rank(rng.normal(size=7), 0.4)
    w = rng.normal(size=7)
    k = np.array([3.2])

    def loss():
        return float(w @ inclusion_prob(state, float(k[0]), 0.15).pi)

    probs = inclusion_prob(state, float(k[0]), 0.15)
    ana = sel.budget_grad(w, inclusion_grads(probs, state)[1])
    return rel_error(ana, numeric_grad(loss, k, 1e-6)[0]), 1e-6, "rel"


def check_router(rng):
    p = RouterParams.init(6, 4, t_dim=4, c_dim=3, layer_slots=2, rng=rng)
    for arr in p.arrays().values():
        arr += rng.normal(0.0, 0.3, size=arr.shape)
    x, t_emb, c_emb = rng.normal(size=(3, 6)), rng.normal(size=4), rng.normal(size=3)
    w = rng.normal(size=3)

    def loss():
        return float(w @ router_forward(p, x, t_emb, c_emb, 1)[0])

    grads, dx = router_backward(router_forward(p, x, t_emb, c_emb, 1)[1], w)
    err = max(_params_error(p, grads, loss, 1e-5), rel_error(dx, numeric_grad(loss, x, 1e-5)))
    return err, 1e-4, "rel"


def check_policy(rng):
    p = RatioPolicyParams.init(3, 0.6, hidden=8, n_freq=4, rng=rng)
    for arr in p.arrays().values():
        arr += rng.normal(0.0, 0.3, size=arr.shape)

    def loss():
        return 1.7 * policy_forward(p, 420.0, 2)[1]

    grads = policy_backward(policy_forward(p, 420.0, 2)[2], 1.7)
    return _params_error(p, grads, loss, 1e-6), 1e-4, "rel"


def check_block(rng):
    p = BlockParams.init(4, 6, rng)
    z, w = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))

    def loss():
        return float(np.sum(w * block_forward(p, z)[0]))

    grads, dz = block_backward(p, block_forward(p, z)[1], w)
    err = max(_params_error(p, grads, loss, 1e-6), rel_error(dz, numeric_grad(loss, z, 1e-6)))
    return err, 1e-4, "rel"


def check_layer_norm(rng):
    v, w = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))

    def loss():
        return float(np.sum(w * layer_norm_forward(v)[0]))

    normed, inv_std = layer_norm_forward(v)
    return rel_error(layer_norm_backward(w, normed, inv_std), numeric_grad(loss, v, 1e-6)), 1e-4, "rel"


def check_distillation(rng):
    hs, ht = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))

    def loss():
        return normalized_distillation(hs, ht)[0]

    return rel_error(normalized_distillation(hs, ht)[1], numeric_grad(loss, hs, 1e-6)), 1e-4, "rel"


def check_budget_loss(rng):
    tracker = BudgetTracker(0.6, mu_global=float(rng.uniform(0.2, 0.9)), lam=0.7)
    r_bar, h = 0.55, 1e-4
    num = (budget_loss(tracker, r_bar + h)[0] - budget_loss(tracker, r_bar - h)[0]) / (2 * h)
    return abs(budget_loss(tracker, r_bar)[1] - num), 1e-10, "abs"


def check_surrogate_stack(rng):
    """Whole stack in surrogate mode with a budget term on the ratios and an
    intermediate distillation term; every parameter and the input gradient."""
    cfg = StackConfig(n_layers=2, d_model=4, hidden=6, sharing="independent", bottleneck=5,
                      router_freq=2, score_noise=0.0, first_block_skip=False,
                      router_grad_to_features=True, policy_hidden=6, policy_freq=3,
                      tau_rank=0.5, tau_sel=0.3)
    stack = BlockStack(cfg, rng)
    for p in [stack.policy, *stack.groups.routers]:
        for arr in p.arrays().values():
            arr += rng.normal(0.0, 0.3, size=arr.shape)
    x, w = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    teacher = rng.normal(size=(5, 4))
    c_ratio = np.array([0.8, -1.3])
    t = 250.0

    def loss():
        out, trace = stack_forward(stack, x, t, "surrogate")
        distill = normalized_distillation(trace.layers[1].x, teacher)[0]
        return float(np.sum(w * out)) + 0.5 * distill + float(c_ratio @ trace.ratios)

    out, trace = stack_forward(stack, x, t, "surrogate")
    _, gd = normalized_distillation(trace.layers[1].x, teacher)
    grads = stack_backward(trace, w, dl_dratio=c_ratio, extra_grads={0: 0.5 * gd})
    h = 1e-5
    errs = [_params_error(bp, gb, loss, h) for bp, gb in zip(stack.blocks, grads.blocks)]
    errs += [_params_error(rp, gr, loss, h) for rp, gr in zip(stack.groups.routers, grads.routers)]
    errs.append(_params_error(stack.policy, grads.policy, loss, h))
    errs.append(rel_error(grads.dl_dx, numeric_grad(loss, x, h), GRAD_FLOOR))
    return max(errs), 1e-4, "rel"


CHECKS = {
    "soft_rank_jacobian": check_soft_rank_jacobian,
    "rank_vjp": check_rank_vjp,
    "inclusion_dpi_dk": check_inclusion_dk,
    "chain_scores_grad": check_chain_scores,
    "surrogate_grad_exact": check_surrogate_exact,
    "budget_grad": check_budget_grad,
    "router_backward": check_router,
    "policy_backward": check_policy,
    "block_backward": check_block,
    "layer_norm_backward": check_layer_norm,
    "normalized_distillation": check_distillation,
    "budget_loss": check_budget_loss,
    "surrogate_stack": check_surrogate_stack,
}


def run_checks(seed: int = 0, names=None) -> list[CheckResult]:
    results = []
    for i, (name, fn) in enumerate(CHECKS.items()):
        if names is not None and name not in names:
            continue
        err, tol, metric = fn(fork_rng(seed, i))
        results.append(CheckResult(name, float(err), tol, metric))
    return results


def run_gradcheck(cfg: GradcheckConfig | None = None) -> RunReport:
    cfg = GradcheckConfig() if cfg is None else cfg
    start = time.perf_counter()
    results = run_checks(cfg.seed)
    table = {
        "check": [r.name for r in results],
        "max_error": [r.max_error for r in results],
        "tolerance": [r.tolerance for r in results],
        "metric": [r.metric for r in results],
        "passed": [r.passed for r in results],
    }
    failed = [r.name for r in results if not r.passed]
    summary = {"passed": not failed, "n_checks": len(results), "failed": failed}
    report = RunReport("gradcheck", config_dict(cfg), table, summary)
    report.extra_csv["gradcheck.csv"] = series_to_csv(table)
    report.wall_clock_s = time.perf_counter() - start
    return report
