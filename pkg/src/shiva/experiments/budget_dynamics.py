"""Joint learning of a token scorer and a scalar budget on synthetic tokens.

Each step draws ``n_tokens`` Gaussian tokens of which ``signal_count`` are
shifted by ``signal_mean``.  The router is trained with Adam through the
residual straight-through gradient; after ``warmup_steps`` the continuous
budget ``k`` is trained with plain SGD against the captured-signal utility
plus a linear sparsity penalty.
"""

from __future__ import annotations

import time

import numpy as np

from ..losses import captured_signal_loss, sparsity_penalty
from ..numeric import fork_rng, make_rng
from ..optim import Adam, SgdState, sgd_step
from ..router import RouterParams, router_backward, router_forward
from ..selection import PathGradients, budget_grad, hard_topk, residual_ste_grad
from ..soft_rank import (anneal, chain_scores_grad, inclusion_grads, inclusion_prob,
                         perturb_scores, soft_rank)
from .config import BudgetDynamicsConfig
from .report import RunReport, config_dict, line_plot_svg


def sample_tokens(cfg: BudgetDynamicsConfig, rng):
    x = rng.normal(0.0, cfg.feature_std, size=(cfg.n_tokens, cfg.d_model))
    signal = rng.permutation(cfg.n_tokens)[:cfg.signal_count]
    x[signal] += cfg.signal_mean
    return x, signal


def sorting_accuracy(scores, signal) -> float:
    """Fraction of true signal tokens among the top ``len(signal)`` scores."""
    top = np.argsort(-scores, kind="stable")[:len(signal)]
    return len(np.intersect1d(top, signal)) / len(signal)


def run_budget_dynamics(cfg: BudgetDynamicsConfig) -> RunReport:
    start = time.perf_counter()
    data_rng = fork_rng(cfg.seed, 0)
    noise_rng = fork_rng(cfg.seed, 1)
    router = RouterParams.init(cfg.d_model, cfg.bottleneck, rng=make_rng(cfg.seed))
    router_opt = Adam(lr=cfg.lr_router)
    budget_opt = SgdState(cfg.lr_budget)
    utility_scale = cfg.utility_scale
    n = cfg.n_tokens
    k = float(cfg.k_init)
    total = cfg.warmup_steps + cfg.adapt_steps
    cols = ("step", "phase", "k", "k_int", "accuracy", "loss_task", "loss_penalty",
            "tau_rank", "tau_sel")
    series = {c: [] for c in cols}

    for step in range(total):
        tau_rank = anneal(step, total, cfg.tau_rank_start, cfg.tau_rank_end)
        tau_sel = anneal(step, total, cfg.tau_sel_start, cfg.tau_sel_end)
        x, signal = sample_tokens(cfg, data_rng)
        scores, cache = router_forward(router, x)
        s_tilde = perturb_scores(scores, cfg.score_noise * float(np.std(scores)), noise_rng)
        state = soft_rank(s_tilde, tau_rank)
        probs = inclusion_prob(state, k, tau_sel, cfg.normalized, n)
        k_int = max(1, min(n, int(np.floor(k))))
        outcome = hard_topk(s_tilde, k_int, x)

        loss_task, g_sel = captured_signal_loss(outcome.x_sel)
        loss_task *= utility_scale
        g_sel = g_sel * utility_scale
        # the task ignores skipped tokens, so their identity-path gradient is zero
        paths = PathGradients(g_sel, np.zeros_like(outcome.x_rej))
        dl_dpi = residual_ste_grad(paths, outcome, x)
        grads, _ = router_backward(cache, chain_scores_grad(dl_dpi, probs, state))
        router_opt.step(router, grads)

        loss_pen, dpen_dk = sparsity_penalty(k, cfg.lam)
        adapting = step >= cfg.warmup_steps
        if adapting:
            _, dpi_dk = inclusion_grads(probs, state)
            dl_dk = budget_grad(dl_dpi, dpi_dk) + dpen_dk
            k = float(np.clip(sgd_step(np.array([k]), np.array([dl_dk]), budget_opt)[0], 1.0, n))

        row = (step, "adapt" if adapting else "warmup", k, k_int,
               sorting_accuracy(scores, signal), loss_task, loss_pen, tau_rank, tau_sel)
        for c, v in zip(cols, row):
            series[c].append(v)

    eval_rng = fork_rng(cfg.seed, 2)
    eval_acc = []
    for _ in range(cfg.eval_samples):
        x, signal = sample_tokens(cfg, eval_rng)
        eval_acc.append(sorting_accuracy(router_forward(router, x)[0], signal))
    tail = max(1, cfg.adapt_steps // 10)
    summary = {
        "eval_accuracy": float(np.mean(eval_acc)),
        "final_k": k,
        "final_accuracy": series["accuracy"][-1],
        "mean_k_last_10pct": float(np.mean(series["k"][-tail:])),
        "mean_accuracy_last_10pct": float(np.mean(series["accuracy"][-tail:])),
        "utility_scale": utility_scale,
    }
    report = RunReport("budget_dynamics", config_dict(cfg), series, summary)
    report.svg = line_plot_svg(series["step"], {"k": series["k"], "accuracy": series["accuracy"]},
                               "budget k and sorting accuracy")
    report.wall_clock_s = time.perf_counter() - start
    return report
