"""Three-stage training of the toy block stack against a dense teacher.

The student starts as a copy of a frozen dense teacher, so the only error
comes from tokens that skip blocks.  Inputs depend on the timestep: at
``t = 0`` they are clean tokens with heterogeneous magnitudes, at
``t = t_max`` pure Gaussian noise.

Stage 1 warms up the routers on stratified ratios (or one fixed ratio).
Stage 2 learns the ratio policy under logit noise and the EMA budget loss.
Stage 3 tunes blocks, routers and policy together without noise, adding
normalized feature distillation on intermediate layers.
"""

from __future__ import annotations

import time

import numpy as np

from .. import selection as sel
from ..budget import BudgetTracker, budget_loss, ema_update, stratified_ratios, stratified_timesteps
from ..losses import mse_loss, normalized_distillation
from ..numeric import fork_rng
from ..optim import Adam, linear_warmup
from ..ratio_policy import compile_lut, default_timesteps
from ..soft_rank import anneal
from ..toy_block import (BlockStack, StackConfig, dense_backward, dense_forward, stack_backward,
                         stack_forward)
from .config import ToyTrainConfig
from .report import RunReport, config_dict, line_plot_svg, series_to_csv

STAGES = ("router_warmup", "policy", "joint")


class BudgetViolation(AssertionError):
    """A layer processed a different number of tokens than its static budget."""


def sample_batch(cfg: ToyTrainConfig, t_values, rng):
    """One ``(N, D)`` token matrix per timestep; noisier as ``t`` grows."""
    out = []
    for t in t_values:
        a = float(t) / cfg.t_max
        scale = np.exp(rng.normal(0.0, 1.0, size=(cfg.n_tokens, 1)))
        clean = rng.normal(size=(cfg.n_tokens, cfg.d_model)) * scale
        noise = rng.normal(size=(cfg.n_tokens, cfg.d_model))
        out.append((1.0 - a) * clean + a * noise)
    return out


def _stack_config(cfg: ToyTrainConfig) -> StackConfig:
    return StackConfig(n_layers=cfg.n_layers, d_model=cfg.d_model, hidden=cfg.hidden,
                       sharing=cfg.sharing, bottleneck=cfg.bottleneck,
                       router_freq=cfg.router_freq, score_noise=cfg.score_noise,
                       first_block_skip=cfg.first_block_skip, r_target=cfg.r_target,
                       t_max=cfg.t_max)


def _distill_layers(cfg: ToyTrainConfig) -> list:
    """Intermediate layers whose outputs are distilled; the last one is the task."""
    if cfg.distill_every <= 0:
        return []
    return [l for l in range(cfg.n_layers - 1) if (l + 1) % cfg.distill_every == 0]


def _layer_outputs(inputs, out):
    """Output of layer ``l`` is the input of layer ``l + 1``."""
    return list(inputs[1:]) + [out]


def check_static_budget(trace, n_tokens: int) -> int:
    """Number of pruned layers whose partition departs from ``max(1, floor(N r))``."""
    bad = 0
    for lt in trace.layers:
        if not lt.pruned:
            continue
        expect = sel.budget_to_count(n_tokens, lt.ratio)
        out = lt.outcome
        if (lt.k_int != expect or out.k != expect
                or len(out.indices_sel) + len(out.indices_rej) != n_tokens):
            bad += 1
    return bad


def _item_ratios(cfg, stage, batch, rng):
    """Per-item ratio overrides, or None to let the policy decide."""
    if cfg.ratio_override > 0:
        return [cfg.ratio_override] * batch
    if stage != 0:
        return [None] * batch
    if cfg.fixed_ratio > 0:
        return [cfg.fixed_ratio] * batch
    groups = stratified_ratios(cfg.ratio_groups, cfg.r_min, cfg.r_max, rng)
    return [float(groups[i * cfg.ratio_groups // batch]) for i in range(batch)]


def run_toy_train(cfg: ToyTrainConfig) -> RunReport:
    start = time.perf_counter()
    if cfg.n_layers < 2:
        raise ValueError("toy_train needs at least two layers")
    init_rng = fork_rng(cfg.seed, 0)
    data_rng = fork_rng(cfg.seed, 1)
    time_rng = fork_rng(cfg.seed, 2)
    ratio_rng = fork_rng(cfg.seed, 3)
    noise_rng = fork_rng(cfg.seed, 4)

    stack = BlockStack(_stack_config(cfg), init_rng)
    teacher = [bp.copy() for bp in stack.blocks]
    opt_blocks = Adam(lr=cfg.lr_blocks)
    opt_router = Adam(lr=cfg.lr_router)
    opt_policy = Adam(lr=cfg.lr_policy)
    tracker = BudgetTracker(cfg.r_target, cfg.beta, cfg.lam)
    distill_at = _distill_layers(cfg)
    lengths = (cfg.stage1_steps, cfg.stage2_steps, cfg.stage3_steps)
    total = sum(lengths)
    b = cfg.batch_size

    cols = ("step", "stage", "loss_task", "loss_budget", "loss_distill", "mu_global", "r_bar",
            "score_std")
    series = {c: [] for c in cols}
    violations = 0
    processed = 0
    step = 0
    for stage, n_steps in enumerate(lengths):
        for _ in range(n_steps):
            tau_rank = anneal(step, total, cfg.tau_rank_start, cfg.tau_rank_end)
            tau_sel = anneal(step, total, cfg.tau_sel_start, cfg.tau_sel_end)
            stack.config.tau_rank, stack.config.tau_sel = tau_rank, tau_sel
            noisy = stage < 2
            t_values = stratified_timesteps(b, cfg.t_max, time_rng).draws
            xs = sample_batch(cfg, t_values, data_rng)
            item_ratios = _item_ratios(cfg, stage, b, ratio_rng)

            # forward every item
            fwd = []
            for x, t, r in zip(xs, t_values, item_ratios):
                t_out, t_caches = dense_forward(teacher, x)
                if cfg.dense:
                    out, caches = dense_forward(stack.blocks, x)
                    fwd.append((out, caches, t_out, t_caches, [1.0]))
                    processed += cfg.n_tokens * cfg.n_layers
                    continue
                out, trace = stack_forward(
                    stack, x, float(t), "hard", ratios=r, rng=noise_rng,
                    policy_noise=cfg.policy_noise if noisy else 0.0,
                    score_noise=cfg.score_noise if noisy else 0.0)
                violations += check_static_budget(trace, cfg.n_tokens)
                processed += trace.processed_tokens
                fwd.append((out, trace, t_out, t_caches, trace.ratios))

            r_bar = float(np.mean([r for item in fwd for r in item[4]]))
            tracker = ema_update(tracker, r_bar)
            loss_b, dlb_dr_bar = budget_loss(tracker, r_bar)
            n_ratios = sum(len(item[4]) for item in fwd)
            dr_item = cfg.lambda_b * dlb_dr_bar / n_ratios if stage >= 1 else 0.0

            # backward every item and accumulate the batch-mean gradient
            loss_task = loss_distill = 0.0
            score_std = []
            acc_blocks = [bp.zeros_like() for bp in stack.blocks]
            acc_routers = [rp.zeros_like() for rp in stack.groups.routers]
            acc_policy = stack.policy.zeros_like()
            for out, trace_or_caches, t_out, t_caches, _ in fwd:
                lt_task, g = mse_loss(out, t_out)
                loss_task += lt_task / b
                g = g / b
                extra = {}
                if stage == 2:
                    inputs = ([c[0] for c in trace_or_caches] if cfg.dense
                              else [lt.x for lt in trace_or_caches.layers])
                    s_outs = _layer_outputs(inputs, out)
                    t_outs = _layer_outputs([c[0] for c in t_caches], t_out)
                    for l in distill_at:
                        ld, gd = normalized_distillation(s_outs[l], t_outs[l])
                        loss_distill += ld / b
                        extra[l] = (cfg.lambda_d / b) * gd
                if cfg.dense:
                    grads, _ = dense_backward(stack.blocks, trace_or_caches, g, extra)
                    for acc, gr in zip(acc_blocks, grads):
                        acc.add_(gr)
                    continue
                trace = trace_or_caches
                score_std.extend(float(np.std(lt.state.scores_perturbed))
                                 for lt in trace.layers if lt.pruned)
                dl_dratio = [dr_item] * cfg.n_layers
                grads = stack_backward(trace, g, dl_dratio, extra)
                for acc, gr in zip(acc_blocks, grads.blocks):
                    acc.add_(gr)
                for acc, gr in zip(acc_routers, grads.routers):
                    acc.add_(gr)
                acc_policy.add_(grads.policy)

            # updates for the parameters each stage trains
            router_scale = linear_warmup(step, cfg.warmup_steps)
            if stage in (0, 2) and not cfg.dense:
                for i, (rp, gr) in enumerate(zip(stack.groups.routers, acc_routers)):
                    opt_router.step(rp, gr, router_scale, key=i)
            if stage >= 1 and not cfg.dense and cfg.ratio_override <= 0:
                opt_policy.step(stack.policy, acc_policy)
            if stage == 2:
                for i, (bp, gr) in enumerate(zip(stack.blocks, acc_blocks)):
                    opt_blocks.step(bp, gr, key=i)

            row = (step, STAGES[stage], loss_task, loss_b, loss_distill, tracker.mu_global,
                   r_bar, float(np.mean(score_std)) if score_std else 0.0)
            for c, v in zip(cols, row):
                series[c].append(v)
            step += 1

    lut = compile_lut(stack.policy, default_timesteps(cfg.lut_steps, cfg.t_max))
    ends = np.cumsum(lengths)

    def stage_end(col, s):
        return series[col][ends[s] - 1] if lengths[s] else None

    def stage_mean(col, s):
        lo, hi = ends[s] - lengths[s], ends[s]
        return float(np.mean(series[col][lo:hi])) if lengths[s] else None

    summary = {
        "budget_violations": violations,
        "mu_global_end_stage2": stage_end("mu_global", 1),
        "mu_global_final": tracker.mu_global,
        "score_std_stage1": stage_mean("score_std", 0),
        "loss_task_final": series["loss_task"][-1] if total else None,
        "processed_token_fraction": processed / max(1, total * b * cfg.n_tokens * cfg.n_layers),
        "lut_mean_ratio": float(lut.grid[:, int(cfg.first_block_skip):].mean()),
    }
    report = RunReport("toy_train", config_dict(cfg), series, summary)
    report.extra_csv["lut.csv"] = lut.to_csv()
    report.extra_csv["mu_global.csv"] = series_to_csv(
        {"step": series["step"], "mu_global": series["mu_global"]})
    report.svg = line_plot_svg(series["step"], {"loss_task": series["loss_task"],
                                                "mu_global": series["mu_global"],
                                                "r_bar": series["r_bar"]},
                               "toy stack training")
    report.wall_clock_s = time.perf_counter() - start
    report.artifacts.update(stack=stack, lut=lut, tracker=tracker)
    return report
