"""Monte Carlo alignment of the single-path gradient with the exact surrogate gradient.

Trial model: features ``X ~ N(0, 1)``, router logits ``s ~ N(0, 1)``, a
random bias-free two-layer block ``F`` and a random regression target.
Token ``i`` is gated between the block path and the identity skip::

    replace:   y_i = F(pi_i x_i) + (1 - pi_i) x_i
    residual:  y_i = x_i + F(pi_i x_i)      (block keeps its own skip)

with loss ``0.5 ||Y - T||^2``.  ``g*`` uses both path gradients for every
token; ``g_hat`` uses only the path chosen by hard top-k on ``s``.
"""

from __future__ import annotations

import time

import numpy as np

from ..numeric import fork_rng, silu, silu_grad
from ..selection import (PathGradients, budget_to_count, hard_topk, residual_ste_grad,
                         surrogate_grad_exact)
from ..soft_rank import inclusion_prob, soft_rank
from .config import GradConsistencyConfig
from .report import RunReport, config_dict, histogram_svg, series_to_csv

PATH_MODELS = ("replace", "residual")
MIN_TRIALS = 1000


def _path_grads(cfg, x, pi, w1, w2, target):
    """Both path gradients at gate value(s) ``pi``; rows of ``x`` are tokens."""
    pre = (pi * x) @ w1
    block = silu(pre) @ w2
    y = block + (1.0 - pi) * x if cfg.path_model == "replace" else x + block
    g = y - target
    through_block = ((g @ w2.T) * silu_grad(pre)) @ w1.T
    grad_sel = through_block if cfg.path_model == "replace" else g + through_block
    grad_rej = np.zeros_like(g) if cfg.zero_rejected_grad else g
    return grad_sel, grad_rej


def trial_gradients(cfg: GradConsistencyConfig, rng):
    """One trial; returns ``(g_hat, g_star)``.

    Both estimators read the same path gradients, taken at the soft gates;
    ``g_hat`` keeps only the term of the path that hard top-k executes.
    """
    n, d, h = cfg.n_tokens, cfg.d_model, cfg.hidden
    x = rng.normal(size=(n, d))
    logits = rng.normal(size=n)
    w1 = rng.normal(size=(d, h)) / np.sqrt(d)
    w2 = rng.normal(size=(h, d)) / np.sqrt(h)
    target = rng.normal(size=(n, d))

    state = soft_rank(logits, cfg.tau_rank)
    pi = inclusion_prob(state, n * cfg.ratio, cfg.tau_sel, cfg.normalized, n).pi[:, None]
    grad_sel, grad_rej = _path_grads(cfg, x, pi, w1, w2, target)
    g_star = surrogate_grad_exact(grad_sel, grad_rej, x)
    out = hard_topk(logits, budget_to_count(n, cfg.ratio), x)
    paths = PathGradients(grad_sel[out.indices_sel], grad_rej[out.indices_rej])
    g_hat = residual_ste_grad(paths, out, x)
    return g_hat, g_star


def cosine(a, b) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def run_grad_consistency(cfg: GradConsistencyConfig) -> RunReport:
    if cfg.trials < MIN_TRIALS:
        raise ValueError(f"grad_consistency needs at least {MIN_TRIALS} trials, got {cfg.trials}")
    if cfg.path_model not in PATH_MODELS:
        raise ValueError(f"path_model must be one of {PATH_MODELS}, got {cfg.path_model!r}")
    start = time.perf_counter()
    cosines, resampled = [], []
    for trial in range(cfg.trials):
        attempt = 0
        while True:
            g_hat, g_star = trial_gradients(cfg, fork_rng(cfg.seed, trial, attempt))
            if np.linalg.norm(g_hat) > 0 and np.linalg.norm(g_star) > 0:
                break
            attempt += 1
        cosines.append(cosine(g_hat, g_star))
        resampled.append(attempt)

    c = np.asarray(cosines)
    counts, edges = np.histogram(c, bins=cfg.bins, range=(-1.0, 1.0))
    summary = {
        "mean_cosine": float(c.mean()),
        "std_cosine": float(c.std()),
        "min_cosine": float(c.min()),
        "fraction_positive": float(np.mean(c > 0)),
        "resampled_trials": int(sum(a > 0 for a in resampled)),
        "sampling": (f"X~N(0,1) {cfg.n_tokens}x{cfg.d_model}, logits~N(0,1), "
                     f"ratio={cfg.ratio}, path_model={cfg.path_model}"),
    }
    series = {"trial": list(range(cfg.trials)), "cosine": cosines, "resampled": resampled}
    report = RunReport("grad_consistency", config_dict(cfg), series, summary)
    report.extra_csv["histogram.csv"] = series_to_csv({
        "bin_lo": edges[:-1].tolist(), "bin_hi": edges[1:].tolist(), "count": counts.tolist()})
    report.svg = histogram_svg(edges.tolist(), counts.tolist(), "cosine(g_hat, g_star)")
    report.wall_clock_s = time.perf_counter() - start
    return report
