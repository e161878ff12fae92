"""Global retention budget: EMA tracking, the proxy budget loss and
stratified samplers, plus a variance analysis of stratified timestep sampling."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numeric import Rng, logit, sigmoid


@dataclass(frozen=True)
class BudgetTracker:
    r_target: float
    beta: float = 0.2
    lam: float = 1.0
    mu_global: float | None = None

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 <= self.r_target <= 1.0:
            raise ValueError(f"r_target must lie in [0, 1], got {self.r_target}")
        if self.mu_global is None:
            # start on budget so the first loss gradient is driven by data alone
            object.__setattr__(self, "mu_global", float(self.r_target))


def identity_sync(r_bar: float) -> float:
    """Single-process stand-in for an all-reduce of the batch mean ratio."""
    return r_bar


def ema_update(tracker: BudgetTracker, r_bar_batch: float,
               sync: Callable[[float], float] = identity_sync) -> BudgetTracker:
    r_bar = float(sync(r_bar_batch))
    if not 0.0 <= r_bar <= 1.0:
        raise ValueError(f"batch mean ratio {r_bar} outside [0, 1]")
    mu = tracker.beta * r_bar + (1.0 - tracker.beta) * tracker.mu_global
    return dataclasses.replace(tracker, mu_global=mu)


def budget_loss(tracker: BudgetTracker, r_bar_batch: float):
    """``lam * r_bar * sg[2 (mu - R_target)]``; returns ``(loss, dloss/dr_bar)``.

    The bracket is a constant under differentiation, so the gradient is the
    bracket itself scaled by ``lam``.
    """
    direction = 2.0 * (tracker.mu_global - tracker.r_target)
    return tracker.lam * r_bar_batch * direction, tracker.lam * direction


@dataclass(frozen=True)
class ControlTrace:
    r_target: float
    ratio: np.ndarray
    mu_global: np.ndarray
    settled_step: int | None  # first step from which |mu - R| stays below tol

    @property
    def converged(self) -> bool:
        return self.settled_step is not None


def control_loop(r_target: float, r_init: float = 0.1, beta: float = 0.2, lam: float = 1.0,
                 lr: float = 0.1, steps: int = 5000, tol: float = 0.01) -> ControlTrace:
    """Closed-loop check of the budget loss: a free scalar logit ``theta`` with
    ``r = sigmoid(theta)`` trained by plain SGD on ``budget_loss`` alone."""
    if steps < 1:
        raise ValueError("need at least one step")
    tracker = BudgetTracker(r_target, beta=beta, lam=lam)
    theta = float(logit(r_init))
    ratio = np.empty(steps)
    mu = np.empty(steps)
    for i in range(steps):
        r = float(sigmoid(theta))
        tracker = ema_update(tracker, r)
        _, dl_dr = budget_loss(tracker, r)
        theta -= lr * dl_dr * r * (1.0 - r)
        ratio[i], mu[i] = r, tracker.mu_global
    outside = np.flatnonzero(np.abs(mu - r_target) >= tol)
    settled = 0 if outside.size == 0 else int(outside[-1]) + 1
    return ControlTrace(float(r_target), ratio, mu, settled if settled < steps else None)


def _below(hi):
    return np.nextafter(hi, -np.inf)


@dataclass(frozen=True)
class StratifiedPlan:
    n_strata: int
    t_max: float
    draws: np.ndarray


def stratified_timesteps(n_strata: int, t_max: float, rng: Rng) -> StratifiedPlan:
    if n_strata < 1:
        raise ValueError("need at least one stratum")
    if t_max <= 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    edges = np.arange(n_strata + 1) * (t_max / n_strata)
    lo, hi = edges[:-1], edges[1:]
    draws = np.minimum(lo + rng.random(n_strata) * (hi - lo), _below(hi))
    return StratifiedPlan(n_strata, float(t_max), draws)


def stratified_ratios(n_groups: int, r_min: float, r_max: float, rng: Rng) -> np.ndarray:
    if n_groups < 1:
        raise ValueError("need at least one ratio group")
    if not 0.0 < r_min < r_max <= 1.0:
        raise ValueError(f"invalid ratio range [{r_min}, {r_max}]")
    width = (r_max - r_min) / n_groups
    lo = r_min + width * np.arange(n_groups)
    hi = np.append(lo[1:], r_max)
    return np.minimum(lo + rng.random(n_groups) * width, _below(hi))


@dataclass(frozen=True)
class VarianceReport:
    n_strata: int
    trials: int
    var_uniform: float
    var_stratified: float
    delta_var: float
    total_variance: float
    between_stratum: float
    within_stratum: float
    predicted_var_uniform: float
    predicted_var_stratified: float
    predicted_delta_var: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _stratum_moments(r_fn, n_strata, t_max, nodes=64):
    """Mean and variance of ``r(t)`` on each stratum by Gauss-Legendre quadrature."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    width = t_max / n_strata
    lo = np.arange(n_strata)[:, None] * width
    t = lo + (x[None, :] + 1.0) * (width / 2.0)
    vals = np.asarray(r_fn(t), dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise ValueError("r_fn returned non-finite values")
    w = w / 2.0
    mean = vals @ w
    var = ((vals - mean[:, None]) ** 2) @ w
    return mean, var


def variance_decomposition(r_fn, n_strata: int, t_max: float, trials: int, rng: Rng,
                           quad_subdiv: int = 8) -> VarianceReport:
    """Monte Carlo variances of uniform vs stratified batch means of ``r(t)``,
    next to the law-of-total-variance split computed by quadrature.

    ``r_fn`` must accept numpy arrays.  Quadrature runs on ``quad_subdiv``
    sub-intervals per stratum so piecewise profiles aligned to stratum edges
    integrate exactly.
    """
    if trials < 1000:
        raise ValueError("variance_decomposition needs at least 1000 trials")
    fine_mean, fine_var = _stratum_moments(r_fn, n_strata * quad_subdiv, t_max)
    fine_mean = fine_mean.reshape(n_strata, quad_subdiv)
    fine_var = fine_var.reshape(n_strata, quad_subdiv)
    mu_j = fine_mean.mean(axis=1)
    sigma2_j = fine_var.mean(axis=1) + ((fine_mean - mu_j[:, None]) ** 2).mean(axis=1)
    mu = mu_j.mean()
    within = float(sigma2_j.mean())
    between = float(np.mean((mu_j - mu) ** 2))
    total = within + between

    t_uni = rng.random((trials, n_strata)) * t_max
    width = t_max / n_strata
    t_strat = (np.arange(n_strata)[None, :] + rng.random((trials, n_strata))) * width
    est_uni = np.asarray(r_fn(t_uni), dtype=np.float64).mean(axis=1)
    est_strat = np.asarray(r_fn(t_strat), dtype=np.float64).mean(axis=1)
    if not (np.all(np.isfinite(est_uni)) and np.all(np.isfinite(est_strat))):
        raise ValueError("r_fn returned non-finite values")
    var_uni = float(est_uni.var(ddof=1))
    var_strat = float(est_strat.var(ddof=1))
    return VarianceReport(
        n_strata=n_strata, trials=trials,
        var_uniform=var_uni, var_stratified=var_strat, delta_var=var_uni - var_strat,
        total_variance=total, between_stratum=between, within_stratum=within,
        predicted_var_uniform=total / n_strata,
        predicted_var_stratified=within / n_strata,
        predicted_delta_var=between / n_strata,
    )
