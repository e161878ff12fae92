"""Descending soft ranks, inclusion probabilities and their derivatives.

The soft rank of token ``i`` counts, with sigmoid weights, how many other
tokens score above it::

    r_i = 1 + sum_{j != i} sigmoid((s_j - s_i) / tau_rank)

so the best token has rank close to 1.  Inclusion probabilities compare the
rank with a continuous budget ``k``::

    pi_i = sigmoid((k - r_i) / tau_eff),   tau_eff = tau_sel * N if normalized

Only the ``N x N`` matrix of scalar comparisons is ever formed; features are
never sorted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import DimensionError, Rng, as_vector, gaussian, sigmoid


@dataclass(frozen=True)
class SoftRankState:
    scores_perturbed: np.ndarray
    ranks: np.ndarray
    # pairwise[i, j] = sigmoid((s_j - s_i) / tau), zero diagonal
    pairwise: np.ndarray
    tau_rank: float

    @property
    def n(self) -> int:
        return self.ranks.shape[0]


@dataclass(frozen=True)
class InclusionProbs:
    pi: np.ndarray
    k: float
    tau_sel: float
    normalized: bool
    n_tokens: int

    @property
    def tau_eff(self) -> float:
        return self.tau_sel * self.n_tokens if self.normalized else self.tau_sel


def _check_temperature(tau, name):
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f"{name} must be positive, got {tau}")


def soft_rank(scores, tau_rank: float) -> SoftRankState:
    s = as_vector(scores, "scores")
    _check_temperature(tau_rank, "tau_rank")
    diff = (s[None, :] - s[:, None]) / tau_rank
    pairwise = sigmoid(diff)
    np.fill_diagonal(pairwise, 0.0)
    ranks = 1.0 + pairwise.sum(axis=1)
    return SoftRankState(s, ranks, pairwise, float(tau_rank))


def _pair_slopes(state: SoftRankState) -> np.ndarray:
    # sigma'(D_ji) = sigma(D_ji) * sigma(-D_ji) = P[i, j] * P[j, i]; symmetric
    return state.pairwise * state.pairwise.T


def soft_rank_jacobian(state: SoftRankState) -> np.ndarray:
    """Materialised ``J[i, m] = d r_i / d s_m``.  Intended for inspection and tests."""
    q = _pair_slopes(state)
    jac = q.copy()
    np.fill_diagonal(jac, -q.sum(axis=1))
    return jac / state.tau_rank


def rank_vjp(state: SoftRankState, dl_dr) -> np.ndarray:
    """Row-vector product ``dl_dr @ J`` without building ``J``."""
    g = as_vector(dl_dr, "dl_dr")
    if g.shape[0] != state.n:
        raise DimensionError(f"expected {state.n} rank gradients, got {g.shape[0]}")
    q = _pair_slopes(state)
    return (q.T @ g - g * q.sum(axis=1)) / state.tau_rank


def inclusion_prob(state: SoftRankState, k: float, tau_sel: float,
                   normalized: bool = True, n_tokens: int | None = None) -> InclusionProbs:
    _check_temperature(tau_sel, "tau_sel")
    n = state.n if n_tokens is None else int(n_tokens)
    if not 0.0 <= k <= n:
        raise ValueError(f"budget k={k} outside [0, {n}]")
    tau_eff = tau_sel * n if normalized else tau_sel
    pi = sigmoid((k - state.ranks) / tau_eff)
    return InclusionProbs(np.atleast_1d(pi), float(k), float(tau_sel), bool(normalized), n)


def inclusion_grads(probs: InclusionProbs, state: SoftRankState | None = None):
    """Return ``(dpi_dr, dpi_dk)``; both are diagonal so they come back as vectors."""
    pi = probs.pi
    dpi_dk = pi * (1.0 - pi) / probs.tau_eff
    return -dpi_dk, dpi_dk


def chain_scores_grad(dl_dpi, probs: InclusionProbs, state: SoftRankState) -> np.ndarray:
    """dL/ds from dL/dpi through the selection sigmoid and the soft rank."""
    g = as_vector(dl_dpi, "dl_dpi")
    if g.shape != probs.pi.shape:
        raise DimensionError(f"dl_dpi has shape {g.shape}, expected {probs.pi.shape}")
    dpi_dr, _ = inclusion_grads(probs, state)
    return rank_vjp(state, g * dpi_dr)


def perturb_scores(scores, sigma: float, rng: Rng | None = None) -> np.ndarray:
    s = as_vector(scores, "scores")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return s.copy()
    return s + gaussian(rng, 0.0, sigma, size=s.shape)


def anneal(step: int, total: int, start: float, end: float) -> float:
    """Linear decay from ``start`` to ``end`` over ``total`` steps, then flat."""
    if total <= 0:
        return end
    frac = min(max(step / total, 0.0), 1.0)
    return start + (end - start) * frac
