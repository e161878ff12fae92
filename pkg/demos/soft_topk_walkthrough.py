"""
Soft ranks, hard selection and the residual gradient
=====================================================

A walk through one selection step on six tokens: score them, relax the
ranks, keep the top half for real, and read a gradient for every token off
the path it actually took.
"""

import numpy as np

from shiva.numeric import make_rng
from shiva.selection import PathGradients, hard_topk, residual_ste_grad, surrogate_grad_exact
from shiva.soft_rank import chain_scores_grad, inclusion_grads, inclusion_prob, soft_rank

np.set_printoptions(precision=3, suppress=True)
rng = make_rng(0)

# six tokens with four features each, and one importance score per token
x = rng.normal(size=(6, 4))
scores = np.array([2.0, -1.0, 0.5, 1.2, -0.3, 0.9])

# soft ranks: 1 for the best token, N for the worst, smooth in the scores
state = soft_rank(scores, tau_rank=0.2)
print("scores     ", scores)
print("soft ranks ", state.ranks)
print("rank sum   ", state.ranks.sum(), "= N(N+1)/2 =", 6 * 7 / 2)

# inclusion probability: a sigmoid of (budget - rank), here budget k = 3
probs = inclusion_prob(state, k=3.0, tau_sel=0.1)
print("pi         ", probs.pi)

# the forward pass is hard: exactly three tokens go through the block
outcome = hard_topk(scores, 3, x)
print("selected   ", outcome.indices_sel, "rejected", outcome.indices_rej)

# suppose the loss gradient at the output of each path is known
grad_block = rng.normal(size=(6, 4))
grad_skip = rng.normal(size=(6, 4))

# the estimator only looks at the executed path: +<g_sel, x> or -<g_rej, x>
paths = PathGradients(grad_block[outcome.mask], grad_skip[~outcome.mask])
g_hat = residual_ste_grad(paths, outcome, x)
g_star = surrogate_grad_exact(grad_block, grad_skip, x)
print("estimate   ", g_hat)
print("two-path   ", g_star)
cos = g_hat @ g_star / np.linalg.norm(g_hat) / np.linalg.norm(g_star)
print(f"cosine      {cos:.3f}")

# chaining through the soft ranks gives gradients for the scores and the budget
print("dL/ds      ", chain_scores_grad(g_hat, probs, state))
print("dL/dk      ", float(g_hat @ inclusion_grads(probs, state)[1]))
