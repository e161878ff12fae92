"""Residual-based differentiable top-k token selection with learnable budgets."""

from .budget import (BudgetTracker, StratifiedPlan, budget_loss, ema_update, stratified_ratios,
                     stratified_timesteps, variance_decomposition)
from .losses import CompositeLossWeights, composite_loss, normalized_distillation, sparsity_penalty
from .numeric import fork_rng, gaussian, layer_norm, make_rng, sigmoid, silu
from .optim import Adam, AdamState, SGD, SgdState, adam_step, sgd_step
from .ratio_policy import (RatioLUT, RatioPolicyParams, compile_lut, policy_backward,
                           policy_forward)
from .router import RouterGroupMap, RouterParams, router_backward, router_forward, unified_score
from .selection import (PathGradients, SelectionOutcome, budget_grad, budget_to_count, hard_topk,
                        residual_ste_grad, scatter_back, surrogate_grad_exact)
from .soft_rank import (InclusionProbs, SoftRankState, chain_scores_grad, inclusion_grads,
                        inclusion_prob, perturb_scores, soft_rank, soft_rank_jacobian)
from .toy_block import BlockStack, StackConfig, stack_backward, stack_forward

__version__ = "0.1.0"
