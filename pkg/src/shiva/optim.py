"""SGD and (decoupled weight decay) Adam on numpy arrays.

The ``*_step`` functions are pure; :class:`SGD` and :class:`Adam` keep
per-tensor state for a whole :class:`~shiva.params.ParamSet` and update it
in place.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .numeric import DimensionError


@dataclass(frozen=True)
class SgdState:
    lr: float

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros(cls, like, **hyper) -> "AdamState":
        like = np.asarray(like, dtype=np.float64)
        return cls(np.zeros_like(like), np.zeros_like(like), **hyper)


def _check(param, grad):
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise DimensionError(f"param {param.shape} and grad {grad.shape} differ")
    return param, grad


def sgd_step(param, grad, state: SgdState):
    param, grad = _check(param, grad)
    return param - state.lr * grad


def adam_step(param, grad, state: AdamState):
    param, grad = _check(param, grad)
    if state.m.shape != param.shape:
        raise DimensionError(f"moment buffers {state.m.shape} do not match param {param.shape}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if state.weight_decay:
        new = new - state.lr * state.weight_decay * param
    return new, dataclasses.replace(state, m=m, v=v, step=t)


def linear_warmup(step: int, warmup_steps: int) -> float:
    """Learning-rate multiplier ramping from 1/warmup to 1."""
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, (step + 1) / warmup_steps)


class SGD:
    def __init__(self, lr: float):
        self.state = SgdState(lr)

    def step(self, params, grads, lr_scale: float = 1.0) -> None:
        for name, p in params.arrays().items():
            p -= (self.state.lr * lr_scale) * getattr(grads, name)


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.hyper = dict(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
        self.states: dict[tuple[int, str], AdamState] = {}

    def step(self, params, grads, lr_scale: float = 1.0, key: int = 0) -> None:
        """Update ``params`` in place.  ``key`` separates state for several ParamSets."""
        for name, p in params.arrays().items():
            state = self.states.get((key, name))
            if state is None:
                state = AdamState.zeros(p, **self.hyper)
            state = dataclasses.replace(state, lr=self.hyper["lr"] * lr_scale)
            new, state = adam_step(p, getattr(grads, name), state)
            p[...] = new
            self.states[(key, name)] = state
