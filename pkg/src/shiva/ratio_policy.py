"""Per-(timestep, layer) retention ratio with additive time and layer branches.

    logit(t, l) = time_mlp(sinusoid(t)) + layer_mlp(layer_table[l]) + b_anchor
    r(t, l)     = sigmoid(logit + eps),   eps ~ N(0, noise_std^2)

Both MLPs are Linear -> SiLU -> Linear with a zero-initialised output layer,
and ``b_anchor`` starts at ``logit(R_target)``, so a fresh policy returns
``R_target`` everywhere.  With noise off the policy depends only on
``(t, l)`` and can be tabulated once with :func:`compile_lut`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .numeric import Rng, gaussian, logit, make_rng, sigmoid, silu, silu_grad
from .params import ParamSet
from .router import CacheError

HIDDEN = 256
TIME_FREQUENCIES = 64
MAX_PERIOD = 10_000.0


def timestep_embedding(t: float, n_freq: int = TIME_FREQUENCIES, max_period: float = MAX_PERIOD):
    """``[cos(t f_0..f_{n-1}), sin(t f_0..f_{n-1})]`` with geometric frequencies
    ``f_i = max_period ** (-i / n_freq)``."""
    freqs = np.exp(-math.log(max_period) * np.arange(n_freq) / n_freq)
    angles = float(t) * freqs
    return np.concatenate([np.cos(angles), np.sin(angles)])


@dataclass
class RatioPolicyParams(ParamSet):
    layer_table: np.ndarray
    layer_w1: np.ndarray
    layer_b1: np.ndarray
    layer_w2: np.ndarray
    layer_b2: np.ndarray
    time_w1: np.ndarray
    time_b1: np.ndarray
    time_w2: np.ndarray
    time_b2: np.ndarray
    b_anchor: np.ndarray
    n_freq: int = TIME_FREQUENCIES

    @property
    def n_layers(self) -> int:
        return self.layer_table.shape[0]

    @classmethod
    def init(cls, n_layers: int, r_target: float, hidden: int = HIDDEN,
             n_freq: int = TIME_FREQUENCIES, rng: Rng | None = None) -> "RatioPolicyParams":
        rng = make_rng(0) if rng is None else rng

        def uniform(rows, cols):
            bound = 1.0 / math.sqrt(rows)
            return rng.uniform(-bound, bound, size=(rows, cols))

        return cls(
            layer_table=rng.normal(0.0, 1.0, size=(n_layers, hidden)),
            layer_w1=uniform(hidden, hidden), layer_b1=np.zeros(hidden),
            layer_w2=np.zeros((hidden, 1)), layer_b2=np.zeros(1),
            time_w1=uniform(2 * n_freq, hidden), time_b1=np.zeros(hidden),
            time_w2=np.zeros((hidden, 1)), time_b2=np.zeros(1),
            b_anchor=np.array([logit(r_target)]),
            n_freq=n_freq,
        )


@dataclass
class PolicyCache:
    params: RatioPolicyParams
    layer: int
    e_t: np.ndarray
    pre_t: np.ndarray
    pre_l: np.ndarray
    r: float


def _branch(x, w1, b1, w2, b2):
    pre = x @ w1 + b1
    return float(silu(pre) @ w2[:, 0] + b2[0]), pre


def policy_logit_parts(params: RatioPolicyParams, t: float, layer: int):
    e_t = timestep_embedding(t, params.n_freq)
    time_out, pre_t = _branch(e_t, params.time_w1, params.time_b1, params.time_w2, params.time_b2)
    layer_out, pre_l = _branch(params.layer_table[layer], params.layer_w1, params.layer_b1,
                               params.layer_w2, params.layer_b2)
    return time_out, layer_out, e_t, pre_t, pre_l


def policy_forward(params: RatioPolicyParams, t: float, layer: int, noise_std: float = 0.0,
                   rng: Rng | None = None):
    """Returns ``(logit, r, cache)``.  ``logit`` excludes the exploration noise."""
    if not 0 <= layer < params.n_layers:
        raise IndexError(f"layer {layer} outside [0, {params.n_layers})")
    if noise_std < 0:
        raise ValueError(f"noise_std must be non-negative, got {noise_std}")
    time_out, layer_out, e_t, pre_t, pre_l = policy_logit_parts(params, t, layer)
    z = time_out + layer_out + float(params.b_anchor[0])
    eps = 0.0 if noise_std == 0 else gaussian(rng, 0.0, noise_std)
    r = float(sigmoid(z + eps))
    return z, r, PolicyCache(params, layer, e_t, pre_t, pre_l, r)


def policy_backward(cache: PolicyCache, dl_dr: float) -> RatioPolicyParams:
    return policy_backward_batch([cache], [dl_dr])


def policy_backward_batch(caches, dl_drs) -> RatioPolicyParams:
    """Summed parameter gradients of several policy evaluations (same params)."""
    if not caches:
        raise ValueError("policy_backward_batch needs at least one cache")
    for cache in caches:
        if not isinstance(cache, PolicyCache):
            raise CacheError("policy_backward needs the cache returned by policy_forward")
    p = caches[0].params
    if any(c.params is not p for c in caches):
        raise CacheError("caches come from different policy parameter sets")
    grads = p.zeros_like()
    dz = np.array([float(g) * c.r * (1.0 - c.r) for c, g in zip(caches, dl_drs)])
    total = float(dz.sum())
    grads.b_anchor[0] = total

    pre_t = np.stack([c.pre_t for c in caches])
    e_t = np.stack([c.e_t for c in caches])
    grads.time_b2[0] = total
    grads.time_w2[:, 0] = dz @ silu(pre_t)
    d_pre_t = dz[:, None] * p.time_w2[:, 0] * silu_grad(pre_t)
    grads.time_b1[:] = d_pre_t.sum(axis=0)
    grads.time_w1[:] = e_t.T @ d_pre_t

    layers = np.array([c.layer for c in caches])
    pre_l = np.stack([c.pre_l for c in caches])
    grads.layer_b2[0] = total
    grads.layer_w2[:, 0] = dz @ silu(pre_l)
    d_pre_l = dz[:, None] * p.layer_w2[:, 0] * silu_grad(pre_l)
    grads.layer_b1[:] = d_pre_l.sum(axis=0)
    grads.layer_w1[:] = p.layer_table[layers].T @ d_pre_l
    np.add.at(grads.layer_table, layers, d_pre_l @ p.layer_w1.T)
    return grads


@dataclass(frozen=True)
class RatioLUT:
    t_values: np.ndarray
    grid: np.ndarray  # (len(t_values), n_layers)
    _index: dict = field(default_factory=dict, compare=False, repr=False)

    def lookup(self, t: float, layer: int) -> float:
        if not self._index:
            self._index.update({float(v): i for i, v in enumerate(self.t_values)})
        return float(self.grid[self._index[float(t)], layer])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"layer_{l}" for l in range(self.grid.shape[1])])
        for t, row in zip(self.t_values, self.grid):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return buf.getvalue()


def default_timesteps(n_steps: int = 50, t_max: float = 1000.0) -> np.ndarray:
    """Evenly spaced sampler timesteps from ``t_max`` down towards 0."""
    return np.linspace(t_max, 0.0, n_steps, endpoint=False)


def compile_lut(params: RatioPolicyParams, t_steps, n_layers: int | None = None) -> RatioLUT:
    t_steps = np.asarray(t_steps, dtype=np.float64)
    if t_steps.size == 0:
        raise ValueError("compile_lut needs at least one timestep")
    n_layers = params.n_layers if n_layers is None else n_layers
    grid = np.empty((t_steps.size, n_layers))
    for i, t in enumerate(t_steps):
        for layer in range(n_layers):
            grid[i, layer] = policy_forward(params, float(t), layer)[1]
    return RatioLUT(t_steps, grid)
