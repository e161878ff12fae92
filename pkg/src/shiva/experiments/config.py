"""Experiment configurations and flat ``key = value`` config files.

A config file holds one assignment per line; ``#`` starts a comment.  Keys
are the field names of the command's config dataclass and values are
coerced to the field's type.  ``--set key=value`` overrides on the command
line use the same syntax and are applied after the file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class BudgetDynamicsConfig:
    seed: int = 0
    n_tokens: int = 100
    d_model: int = 16
    signal_count: int = 20
    signal_mean: float = 10.0
    feature_std: float = 1.0
    k_init: float = 50.0
    lr_router: float = 0.1
    lr_budget: float = 2.0
    lam: float = 0.1
    warmup_steps: int = 100
    adapt_steps: int = 700
    bottleneck: int = 64
    tau_rank_start: float = 0.2
    tau_rank_end: float = 0.02
    tau_sel_start: float = 0.1
    tau_sel_end: float = 0.01
    normalized: bool = True
    score_noise: float = 0.05
    utility_scale: float = 0.1  # captured signal per unit of default signal_mean
    eval_samples: int = 50


@dataclass
class GradConsistencyConfig:
    seed: int = 0
    trials: int = 1000
    n_tokens: int = 64
    d_model: int = 16
    hidden: int = 32
    ratio: float = 0.5
    tau_rank: float = 0.2
    tau_sel: float = 0.1
    normalized: bool = True
    path_model: str = "replace"
    zero_rejected_grad: bool = False
    bins: int = 40


@dataclass
class VarianceDemoConfig:
    seed: int = 0
    trials: int = 20000
    n_strata: int = 16
    t_max: float = 1000.0
    profiles: str = "constant,linear,sigmoid,step"
    constant_value: float = 0.6
    sigmoid_slope: float = 10.0


@dataclass
class ToyTrainConfig:
    seed: int = 0
    n_tokens: int = 32
    d_model: int = 16
    hidden: int = 32
    n_layers: int = 6
    sharing: str = "pairwise"
    bottleneck: int = 64
    router_freq: int = 8
    batch_size: int = 16
    stage1_steps: int = 150
    stage2_steps: int = 250
    stage3_steps: int = 150
    warmup_steps: int = 20
    lr_router: float = 3e-3
    lr_policy: float = 1e-4
    lr_blocks: float = 1e-3
    r_min: float = 0.2
    r_max: float = 1.0
    ratio_groups: int = 4
    fixed_ratio: float = 0.0  # > 0 replaces stratified ratios in stage 1
    ratio_override: float = 0.0  # > 0 pins r everywhere (1.0 = dense equivalence check)
    dense: bool = False  # train the blocks with selection removed entirely
    r_target: float = 0.6
    beta: float = 0.2
    lam: float = 1.0
    lambda_b: float = 2000.0
    lambda_d: float = 0.1
    distill_every: int = 2
    policy_noise: float = 1.0
    score_noise: float = 0.05
    tau_rank_start: float = 0.2
    tau_rank_end: float = 0.02
    tau_sel_start: float = 0.1
    tau_sel_end: float = 0.01
    first_block_skip: bool = True
    t_max: float = 1000.0
    lut_steps: int = 50


@dataclass
class GradcheckConfig:
    seed: int = 0


CONFIGS = {
    "budget_dynamics": BudgetDynamicsConfig,
    "grad_consistency": GradConsistencyConfig,
    "variance_demo": VarianceDemoConfig,
    "toy_train": ToyTrainConfig,
    "gradcheck": GradcheckConfig,
}


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return raw


def parse_assignments(lines) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_config(cls, path=None, overrides=(), seed: int | None = None):
    """Defaults <- config file <- ``key=value`` overrides <- explicit seed."""
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        raw.update(parse_assignments(text.splitlines()))
    raw.update(parse_assignments(overrides))
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {', '.join(unknown)}")
    values = {k: _coerce(v, getattr(defaults, k), k) for k, v in raw.items()}
    if seed is not None:
        values["seed"] = seed
    return dataclasses.replace(defaults, **values)


def config_text(config) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(config).items())
