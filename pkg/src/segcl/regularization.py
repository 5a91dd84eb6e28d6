"""Continual-learning strategies over importance weights, plus the plain
regularization baselines, exposed as uniform hooks the trainer consumes.

Three importance-driven strategies: a quadratic surrogate penalty anchored at
the previous task's parameters, per-parameter learning-rate scaling by
unimportance, and budgeted hard freezing of the most important parameters.
Baselines: l2 weight decay and dropout. The `joint` kind retrains on all data
seen so far and carries no hooks at all.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterMismatchError, SegclError
from .importance import GRANULARITIES, ImportanceMap

STRATEGY_KINDS = (
    "fine_tune",
    "joint",
    "mas",
    "mas_lr",
    "mas_fix",
    "l2",
    "dropout",
    "mas_lr_dropout",
)

_DEFAULT_GRANULARITY = {"mas": "parameter", "mas_fix": "kernel", "mas_lr": "filter", "mas_lr_dropout": "filter"}
_IMPORTANCE_KINDS = ("mas", "mas_lr", "mas_fix", "mas_lr_dropout")
_DROPOUT_KINDS = ("dropout", "mas_lr_dropout")


@dataclass
class FreezeMask:
    """Per-parameter boolean masks; a frozen entry never unfreezes."""

    masks: dict

    def copy(self):
        return FreezeMask({pid: m.copy() for pid, m in self.masks.items()})

    @property
    def frozen_count(self):
        return int(sum(int(m.sum()) for m in self.masks.values()))

    @property
    def total_count(self):
        return int(sum(m.size for m in self.masks.values()))

    @property
    def frozen_fraction(self):
        return self.frozen_count / self.total_count

    @classmethod
    def empty_like(cls, store):
        return cls({pid: np.zeros(t.data.shape, dtype=bool) for pid, t in store.named_tensors()})

    def is_superset_of(self, other):
        return all((self.masks[pid] | other.masks[pid] == self.masks[pid]).all() for pid in self.masks)


@dataclass
class StrategyConfig:
    kind: str = "fine_tune"
    lambda_: float = 1e4
    beta_per_domain: float = 0.25
    min_importance_to_freeze: float = 0.05
    l2_coefficient: float = 0.0
    dropout_rate: float = 0.0
    importance_granularity: str = ""

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError("strategy.kind", f"must be one of {STRATEGY_KINDS}, got {self.kind!r}")
        if self.lambda_ < 0:
            raise ConfigError("strategy.lambda", f"must be >= 0, got {self.lambda_}")
        if not (0.0 < self.beta_per_domain <= 1.0):
            raise ConfigError("strategy.beta_per_domain", f"must be in (0, 1], got {self.beta_per_domain}")
        if not (0.0 <= self.min_importance_to_freeze <= 1.0):
            raise ConfigError(
                "strategy.min_importance_to_freeze",
                f"must be in [0, 1], got {self.min_importance_to_freeze}",
            )
        if self.l2_coefficient < 0:
            raise ConfigError("strategy.l2_coefficient", f"must be >= 0, got {self.l2_coefficient}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError("strategy.dropout_rate", f"must be in [0, 1), got {self.dropout_rate}")
        if self.importance_granularity and self.importance_granularity not in GRANULARITIES:
            raise ConfigError(
                "strategy.importance_granularity",
                f"must be one of {GRANULARITIES}, got {self.importance_granularity!r}",
            )

    @property
    def granularity(self):
        return self.importance_granularity or _DEFAULT_GRANULARITY.get(self.kind, "parameter")

    @property
    def needs_importance(self):
        return self.kind in _IMPORTANCE_KINDS

    @property
    def uses_dropout(self):
        return self.kind in _DROPOUT_KINDS


def surrogate_penalty(store, theta_star, omega, lam, total_params):
    """Quadratic drift penalty (lam/P) * sum omega*(theta - theta*)^2.

    Returns the penalty value and the per-parameter gradient contribution
    (2*lam/P) * omega * (theta - theta*).
    """
    if total_params <= 0:
        raise SegclError("total_params must be positive")
    ids = set(pid for pid, _ in store.named_tensors())
    if ids != set(theta_star) or ids != set(omega.values):
        raise ParameterMismatchError(context="surrogate_penalty id sets differ")
    coeff = lam / total_params
    penalty = 0.0
    grads = {}
    for pid, t in store.named_tensors():
        diff = t.data - theta_star[pid]
        om = omega.values[pid]
        penalty += coeff * float((om * diff * diff).sum())
        grads[pid] = (2.0 * coeff) * om * diff
    return penalty, grads


def effective_learning_rates(omega, base_lr):
    """Per-parameter learning rates (1 - omega) * base_lr."""
    if not omega.normalized:
        raise SegclError("effective_learning_rates requires a normalized importance map")
    if base_lr <= 0:
        raise SegclError(f"base learning rate must be positive, got {base_lr}")
    return {pid: (1.0 - v) * base_lr for pid, v in omega.values.items()}


def build_freeze_mask(omega, previous, beta_d, min_importance):
    """Freeze the most important not-yet-frozen parameters up to a cumulative
    budget of previous fraction + beta_d.

    Candidates need omega >= min_importance; they freeze in descending-omega
    order (ties: param order, then flat index). With no candidates the
    previous mask is returned unchanged.
    """
    if beta_d <= 0:
        raise SegclError(f"beta_d must be positive, got {beta_d}")
    if not omega.normalized:
        raise SegclError("build_freeze_mask requires a normalized importance map")
    pids = list(omega.values)
    if previous is not None:
        if set(previous.masks) != set(pids):
            raise ParameterMismatchError(context="freeze mask / importance id sets differ")
        prev_count = previous.frozen_count
        total = previous.total_count
    else:
        prev_count = 0
        total = int(sum(v.size for v in omega.values.values()))

    budget_fraction = min(1.0, prev_count / total + beta_d)
    budget_count = int(np.floor(budget_fraction * total + 1e-9))

    omega_flat = np.concatenate([omega.values[pid].reshape(-1) for pid in pids])
    frozen_flat = (
        np.concatenate([previous.masks[pid].reshape(-1) for pid in pids])
        if previous is not None
        else np.zeros(total, dtype=bool)
    )
    param_order = np.concatenate(
        [np.full(omega.values[pid].size, i, dtype=np.int64) for i, pid in enumerate(pids)]
    )
    flat_index = np.concatenate(
        [np.arange(omega.values[pid].size, dtype=np.int64) for pid in pids]
    )

    candidate = (~frozen_flat) & (omega_flat >= min_importance)
    cand_idx = np.nonzero(candidate)[0]
    if cand_idx.size == 0:
        return previous.copy() if previous is not None else FreezeMask(
            {pid: np.zeros(omega.values[pid].shape, dtype=bool) for pid in pids}
        )

    order = np.lexsort((flat_index[cand_idx], param_order[cand_idx], -omega_flat[cand_idx]))
    n_new = min(cand_idx.size, max(0, budget_count - prev_count))
    frozen_flat = frozen_flat.copy()
    frozen_flat[cand_idx[order[:n_new]]] = True

    masks = {}
    offset = 0
    for pid in pids:
        size = omega.values[pid].size
        masks[pid] = frozen_flat[offset : offset + size].reshape(omega.values[pid].shape).copy()
        offset += size
    return FreezeMask(masks)


def l2_gradients(store, coefficient):
    """Weight decay toward zero: adds coefficient * theta to each gradient."""
    return {pid: coefficient * t.data for pid, t in store.named_tensors()}


@dataclass
class StrategyState:
    """What a strategy carries from finished domains into the next one."""

    theta_star: dict | None = None
    omega: ImportanceMap | None = None
    freeze_mask: FreezeMask | None = None


@dataclass
class StrategyHooks:
    """Per-domain training hooks; the trainer applies whichever are set."""

    penalty_fn: object = None  # store -> (penalty, grads dict)
    lr_map_fn: object = None  # base_lr -> dict of per-parameter LR arrays
    freeze_mask: FreezeMask | None = None
    dropout_active: bool = False
    l2_coefficient: float = 0.0


def build_hooks(strategy, state, total_params):
    """Assemble the hook set for training one domain under `strategy`.

    Importance-driven hooks only activate once a previous task has produced
    an importance map (never on the first domain).
    """
    hooks = StrategyHooks()
    if strategy.kind == "l2":
        hooks.l2_coefficient = strategy.l2_coefficient
    if strategy.uses_dropout:
        hooks.dropout_active = True
    if not strategy.needs_importance or state.omega is None:
        return hooks

    omega = state.omega
    if strategy.kind == "mas":
        lam = strategy.lambda_
        if lam != 0.0:
            theta_star = state.theta_star
            if theta_star is None:
                raise SegclError("mas needs theta_star once an importance map exists")
            hooks.penalty_fn = lambda store: surrogate_penalty(
                store, theta_star, omega, lam, total_params
            )
    elif strategy.kind in ("mas_lr", "mas_lr_dropout"):
        hooks.lr_map_fn = lambda base_lr: effective_learning_rates(omega, base_lr)
    elif strategy.kind == "mas_fix":
        hooks.freeze_mask = state.freeze_mask
    return hooks
