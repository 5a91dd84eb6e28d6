import numpy as np
import pytest

from segcl import tensor as T
from segcl.errors import ConfigError, SegclError
from segcl.importance import ImportanceMap
from segcl.network import ParameterStore
from segcl.regularization import (
    FreezeMask,
    StrategyConfig,
    StrategyState,
    build_freeze_mask,
    build_hooks,
    effective_learning_rates,
    l2_gradients,
    surrogate_penalty,
)


def _store(**named):
    store = ParameterStore()
    for pid, vals in named.items():
        arr = np.asarray(vals, dtype=float)
        store.add(f"{pid}.bias", T.Tensor(arr, requires_grad=True), {"bias_len": arr.size})
    return store


def _omega(store, values, normalized=True):
    return ImportanceMap(
        {pid: np.asarray(values[pid], dtype=float) for pid, _ in store.named_tensors()},
        granularity="parameter",
        normalized=normalized,
        sample_count=1,
        task_count=1,
    )


def test_penalty_zero_at_anchor():
    store = _store(p=[1.0, -2.0])
    omega = _omega(store, {"p.bias": [1.0, 1.0]})
    penalty, grads = surrogate_penalty(store, store.snapshot(), omega, 1e4, 2)
    assert penalty == 0.0
    np.testing.assert_array_equal(grads["p.bias"], [0.0, 0.0])


def test_penalty_zero_lambda():
    store = _store(p=[1.0, -2.0])
    omega = _omega(store, {"p.bias": [1.0, 1.0]})
    anchor = {"p.bias": np.array([0.0, 0.0])}
    penalty, grads = surrogate_penalty(store, anchor, omega, 0.0, 2)
    assert penalty == 0.0
    np.testing.assert_array_equal(grads["p.bias"], [0.0, 0.0])


def test_penalty_hand_example():
    # omega [1, 0], displacement [0.1, 5], lambda 1e4, P 2 -> penalty 50
    store = _store(p=[0.1, 5.0])
    omega = _omega(store, {"p.bias": [1.0, 0.0]})
    anchor = {"p.bias": np.zeros(2)}
    penalty, grads = surrogate_penalty(store, anchor, omega, 1e4, 2)
    assert penalty == pytest.approx(50.0, rel=1e-12)
    np.testing.assert_allclose(grads["p.bias"], [2 * 1e4 / 2 * 1.0 * 0.1, 0.0])


def test_penalty_gradient_matches_fd():
    rng = np.random.default_rng(0)
    store = _store(p=rng.normal(size=5), q=rng.normal(size=3))
    anchor = {pid: rng.normal(size=t.data.shape) for pid, t in store.named_tensors()}
    omega = _omega(store, {pid: rng.random(t.data.shape) for pid, t in store.named_tensors()})
    lam, P = 1e4, 8
    _, grads = surrogate_penalty(store, anchor, omega, lam, P)
    eps = 1e-6
    for pid, t in store.named_tensors():
        for idx in range(t.data.size):
            orig = t.data.reshape(-1)[idx]
            t.data.reshape(-1)[idx] = orig + eps
            lp, _ = surrogate_penalty(store, anchor, omega, lam, P)
            t.data.reshape(-1)[idx] = orig - eps
            lm, _ = surrogate_penalty(store, anchor, omega, lam, P)
            t.data.reshape(-1)[idx] = orig
            central = (lp - lm) / (2 * eps)
            assert abs(grads[pid].reshape(-1)[idx] - central) / max(1.0, abs(central)) < 1e-6


def test_effective_learning_rates():
    store = _store(p=[0.0, 0.0, 0.0])
    omega = _omega(store, {"p.bias": [0.0, 1.0, 0.25]})
    lrs = effective_learning_rates(omega, 0.1)
    np.testing.assert_allclose(lrs["p.bias"], [0.1, 0.0, 0.075])


def test_effective_learning_rates_requires_normalized():
    store = _store(p=[0.0])
    omega = _omega(store, {"p.bias": [0.5]}, normalized=False)
    with pytest.raises(SegclError):
        effective_learning_rates(omega, 0.1)


def test_freeze_mask_hand_example():
    store = _store(p=[0.0, 0.0, 0.0, 0.0])
    omega = _omega(store, {"p.bias": [0.9, 0.1, 0.2, 0.8]})
    mask = build_freeze_mask(omega, None, beta_d=0.25, min_importance=0.05)
    np.testing.assert_array_equal(mask.masks["p.bias"], [True, False, False, False])
    assert mask.frozen_fraction == 0.25


def test_freeze_mask_cumulative_budget():
    store = _store(p=[0.0, 0.0, 0.0, 0.0])
    omega = _omega(store, {"p.bias": [0.9, 0.1, 0.2, 0.8]})
    first = build_freeze_mask(omega, None, beta_d=0.25, min_importance=0.05)
    second = build_freeze_mask(omega, first, beta_d=0.25, min_importance=0.05)
    np.testing.assert_array_equal(second.masks["p.bias"], [True, False, False, True])
    assert second.frozen_fraction == 0.5


def test_freeze_mask_no_candidates_returns_previous():
    store = _store(p=[0.0, 0.0, 0.0, 0.0])
    omega_low = _omega(store, {"p.bias": [0.04, 0.01, 0.0, 0.02]})
    mask = build_freeze_mask(omega_low, None, beta_d=0.25, min_importance=0.05)
    assert mask.frozen_fraction == 0.0

    omega = _omega(store, {"p.bias": [0.9, 0.0, 0.0, 0.0]})
    first = build_freeze_mask(omega, None, beta_d=0.25, min_importance=0.05)
    again = build_freeze_mask(omega, first, beta_d=0.25, min_importance=0.05)
    np.testing.assert_array_equal(again.masks["p.bias"], first.masks["p.bias"])


def test_freeze_mask_monotone_over_random_sequence():
    rng = np.random.default_rng(4)
    store = _store(p=np.zeros(40), q=np.zeros(25))
    previous = None
    for _ in range(6):
        omega = _omega(store, {pid: rng.random(t.data.size) for pid, t in store.named_tensors()})
        mask = build_freeze_mask(omega, previous, beta_d=0.2, min_importance=0.05)
        if previous is not None:
            assert mask.is_superset_of(previous)
            assert mask.frozen_count >= previous.frozen_count
        assert mask.frozen_fraction <= 1.0
        previous = mask
    # frozen_fraction invariant: exact count ratio
    assert previous.frozen_fraction == previous.frozen_count / previous.total_count


def test_freeze_mask_tie_breaking_prefers_param_order():
    store = _store(a=[0.0, 0.0], b=[0.0, 0.0])
    omega = _omega(store, {"a.bias": [0.5, 0.5], "b.bias": [0.5, 0.5]})
    mask = build_freeze_mask(omega, None, beta_d=0.5, min_importance=0.05)
    np.testing.assert_array_equal(mask.masks["a.bias"], [True, True])
    np.testing.assert_array_equal(mask.masks["b.bias"], [False, False])


def test_freeze_mask_invalid_beta():
    store = _store(p=[0.0])
    omega = _omega(store, {"p.bias": [0.5]})
    with pytest.raises(SegclError):
        build_freeze_mask(omega, None, beta_d=0.0, min_importance=0.05)


def test_l2_gradients_hand_example():
    store = _store(p=[2.0, -4.0])
    grads = l2_gradients(store, 0.01)
    np.testing.assert_allclose(grads["p.bias"], [0.02, -0.04])


def test_strategy_config_defaults_match_protocol():
    cfg = StrategyConfig(kind="mas")
    assert cfg.lambda_ == 1e4
    assert cfg.beta_per_domain == 0.25
    assert cfg.granularity == "parameter"
    assert StrategyConfig(kind="mas_fix").granularity == "kernel"
    assert StrategyConfig(kind="mas_lr").granularity == "filter"
    assert StrategyConfig(kind="mas_lr_dropout").granularity == "filter"


def test_strategy_config_validation():
    with pytest.raises(ConfigError) as exc:
        StrategyConfig(kind="mas", lambda_=-1.0)
    assert "strategy.lambda" in str(exc.value)
    with pytest.raises(ConfigError):
        StrategyConfig(kind="nope")
    with pytest.raises(ConfigError):
        StrategyConfig(kind="mas_fix", beta_per_domain=0.0)
    with pytest.raises(ConfigError):
        StrategyConfig(kind="dropout", dropout_rate=1.0)


def test_hooks_inactive_without_importance():
    store = _store(p=[1.0])
    for kind in ("mas", "mas_lr", "mas_fix"):
        hooks = build_hooks(StrategyConfig(kind=kind), StrategyState(), store.total_count())
        assert hooks.penalty_fn is None
        assert hooks.lr_map_fn is None
        assert hooks.freeze_mask is None


def test_hooks_activate_with_state():
    store = _store(p=[1.0, 2.0])
    omega = _omega(store, {"p.bias": [1.0, 0.0]})
    state = StrategyState(theta_star=store.snapshot(), omega=omega)
    hooks = build_hooks(StrategyConfig(kind="mas"), state, 2)
    assert hooks.penalty_fn is not None
    penalty, _ = hooks.penalty_fn(store)
    assert penalty == 0.0

    hooks = build_hooks(StrategyConfig(kind="mas_lr"), state, 2)
    lrs = hooks.lr_map_fn(0.1)
    np.testing.assert_allclose(lrs["p.bias"], [0.0, 0.1])

    mask = FreezeMask({"p.bias": np.array([True, False])})
    state = StrategyState(omega=omega, freeze_mask=mask)
    hooks = build_hooks(StrategyConfig(kind="mas_fix"), state, 2)
    assert hooks.freeze_mask is mask

    hooks = build_hooks(StrategyConfig(kind="mas", lambda_=0.0), state, 2)
    assert hooks.penalty_fn is None  # exact fine-tune equivalence

    hooks = build_hooks(StrategyConfig(kind="dropout", dropout_rate=0.3), StrategyState(), 2)
    assert hooks.dropout_active

    hooks = build_hooks(StrategyConfig(kind="l2", l2_coefficient=0.01), StrategyState(), 2)
    assert hooks.l2_coefficient == 0.01
