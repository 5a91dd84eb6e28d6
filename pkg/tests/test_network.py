import numpy as np
import pytest

from segcl import tensor as T
from segcl.errors import ConfigError, ShapeMismatchError
from segcl.network import SegNet, SegNetConfig, build_segnet

GOLDEN_PARAM_COUNT = 11708  # defaults with in=1, classes=4; frozen after first build


@pytest.fixture
def net():
    return build_segnet(SegNetConfig(), seed=123)


def test_logits_shape(net):
    x = np.random.default_rng(0).random((1, 1, 32, 32))
    logits = net.forward_logits(T.Tensor(x))
    assert logits.shape == (1, 4, 32, 32)
    T.clear_graph()


def test_same_seed_same_params():
    a = build_segnet(SegNetConfig(), seed=9)
    b = build_segnet(SegNetConfig(), seed=9)
    for (pa, ta), (pb, tb) in zip(a.params.named_tensors(), b.params.named_tensors()):
        assert pa == pb
        np.testing.assert_array_equal(ta.data, tb.data)


def test_different_seed_different_params():
    a = build_segnet(SegNetConfig(), seed=9)
    b = build_segnet(SegNetConfig(), seed=10)
    assert any(
        not np.array_equal(ta.data, tb.data)
        for (_, ta), (_, tb) in zip(a.params.named_tensors(), b.params.named_tensors())
    )


def test_golden_param_count(net):
    assert net.params.total_count() == GOLDEN_PARAM_COUNT
    # structure metadata agrees with tensor sizes
    for entry in net.params:
        assert int(np.prod(list(entry.structure.values()))) == entry.tensor.size


def test_predict_sums_to_one(net):
    x = np.random.default_rng(1).random((2, 1, 32, 32))
    probs = net.predict(x)
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-9)


def test_predict_deterministic(net):
    x = np.random.default_rng(2).random((1, 1, 32, 32))
    a = net.predict(x)
    b = net.predict(x)
    np.testing.assert_array_equal(a.data, b.data)


def test_zero_params_give_uniform_probs(net):
    for _, t in net.params.named_tensors():
        t.data[...] = 0.0
    probs = net.predict(np.random.default_rng(3).random((1, 1, 32, 32)))
    np.testing.assert_allclose(probs.data, 0.25, atol=1e-12)


def test_indivisible_dims_error(net):
    with pytest.raises(ShapeMismatchError) as exc:
        net.predict(np.zeros((1, 1, 30, 30)))
    assert "divisible by 4" in str(exc.value)


def test_zeroed_decoder_still_finite(net):
    for pid, t in net.params.named_tensors():
        if pid.startswith("dec"):
            t.data[...] = 0.0
    probs = net.predict(np.random.default_rng(4).random((1, 1, 32, 32)))
    assert np.isfinite(probs.data).all()


def test_dropout_only_active_when_rate_positive():
    x = np.random.default_rng(5).random((1, 1, 32, 32))
    plain = build_segnet(SegNetConfig(dropout_rate=0.0), seed=7)
    # rate 0: dropout_active is ignored, no RNG needed
    a = plain.predict(x, dropout_active=True)
    b = plain.predict(x, dropout_active=False)
    np.testing.assert_array_equal(a.data, b.data)

    dropped = build_segnet(SegNetConfig(dropout_rate=0.5), seed=7)
    # untrained head is zero-initialized; give it signal so dropout is visible
    dropped.params["head.weight"].tensor.data[...] = np.random.default_rng(0).normal(
        size=dropped.params["head.weight"].tensor.shape
    )
    r1 = np.random.default_rng(99)
    r2 = np.random.default_rng(99)
    c = dropped.predict(x, dropout_active=True, dropout_rng=r1)
    d = dropped.predict(x, dropout_active=True, dropout_rng=r2)
    np.testing.assert_array_equal(c.data, d.data)
    e = dropped.predict(x, dropout_active=False)
    assert not np.array_equal(c.data, e.data)


def test_dropout_requires_rng():
    net = build_segnet(SegNetConfig(dropout_rate=0.5), seed=7)
    with pytest.raises(ConfigError):
        net.predict(np.zeros((1, 1, 32, 32)), dropout_active=True)


def test_config_validation():
    with pytest.raises(ConfigError):
        SegNetConfig(num_classes=1)
    with pytest.raises(ConfigError):
        SegNetConfig(dropout_rate=1.0)
    with pytest.raises(ConfigError):
        SegNetConfig(encoder_channels=())
