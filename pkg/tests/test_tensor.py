import math

import numpy as np
import pytest

from segcl import tensor as T
from segcl.errors import GraphError, NonFiniteError, ShapeMismatchError


def _params(**named):
    return [(k, T.Tensor(v, requires_grad=True)) for k, v in named.items()]


def test_relu_values():
    out = T.relu(T.Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_softmax_symmetry():
    logits = T.Tensor(np.zeros((1, 2, 1, 1)))
    out = T.softmax_channel(logits)
    np.testing.assert_allclose(out.data[:, :, 0, 0], [[0.5, 0.5]])


def test_softmax_sums_to_one():
    rng = np.random.default_rng(3)
    x = T.Tensor(rng.normal(scale=5.0, size=(2, 6, 4, 4)))
    out = T.softmax_channel(x)
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)


def test_l2_squared_norm_value():
    # 0.25 + 0.25 + 1.0
    out = T.l2_squared_norm(T.Tensor([0.5, 0.5, 1.0]))
    assert out.item() == pytest.approx(1.5, abs=1e-15)


def test_backward_linear_scale():
    p = T.Tensor([1.0, 4.0], requires_grad=True)
    loss = T.tensor_sum(T.scale(p, 3.0))
    T.backward(loss)
    np.testing.assert_array_equal(p.grad, [3.0, 3.0])


def test_backward_l2():
    p = T.Tensor([1.0, -2.0], requires_grad=True)
    T.backward(T.l2_squared_norm(p))
    np.testing.assert_array_equal(p.grad, [2.0, -4.0])


def test_backward_accumulates_across_consumers():
    p = T.Tensor([0.5, 0.25, -1.0], requires_grad=True)
    loss = T.add(T.tensor_sum(p), T.tensor_sum(p))
    T.backward(loss)
    np.testing.assert_array_equal(p.grad, [2.0, 2.0, 2.0])


def test_multi_consumer_equals_sum_of_single_consumers():
    rng = np.random.default_rng(11)
    data = rng.normal(size=(3, 3))

    p = T.Tensor(data, requires_grad=True)
    T.backward(T.tensor_sum(T.mul(p, p)))
    combined = p.grad.copy()

    p1 = T.Tensor(data, requires_grad=True)
    fixed = T.Tensor(data)
    T.backward(T.tensor_sum(T.mul(p1, fixed)))
    left = p1.grad.copy()
    p2 = T.Tensor(data, requires_grad=True)
    T.backward(T.tensor_sum(T.mul(fixed, p2)))
    np.testing.assert_allclose(combined, left + p2.grad, atol=1e-12)


def test_graph_freed_after_backward():
    p = T.Tensor([1.0], requires_grad=True)
    T.backward(T.tensor_sum(p))
    assert T.active_graph().nodes == []


def test_backward_rejects_nonscalar():
    p = T.Tensor([1.0, 2.0], requires_grad=True)
    out = T.scale(p, 2.0)
    with pytest.raises(GraphError):
        T.backward(out)
    T.clear_graph()


def test_backward_rejects_empty_graph():
    with pytest.raises(GraphError):
        T.backward(T.Tensor(1.0))


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 3, 8, 8))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = T.conv2d(T.Tensor(x), T.Tensor(w))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_shape_error_names_op():
    with pytest.raises(ShapeMismatchError) as exc:
        T.conv2d(T.Tensor(np.zeros((1, 2, 4, 4))), T.Tensor(np.zeros((3, 5, 3, 3))))
    assert "conv2d" in str(exc.value)
    assert "2" in str(exc.value) and "5" in str(exc.value)


def test_nonfinite_input_raises():
    bad = T.Tensor(np.array([1.0, 2.0]))
    bad.data[0] = np.nan
    with pytest.raises(NonFiniteError):
        T.relu(bad)


def test_maxpool_tie_routes_to_first():
    x = T.Tensor(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
    out = T.maxpool2x2(x)
    assert out.data.shape == (1, 1, 1, 1)
    T.backward(T.tensor_sum(out))
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_requires_even_dims():
    with pytest.raises(ShapeMismatchError):
        T.maxpool2x2(T.Tensor(np.zeros((1, 1, 3, 4))))


def test_upsample_then_pool_is_identity():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 4, 4))
    up = T.upsample2x2_nearest(T.Tensor(x))
    down = T.maxpool2x2(up)
    np.testing.assert_array_equal(down.data, x)


def test_forward_op_dispatch():
    out = T.forward_op("relu", [T.Tensor([-2.0, 3.0])])
    np.testing.assert_array_equal(out.data, [0.0, 3.0])
    out = T.forward_op("scale", [T.Tensor([1.0])], {"factor": -2.0})
    np.testing.assert_array_equal(out.data, [-2.0])
    with pytest.raises(ShapeMismatchError):
        T.forward_op("transpose", [T.Tensor([1.0])])


def test_cross_entropy_matches_manual():
    logits = np.array([[[[2.0]], [[-1.0]], [[0.5]]]])  # [1,3,1,1]
    labels = np.array([[[0]]])
    out = T.cross_entropy_loss(T.Tensor(logits), labels)
    probs = np.exp(logits[0, :, 0, 0]) / np.exp(logits[0, :, 0, 0]).sum()
    assert out.item() == pytest.approx(-math.log(probs[0]), rel=1e-12)


def test_cross_entropy_rejects_bad_labels():
    logits = T.Tensor(np.zeros((1, 3, 2, 2)))
    with pytest.raises(ShapeMismatchError):
        T.cross_entropy_loss(logits, np.full((1, 2, 2), 3))


def test_fd_check_quadratic():
    params = _params(theta=np.array([1.0, 2.0]))

    def build(ps):
        return T.l2_squared_norm(params[0][1])

    assert T.finite_difference_check(build, params, epsilon=1e-5) < 1e-6


def test_fd_check_constant_loss():
    params = _params(theta=np.array([1.0, 2.0]))

    def build(ps):
        return T.tensor_sum(T.Tensor([4.0]))

    assert T.finite_difference_check(build, params, epsilon=1e-5) == 0.0


def test_fd_check_epsilon_range():
    params = _params(theta=np.array([1.0]))
    with pytest.raises(ValueError):
        T.finite_difference_check(lambda ps: T.tensor_sum(params[0][1]), params, epsilon=0.5)


@pytest.mark.parametrize("seed", range(10))
def test_fd_check_conv_softmax_ce(seed):
    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.normal(size=(1, 2, 4, 4)) + 0.3)
    labels = rng.integers(0, 3, size=(1, 4, 4))
    params = _params(
        w=rng.normal(scale=0.6, size=(3, 2, 3, 3)),
        b=rng.normal(scale=0.2, size=3),
    )
    w, b = params[0][1], params[1][1]

    def build(ps):
        h = T.relu(T.conv2d(x, w, b))
        return T.cross_entropy_loss(h, labels)

    assert T.finite_difference_check(build, params, epsilon=1e-6) < 1e-4


@pytest.mark.parametrize(
    "op_builder",
    [
        lambda t: T.relu(t),
        lambda t: T.maxpool2x2(t),
        lambda t: T.upsample2x2_nearest(t),
        lambda t: T.softmax_channel(t),
        lambda t: T.scale(t, 1.7),
        lambda t: T.mul(t, T.Tensor(np.linspace(0.5, 2.0, 64).reshape(1, 4, 4, 4))),
    ],
    ids=["relu", "maxpool", "upsample", "softmax", "scale", "mul"],
)
def test_op_gradients_match_fd(op_builder):
    rng = np.random.default_rng(42)
    # keep pre-activations away from relu/maxpool kinks
    data = rng.normal(size=(1, 4, 4, 4))
    data += 0.2 * np.sign(data)
    params = _params(x=data)
    x = params[0][1]
    proj = rng.normal(size=op_builder(x).shape)
    T.clear_graph()

    def build(ps):
        return T.tensor_sum(T.mul(op_builder(x), T.Tensor(proj)))

    assert T.finite_difference_check(build, params, epsilon=1e-6) < 1e-4


def test_matmul_gradients_match_fd():
    rng = np.random.default_rng(1)
    params = _params(a=rng.normal(size=(3, 4)), b=rng.normal(size=(4, 2)))
    a, b = params[0][1], params[1][1]
    proj = T.Tensor(rng.normal(size=(3, 2)))

    def build(ps):
        return T.tensor_sum(T.mul(T.matmul(a, b), proj))

    assert T.finite_difference_check(build, params, epsilon=1e-6) < 1e-4


def test_add_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        T.add(T.Tensor([1.0]), T.Tensor([1.0, 2.0]))
