"""Dense float64 tensors and a minimal reverse-mode autodiff engine.

The op set is exactly what the segmentation net and the importance metric
need: conv2d ('same', stride 1), relu, 2x2 max pool, 2x2 nearest upsample,
add, mul, matmul, channel softmax, pixelwise cross-entropy, squared l2 norm,
scalar scale, and full-reduce sum. Ops are recorded on an ambient graph in
execution order; `backward` replays them in exact reverse order and frees the
graph afterwards. First-order gradients only.
"""

import contextlib

import numpy as np

from . import _kernels as K
from .errors import GraphError, NonFiniteError, ShapeMismatchError


class Tensor:
    """A dense array plus an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Node:
    """One recorded operation: kind, inputs, output, and its pullback."""

    __slots__ = ("kind", "inputs", "output", "pullback")

    def __init__(self, kind, inputs, output, pullback):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.pullback = pullback


class Graph:
    """Ordered op records; every node's inputs precede it."""

    def __init__(self):
        self.nodes = []

    def record(self, node):
        self.nodes.append(node)

    def clear(self):
        self.nodes.clear()


_graph = Graph()
_grad_enabled = True


def active_graph():
    return _graph


def clear_graph():
    _graph.clear()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(kind, arr):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"op {kind}", "output contains NaN/Inf")


def _make_output(kind, inputs, out_data, pullback):
    _check_finite(kind, out_data)
    requires = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        _graph.record(Node(kind, tuple(inputs), out, pullback))
    return out


# ---------------------------------------------------------------------------
# ops


def conv2d(x, w, b=None):
    """'same' zero-padded stride-1 convolution; optional bias over out-channels."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError(
            "conv2d", f"need input [N,Cin,H,W] and kernel [Cout,Cin,kh,kw], got {x.shape} and {w.shape}"
        )
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(
            "conv2d", f"input channels {x.shape[1]} != kernel in-channels {w.shape[1]}"
        )
    if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ShapeMismatchError("conv2d", f"kernel extents must be odd for 'same' padding, got {w.shape[2:]}")
    inputs = [x, w]
    out_data = K.conv2d_forward(x.data, w.data)
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (w.shape[0],):
            raise ShapeMismatchError("conv2d", f"bias shape {b.shape} != ({w.shape[0]},)")
        out_data = out_data + b.data[None, :, None, None]
        inputs.append(b)

    def pullback(out):
        dout = out.grad
        if x.requires_grad or w.requires_grad:
            dx, dw = K.conv2d_backward(x.data, w.data, dout)
            if x.requires_grad:
                x.accumulate_grad(dx)
            if w.requires_grad:
                w.accumulate_grad(dw)
        if b is not None and b.requires_grad:
            b.accumulate_grad(dout.sum(axis=(0, 2, 3)))

    return _make_output("conv2d", inputs, out_data, pullback)


def relu(x):
    x = _as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def pullback(out):
        if x.requires_grad:
            x.accumulate_grad(out.grad * (x.data > 0.0))

    return _make_output("relu", [x], out_data, pullback)


def maxpool2x2(x):
    """2x2 stride-2 max pool; ties go to the first element in row-major scan."""
    x = _as_tensor(x)
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeMismatchError("maxpool2x2", f"need rank-4 input with even H, W, got {x.shape}")
    out_data, arg = K.maxpool2x2_forward(x.data)

    def pullback(out):
        if x.requires_grad:
            x.accumulate_grad(K.maxpool2x2_backward(out.grad, arg))

    return _make_output("maxpool2x2", [x], out_data, pullback)


def upsample2x2_nearest(x):
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeMismatchError("upsample2x2_nearest", f"need rank-4 input, got {x.shape}")
    out_data = K.upsample2x2_forward(x.data)

    def pullback(out):
        if x.requires_grad:
            x.accumulate_grad(K.upsample2x2_backward(out.grad))

    return _make_output("upsample2x2_nearest", [x], out_data, pullback)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError("add", f"shapes {a.shape} and {b.shape} differ")
    out_data = a.data + b.data

    def pullback(out):
        if a.requires_grad:
            a.accumulate_grad(out.grad)
        if b.requires_grad:
            b.accumulate_grad(out.grad)

    return _make_output("add", [a, b], out_data, pullback)


def mul(a, b):
    """Elementwise product (dropout masks, gating)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError("mul", f"shapes {a.shape} and {b.shape} differ")
    out_data = a.data * b.data

    def pullback(out):
        if a.requires_grad:
            a.accumulate_grad(out.grad * b.data)
        if b.requires_grad:
            b.accumulate_grad(out.grad * a.data)

    return _make_output("mul", [a, b], out_data, pullback)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", f"incompatible shapes {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def pullback(out):
        if a.requires_grad:
            a.accumulate_grad(out.grad @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ out.grad)

    return _make_output("matmul", [a, b], out_data, pullback)


def scale(x, factor):
    x = _as_tensor(x)
    factor = float(factor)
    if not np.isfinite(factor):
        raise NonFiniteError("op scale", "factor is not finite")
    out_data = x.data * factor

    def pullback(out):
        if x.requires_grad:
            x.accumulate_grad(out.grad * factor)

    return _make_output("scale", [x], out_data, pullback)


def tensor_sum(x):
    x = _as_tensor(x)
    out_data = np.asarray(x.data.sum())

    def pullback(out):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, out.grad.item()))

    return _make_output("sum", [x], out_data, pullback)


def softmax_channel(x):
    """Softmax over the channel axis of a rank-4 tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeMismatchError("softmax_channel", f"need rank-4 input [N,C,H,W], got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def pullback(out):
        if x.requires_grad:
            dout = out.grad
            inner = (dout * s).sum(axis=1, keepdims=True)
            x.accumulate_grad(s * (dout - inner))

    return _make_output("softmax_channel", [x], s, pullback)


def cross_entropy_loss(logits, labels):
    """Mean pixelwise cross-entropy of softmax(logits) against integer labels."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 4:
        raise ShapeMismatchError("cross_entropy_loss", f"need rank-4 logits, got {logits.shape}")
    labels = np.asarray(labels)
    N, C, H, W = logits.shape
    if labels.shape != (N, H, W):
        raise ShapeMismatchError(
            "cross_entropy_loss", f"labels shape {labels.shape} != {(N, H, W)}"
        )
    if labels.min() < 0 or labels.max() >= C:
        raise ShapeMismatchError("cross_entropy_loss", f"labels must lie in [0, {C})")
    labels = labels.astype(np.int64)

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    picked = np.take_along_axis(logp, labels[:, None, :, :], axis=1)[:, 0]
    npix = N * H * W
    out_data = np.asarray(-picked.sum() / npix)

    def pullback(out):
        if logits.requires_grad:
            softmax = np.exp(logp)
            onehot = np.zeros_like(softmax)
            np.put_along_axis(onehot, labels[:, None, :, :], 1.0, axis=1)
            logits.accumulate_grad(out.grad.item() * (softmax - onehot) / npix)

    return _make_output("cross_entropy_loss", [logits], out_data, pullback)


def l2_squared_norm(x):
    x = _as_tensor(x)
    out_data = np.asarray(np.sum(x.data * x.data))

    def pullback(out):
        if x.requires_grad:
            x.accumulate_grad(2.0 * out.grad.item() * x.data)

    return _make_output("l2_squared_norm", [x], out_data, pullback)


_DISPATCH = {
    "conv2d": lambda inputs, attrs: conv2d(*inputs),
    "relu": lambda inputs, attrs: relu(*inputs),
    "maxpool2x2": lambda inputs, attrs: maxpool2x2(*inputs),
    "upsample2x2_nearest": lambda inputs, attrs: upsample2x2_nearest(*inputs),
    "add": lambda inputs, attrs: add(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "softmax_channel": lambda inputs, attrs: softmax_channel(*inputs),
    "cross_entropy_loss": lambda inputs, attrs: cross_entropy_loss(inputs[0], attrs["labels"]),
    "l2_squared_norm": lambda inputs, attrs: l2_squared_norm(*inputs),
    "scale": lambda inputs, attrs: scale(inputs[0], attrs["factor"]),
    "sum": lambda inputs, attrs: tensor_sum(*inputs),
}


def forward_op(kind, inputs, attrs=None):
    """Uniform entry point: dispatch on op kind."""
    if kind not in _DISPATCH:
        raise ShapeMismatchError(kind, f"unknown op kind; valid: {sorted(_DISPATCH)}")
    return _DISPATCH[kind](inputs, attrs or {})


def backward(loss):
    """Populate grads of every requires_grad tensor reachable from `loss`.

    Visits the recorded graph in exact reverse insertion order, then frees it.
    Gradients accumulate additively across multiple uses of a tensor.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise GraphError("backward needs a scalar loss tensor")
    if not _graph.nodes:
        raise GraphError("backward on an empty graph")
    if _graph.nodes[-1].output is not loss and all(n.output is not loss for n in _graph.nodes):
        raise GraphError("loss was not produced by the active graph")
    try:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(_graph.nodes):
            if node.output.grad is not None:
                node.pullback(node.output)
    finally:
        _graph.clear()


def finite_difference_check(build_loss, params, epsilon=1e-5):
    """Max relative error between analytic grads and central differences.

    `build_loss` maps the parameter collection to a scalar loss Tensor;
    `params` is any iterable of (param_id, Tensor) pairs (a ParameterStore
    works). Relative error uses max(1, |central|) in the denominator.
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ValueError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    pairs = list(params.named_tensors()) if hasattr(params, "named_tensors") else list(params)

    for _, t in pairs:
        t.zero_grad()
    clear_graph()
    loss = build_loss(params)
    try:
        backward(loss)
    except GraphError:
        # loss recorded no ops over the params: gradient is identically zero
        pass
    analytic = {pid: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for pid, t in pairs}

    worst = 0.0
    with no_grad():
        for pid, t in pairs:
            flat = t.data.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + epsilon
                lp = build_loss(params).data.item()
                flat[idx] = orig - epsilon
                lm = build_loss(params).data.item()
                flat[idx] = orig
                if not (np.isfinite(lp) and np.isfinite(lm)):
                    raise NonFiniteError("finite_difference_check", f"loss at perturbed {pid}[{idx}]")
                central = (lp - lm) / (2.0 * epsilon)
                err = abs(analytic[pid].reshape(-1)[idx] - central) / max(1.0, abs(central))
                worst = max(worst, err)
    return worst
