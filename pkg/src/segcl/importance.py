"""Parameter-importance weights: raw sensitivity, outlier clipping,
unit normalization, kernel/filter aggregation, and cross-task accumulation.

The raw weight of a parameter is the absolute gradient of the squared l2
norm of the network's softmax output, averaged over unlabeled samples.
Downstream stages keep the whole pipeline in [0, 1]: clip network-wide
outliers to their Tukey fences, min-max normalize over the pooled values,
optionally average within kernel or filter blocks, then fold into a running
per-task mean.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import NonFiniteError, ParameterMismatchError, SegclError

log = logging.getLogger(__name__)

GRANULARITIES = ("parameter", "kernel", "filter")


@dataclass
class ImportanceMap:
    """Per-parameter nonnegative weights aligned 1:1 with a ParameterStore."""

    values: dict
    granularity: str = "parameter"
    normalized: bool = False
    sample_count: int = 0
    task_count: int = 0

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise SegclError(f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}")

    def copy(self):
        return ImportanceMap(
            {pid: v.copy() for pid, v in self.values.items()},
            self.granularity,
            self.normalized,
            self.sample_count,
            self.task_count,
        )

    def pooled(self):
        """All values concatenated network-wide, in param order."""
        return np.concatenate([v.reshape(-1) for v in self.values.values()])

    def check_same_params(self, other_ids, context=""):
        mine = set(self.values)
        other = set(other_ids)
        if mine != other:
            raise ParameterMismatchError(other - mine, mine - other, context=context)


def compute_raw_importance(net, samples):
    """Mean absolute gradient of ||softmax(net(x))||^2 per parameter.

    Unsupervised: only inputs are used. Each element of `samples` is one
    sample, shaped [C,H,W] or [1,C,H,W].
    """
    if not samples:
        raise SegclError("compute_raw_importance needs at least one sample")
    store = net.params
    totals = {pid: np.zeros_like(t.data) for pid, t in store.named_tensors()}
    for sample in samples:
        arr = sample.data if isinstance(sample, T.Tensor) else np.asarray(sample, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[0] != 1:
            raise SegclError(f"each sample must be a single image, got shape {arr.shape}")
        store.zero_grads()
        T.clear_graph()
        probs = T.softmax_channel(net.forward_logits(T.Tensor(arr)))
        T.backward(T.l2_squared_norm(probs))
        for pid, t in store.named_tensors():
            if t.grad is None:
                continue
            if not np.isfinite(t.grad).all():
                raise NonFiniteError(f"importance gradient for {pid}")
            totals[pid] += np.abs(t.grad)
    store.zero_grads()
    n = len(samples)
    return ImportanceMap(
        {pid: v / n for pid, v in totals.items()},
        granularity="parameter",
        normalized=False,
        sample_count=n,
    )


def clip_outliers_iqr(imp):
    """Clamp network-wide outliers to their interquartile-range fences.

    Quartiles use linear interpolation on the pooled sorted values; the
    classic 1.5*IQR fences apply, with the lower fence floored at zero.
    """
    out = imp.copy()
    pool = out.pooled()
    if pool.size < 4:
        log.warning("clip_outliers_iqr: only %d values, returning map unchanged", pool.size)
        return out
    q1, q3 = np.percentile(pool, [25.0, 75.0])
    iqr = q3 - q1
    upper = q3 + 1.5 * iqr
    lower = max(0.0, q1 - 1.5 * iqr)
    for v in out.values.values():
        np.clip(v, lower, upper, out=v)
    return out


def normalize_unit(imp):
    """Min-max normalize over the pooled values; a constant map becomes all
    zero (nothing stands out as important, so everything stays plastic)."""
    out = imp.copy()
    pool = out.pooled()
    lo, hi = pool.min(), pool.max()
    span = hi - lo
    for pid, v in out.values.items():
        if span == 0.0:
            out.values[pid] = np.zeros_like(v)
        else:
            out.values[pid] = (v - lo) / span
    out.normalized = True
    return out


def aggregate(imp, granularity, store):
    """Average weights within each kernel or filter block and broadcast back.

    Kernel blocks are one (out, in) pair of a conv weight; bias entries stay
    their own blocks. Filter blocks pool all kernels of one out-channel
    together with that channel's bias entry.
    """
    from .network import layer_groups

    if imp.granularity != "parameter":
        raise SegclError(f"cannot aggregate a map already at {imp.granularity} granularity")
    if granularity not in ("kernel", "filter"):
        raise SegclError(f"aggregate target must be kernel or filter, got {granularity!r}")
    imp.check_same_params(store.ids(), context="aggregate")

    out = imp.copy()
    for name, (went, bent) in layer_groups(store).items():
        if went is None or "out_channels" not in went.structure:
            continue
        s = went.structure
        shape = (s["out_channels"], s["in_channels"], s["kernel_h"], s["kernel_w"])
        w = out.values[went.param_id].reshape(shape)
        if granularity == "kernel":
            out.values[went.param_id] = np.broadcast_to(
                w.mean(axis=(2, 3), keepdims=True), shape
            ).reshape(out.values[went.param_id].shape).copy()
        else:
            b = out.values[bent.param_id] if bent is not None else None
            for o in range(shape[0]):
                block = w[o].reshape(-1)
                if b is not None:
                    m = (block.sum() + b[o]) / (block.size + 1)
                    b[o] = m
                else:
                    m = block.mean()
                w[o, :, :, :] = m
            out.values[went.param_id] = w.reshape(out.values[went.param_id].shape)
    out.granularity = granularity
    return out


def accumulate(running, fresh, task_index):
    """Uniform running mean of per-task maps: ((t-1)*run + fresh) / t."""
    if task_index < 1:
        raise SegclError(f"task_index must be >= 1, got {task_index}")
    if not fresh.normalized:
        raise SegclError("accumulate requires a normalized fresh map")
    if task_index == 1:
        if running is not None:
            raise SegclError("task_index 1 must not carry a running map")
        return replace(fresh.copy(), task_count=1)
    if running is None:
        raise SegclError(f"task_index {task_index} requires a running map")
    if running.task_count != task_index - 1:
        raise SegclError(
            f"running map has task_count {running.task_count}, expected {task_index - 1}"
        )
    if running.granularity != fresh.granularity:
        raise SegclError(
            f"granularity mismatch: running {running.granularity}, fresh {fresh.granularity}"
        )
    running.check_same_params(fresh.values, context="accumulate")
    t = task_index
    merged = {
        pid: ((t - 1) * running.values[pid] + fresh.values[pid]) / t for pid in running.values
    }
    return ImportanceMap(
        merged,
        granularity=fresh.granularity,
        normalized=True,
        sample_count=fresh.sample_count,
        task_count=t,
    )


def processed_importance(net, samples, granularity="parameter"):
    """Full single-task pipeline: raw -> clip -> normalize -> aggregate."""
    imp = normalize_unit(clip_outliers_iqr(compute_raw_importance(net, samples)))
    if granularity != "parameter":
        imp = aggregate(imp, granularity, net.params)
    return imp
