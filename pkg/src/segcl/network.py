"""A small fully-convolutional encoder-decoder segmentation network.

Two conv stages down, a bottleneck, two conv stages up with additive skip
connections, and a 1x1 head. Parameters live in a ParameterStore keyed by
stable string ids ("enc1.weight", ...) so importance maps, freeze masks and
checkpoints can all line up against the same registry.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ParameterMismatchError, ShapeMismatchError


@dataclass
class ParamEntry:
    param_id: str
    tensor: T.Tensor
    structure: dict


class ParameterStore:
    """Ordered registry of named parameter tensors."""

    def __init__(self):
        self._entries = []
        self._by_id = {}

    def add(self, param_id, tensor, structure):
        if param_id in self._by_id:
            raise ParameterMismatchError(context=f"duplicate param_id {param_id!r}")
        expected = int(np.prod([v for v in structure.values()]))
        if expected != tensor.size:
            raise ShapeMismatchError(
                "ParameterStore.add",
                f"{param_id}: structure {structure} implies {expected} values, tensor has {tensor.size}",
            )
        entry = ParamEntry(param_id, tensor, dict(structure))
        self._entries.append(entry)
        self._by_id[param_id] = entry
        return entry

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, param_id):
        return param_id in self._by_id

    def __getitem__(self, param_id):
        return self._by_id[param_id]

    def ids(self):
        return [e.param_id for e in self._entries]

    def named_tensors(self):
        return [(e.param_id, e.tensor) for e in self._entries]

    def total_count(self):
        return sum(e.tensor.size for e in self._entries)

    def zero_grads(self):
        for e in self._entries:
            e.tensor.zero_grad()

    def snapshot(self):
        """Copy of all parameter values, keyed by param_id."""
        return {e.param_id: e.tensor.data.copy() for e in self._entries}

    def load_values(self, values):
        missing = set(self.ids()) - set(values)
        extra = set(values) - set(self.ids())
        if missing or extra:
            raise ParameterMismatchError(missing, extra, context="load_values")
        for e in self._entries:
            arr = np.asarray(values[e.param_id], dtype=np.float64)
            if arr.shape != e.tensor.data.shape:
                raise ShapeMismatchError(
                    "ParameterStore.load_values",
                    f"{e.param_id}: expected {e.tensor.data.shape}, got {arr.shape}",
                )
            e.tensor.data = arr.copy()


@dataclass
class SegNetConfig:
    in_channels: int = 1
    num_classes: int = 4
    encoder_channels: tuple = (8, 16)
    bottleneck_channels: int = 32
    dropout_rate: float = 0.0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if self.num_classes < 2:
            raise ConfigError("network.num_classes", f"must be >= 2, got {self.num_classes}")
        if self.in_channels < 1 or self.bottleneck_channels < 1 or any(
            c < 1 for c in self.encoder_channels
        ):
            raise ConfigError("network.channels", "all channel counts must be >= 1")
        if not self.encoder_channels:
            raise ConfigError("network.encoder_channels", "need at least one encoder stage")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError("network.dropout_rate", f"must be in [0, 1), got {self.dropout_rate}")

    def to_dict(self):
        return {
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "encoder_channels": list(self.encoder_channels),
            "bottleneck_channels": self.bottleneck_channels,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            in_channels=int(d["in_channels"]),
            num_classes=int(d["num_classes"]),
            encoder_channels=tuple(d["encoder_channels"]),
            bottleneck_channels=int(d["bottleneck_channels"]),
            dropout_rate=float(d["dropout_rate"]),
        )


def _conv_layer(params, name, cin, cout, k, rng, zero_init=False):
    fan_in = cin * k * k
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
    if zero_init:
        # zero head: training starts from uniform class probabilities
        w[...] = 0.0
    params.add(
        f"{name}.weight",
        T.Tensor(w, requires_grad=True),
        {"out_channels": cout, "in_channels": cin, "kernel_h": k, "kernel_w": k},
    )
    # small positive bias keeps relu units alive at the start
    bias = np.zeros(cout) if zero_init else np.full(cout, 0.02)
    params.add(f"{name}.bias", T.Tensor(bias, requires_grad=True), {"bias_len": cout})


class SegNet:
    """Encoder-decoder net; forward is a pure function of params, input, and
    the dropout RNG state."""

    def __init__(self, config, seed):
        self.config = config
        self.seed = int(seed)
        self.params = ParameterStore()
        rng = np.random.default_rng(np.random.PCG64(self.seed))
        enc = config.encoder_channels
        cin = config.in_channels
        for i, cout in enumerate(enc, start=1):
            _conv_layer(self.params, f"enc{i}", cin, cout, 3, rng)
            cin = cout
        _conv_layer(self.params, "bottleneck", cin, config.bottleneck_channels, 3, rng)
        cin = config.bottleneck_channels
        for i in range(len(enc), 0, -1):
            _conv_layer(self.params, f"dec{i}", cin, enc[i - 1], 3, rng)
            cin = enc[i - 1]
        _conv_layer(self.params, "head", cin, config.num_classes, 1, rng, zero_init=True)

    def _wb(self, name):
        return self.params[f"{name}.weight"].tensor, self.params[f"{name}.bias"].tensor

    def _maybe_dropout(self, h, dropout_active, rng):
        rate = self.config.dropout_rate
        if not dropout_active or rate <= 0.0:
            return h
        if rng is None:
            raise ConfigError("dropout", "dropout_active requires a dropout RNG")
        keep = (rng.random(h.shape) >= rate) / (1.0 - rate)
        return T.mul(h, T.Tensor(keep))

    def forward_logits(self, x, dropout_active=False, dropout_rng=None):
        """Logits [N, num_classes, H, W]; requires H, W divisible by 2^depth."""
        if not isinstance(x, T.Tensor):
            x = T.Tensor(x)
        depth = len(self.config.encoder_channels)
        div = 2**depth
        if x.data.ndim != 4 or x.shape[2] % div or x.shape[3] % div:
            raise ShapeMismatchError(
                "SegNet.forward",
                f"input must be [N,C,H,W] with H and W divisible by {div}, got {x.shape}",
            )
        if x.shape[1] != self.config.in_channels:
            raise ShapeMismatchError(
                "SegNet.forward", f"expected {self.config.in_channels} input channels, got {x.shape[1]}"
            )

        # center [0,1] intensities for better first-layer conditioning
        h = T.scale(T.add(x, T.Tensor(np.full(x.shape, -0.5))), 2.0)
        skips = []
        for i in range(1, depth + 1):
            w, b = self._wb(f"enc{i}")
            h = T.relu(T.conv2d(h, w, b))
            h = self._maybe_dropout(h, dropout_active, dropout_rng)
            skips.append(h)
            h = T.maxpool2x2(h)
        w, b = self._wb("bottleneck")
        h = T.relu(T.conv2d(h, w, b))
        h = self._maybe_dropout(h, dropout_active, dropout_rng)
        for i in range(depth, 0, -1):
            w, b = self._wb(f"dec{i}")
            h = T.upsample2x2_nearest(h)
            h = T.relu(T.conv2d(h, w, b))
            h = self._maybe_dropout(h, dropout_active, dropout_rng)
            h = T.add(h, skips[i - 1])
        w, b = self._wb("head")
        return T.conv2d(h, w, b)

    def predict(self, batch, dropout_active=False, dropout_rng=None):
        """Class probabilities [N, num_classes, H, W]; no graph is recorded."""
        with T.no_grad():
            logits = self.forward_logits(batch, dropout_active, dropout_rng)
            return T.softmax_channel(logits)


def build_segnet(config, seed):
    return SegNet(config, seed)


def layer_groups(store):
    """Map layer name -> (weight entry, bias entry or None), in store order.

    Layers follow the '<name>.weight' / '<name>.bias' id convention.
    """
    groups = {}
    for e in store:
        name, _, part = e.param_id.rpartition(".")
        groups.setdefault(name, {})[part] = e
    return {name: (g.get("weight"), g.get("bias")) for name, g in groups.items()}
