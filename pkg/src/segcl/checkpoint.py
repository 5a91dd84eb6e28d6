"""Versioned binary checkpoint container.

Layout: magic, a JSON header (format version, network config, free-form run
metadata), a PARM section with one record per parameter (length-prefixed
param_id, dtype tag, shape, raw little-endian data), optional IMPT / FRZE /
OPTS sections, and an ENDC terminator. Freeze masks are bit-packed. All array
round-trips are bit-exact.
"""

import json
import struct

import numpy as np

from .errors import CheckpointError, ParameterMismatchError
from .importance import GRANULARITIES, ImportanceMap
from .network import SegNet, SegNetConfig
from .regularization import FreezeMask

MAGIC = b"SEGCLCKP"
FORMAT_VERSION = 1

_DTYPES = {0: "<f8", 1: "<u1", 2: "<i8"}
_DTYPE_TAGS = {np.dtype("<f8"): 0, np.dtype("<u1"): 1, np.dtype("<i8"): 2}


def _write_str(f, s):
    raw = s.encode("utf-8")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)


def _read_exact(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError("unexpected end of file")
    return buf


def _read_str(f):
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    return _read_exact(f, n).decode("utf-8")


def _write_array(f, arr):
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype("<u1")
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_TAGS:
        raise CheckpointError(f"unsupported dtype {arr.dtype}")
    f.write(struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.astype(dt, copy=False).tobytes())


def _read_array(f):
    tag, ndim = struct.unpack("<BB", _read_exact(f, 2))
    if tag not in _DTYPES:
        raise CheckpointError(f"unknown dtype tag {tag}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    dt = np.dtype(_DTYPES[tag])
    count = int(np.prod(shape)) if ndim else 1
    raw = _read_exact(f, count * dt.itemsize)
    return np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def _write_named_arrays(f, named):
    f.write(struct.pack("<I", len(named)))
    for pid, arr in named:
        _write_str(f, pid)
        _write_array(f, arr)


def _read_named_arrays(f):
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    return [(_read_str(f), _read_array(f)) for _ in range(n)]


def save_checkpoint(net, path, importance=None, frozen=None, optimizer_state=None, meta=None):
    """Write net parameters plus optional importance / freeze / optimizer
    sections. `meta` is a JSON-serializable dict stored in the header."""
    header = {
        "version": FORMAT_VERSION,
        "net_config": net.config.to_dict(),
        "net_seed": net.seed,
        "meta": meta or {},
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        raw = json.dumps(header, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)

        f.write(b"PARM")
        _write_named_arrays(f, [(pid, t.data) for pid, t in net.params.named_tensors()])

        if importance is not None:
            f.write(b"IMPT")
            f.write(
                struct.pack(
                    "<BBII",
                    GRANULARITIES.index(importance.granularity),
                    int(importance.normalized),
                    importance.sample_count,
                    importance.task_count,
                )
            )
            _write_named_arrays(f, list(importance.values.items()))

        if frozen is not None:
            f.write(b"FRZE")
            f.write(struct.pack("<I", len(frozen.masks)))
            for pid, mask in frozen.masks.items():
                _write_str(f, pid)
                flat = mask.reshape(-1)
                f.write(struct.pack("<Q", flat.size))
                f.write(np.packbits(flat.astype(np.uint8)).tobytes())

        if optimizer_state is not None:
            f.write(b"OPTS")
            _write_named_arrays(f, list(optimizer_state.items()))

        f.write(b"ENDC")


class CheckpointBundle:
    def __init__(self, net, importance, frozen, optimizer_state, meta):
        self.net = net
        self.importance = importance
        self.frozen = frozen
        self.optimizer_state = optimizer_state
        self.meta = meta

    def __iter__(self):
        return iter((self.net, self.importance, self.frozen, self.optimizer_state))


def load_checkpoint(path, into=None):
    """Read a checkpoint. With `into`, parameters load into that net (its
    param_id set must match exactly); otherwise the net is rebuilt from the
    stored config."""
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4))
        try:
            header = json.loads(_read_exact(f, hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})")
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format version {header.get('version')} not supported (want {FORMAT_VERSION})"
            )

        importance = None
        frozen = None
        optimizer_state = None
        params = None
        while True:
            tag = _read_exact(f, 4)
            if tag == b"ENDC":
                break
            if tag == b"PARM":
                params = dict(_read_named_arrays(f))
            elif tag == b"IMPT":
                gran, normed, sample_count, task_count = struct.unpack("<BBII", _read_exact(f, 10))
                values = {pid: arr for pid, arr in _read_named_arrays(f)}
                importance = ImportanceMap(
                    values, GRANULARITIES[gran], bool(normed), sample_count, task_count
                )
            elif tag == b"FRZE":
                (n,) = struct.unpack("<I", _read_exact(f, 4))
                masks = {}
                for _ in range(n):
                    pid = _read_str(f)
                    (bits,) = struct.unpack("<Q", _read_exact(f, 8))
                    packed = np.frombuffer(_read_exact(f, (bits + 7) // 8), dtype=np.uint8)
                    masks[pid] = np.unpackbits(packed, count=bits).astype(bool)
                frozen = FreezeMask(masks)
            elif tag == b"OPTS":
                optimizer_state = dict(_read_named_arrays(f))
            else:
                raise CheckpointError(f"{path}: unknown section tag {tag!r}")

    if params is None:
        raise CheckpointError(f"{path}: missing PARM section")

    if into is not None:
        net = into
        stored = set(params)
        have = set(net.params.ids())
        if stored != have:
            raise ParameterMismatchError(have - stored, stored - have, context="load_checkpoint")
    else:
        net = SegNet(SegNetConfig.from_dict(header["net_config"]), header.get("net_seed", 0))
    net.params.load_values(params)

    # reshape flat freeze masks back onto the parameter shapes
    if frozen is not None:
        shaped = {}
        for pid, flat in frozen.masks.items():
            if pid in net.params:
                shaped[pid] = flat.reshape(net.params[pid].tensor.data.shape)
            else:
                shaped[pid] = flat
        frozen = FreezeMask(shaped)

    return CheckpointBundle(net, importance, frozen, optimizer_state, header.get("meta", {}))
