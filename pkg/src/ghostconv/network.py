"""Materialized networks and weight checkpoints.

Checkpoint layout (all integers little-endian u32)::

    b"GNCK" | version | scalar_bytes | record_count
    record: name_len | name (utf-8) | rank | dims[rank] | scalars

``scalar_bytes`` is 4 (float32) or 8 (float64) and applies to every record.
"""
import struct

import numpy as np

from . import ops
from .arch import validate
from .errors import FormatError, ShapeError, SpecError
from .ghost import GhostBottleneck, GhostModule, GhostModuleConfig
from .layers import AvgPool2d, BatchNorm2d, Conv2d, Flatten, Linear, ReLU, Sequential
from .tensor import check_tensor, resolve_dtype

CHECKPOINT_MAGIC = b"GNCK"
CHECKPOINT_VERSION = 1


def _build_layer(layer, in_shape, dtype, se_gate):
    p = layer.params
    kind = layer.kind
    if kind == "conv":
        return Conv2d(in_shape[0], p["out"], p["k"], p["stride"], p["pad"], bias=bool(p["bias"]), dtype=dtype)
    if kind == "ghost_module":
        cfg = GhostModuleConfig(in_shape[0], p["out"], p["s"], p["k"], p["d"], p["stride"], p["pad"],
                                use_relu=bool(p["relu"]), use_bn=bool(p["bn"]), bias=bool(p["bias"]))
        return GhostModule(cfg, dtype=dtype)
    if kind == "ghost_bneck":
        return GhostBottleneck(in_shape[0], p["exp"], p["out"], p["stride"], bool(p["se"]),
                               ratio=p["s"], cheap_kernel=p["d"], dw_kernel=p["dw"],
                               se_gate=se_gate, dtype=dtype)
    if kind == "bn":
        return BatchNorm2d(in_shape[0], dtype=dtype)
    if kind == "relu":
        return ReLU()
    if kind == "avgpool":
        return AvgPool2d(None if p["k"] == 0 else p["k"], p["stride"] or None)
    if kind == "flatten":
        return Flatten()
    if kind == "fc":
        return Linear(in_shape[0], p["out"], bias=bool(p["bias"]), dtype=dtype)
    raise SpecError(f"unknown layer kind {kind!r}")


class Network(Sequential):
    """A :class:`NetworkSpec` with allocated weights; children are named by layer index."""

    def __init__(self, spec, dtype=None, se_gate="hardsigmoid"):
        super().__init__()
        self.spec = spec
        self.dtype = resolve_dtype(dtype)
        shapes = validate(spec)
        in_shapes = [spec.input_shape] + shapes[:-1]
        for layer, shape in zip(spec.layers, in_shapes):
            self.append(_build_layer(layer, shape, self.dtype, se_gate))

    def forward(self, x, mode="eval"):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        check_tensor(x, self.spec.input_shape[0])
        if x.shape[2:] != self.spec.input_shape[1:]:
            raise ShapeError(f"input spatial size {x.shape[2:]} != spec {self.spec.input_shape[1:]}")
        self.train(mode == "train")
        return super().forward(np.ascontiguousarray(x, dtype=self.dtype))

    def forward_layers(self, x, mode="eval"):
        """Forward pass returning the output of every layer."""
        check_tensor(x, self.spec.input_shape[0])
        self.train(mode == "train")
        outs = []
        x = np.ascontiguousarray(x, dtype=self.dtype)
        for m in self:
            x = m.forward(x)
            outs.append(x)
        return outs

    def layer_costs(self, batch=1):
        """Instrumented per-layer ``(mac, aux)`` tallies for one eval forward pass."""
        x = np.zeros((batch,) + self.spec.input_shape, dtype=self.dtype)
        self.eval()
        costs = []
        for m in self:
            with ops.count_ops() as ctr:
                x = m.forward(x)
            costs.append((ctr.mac // batch, ctr.aux // batch))
        return costs

    def num_parameters(self):
        return sum(int(a.size) for _, a in self.named_parameters())


def materialize(spec, seed=0, dtype=None, se_gate="hardsigmoid"):
    """Allocate a :class:`Network` and initialize it deterministically from ``seed``."""
    net = Network(spec, dtype=dtype, se_gate=se_gate)
    net.init_parameters(np.random.default_rng(seed))
    return net


# -- checkpoints ------------------------------------------------------------------

def dumps_checkpoint(state):
    arrays = {k: np.asarray(v) for k, v in state.items()}
    dtypes = {a.dtype for a in arrays.values()}
    if len(dtypes) > 1:
        arrays = {k: a.astype(np.float64) for k, a in arrays.items()}
        dtypes = {np.dtype(np.float64)}
    dtype = dtypes.pop() if dtypes else np.dtype(np.float32)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"cannot checkpoint dtype {dtype}")
    parts = [CHECKPOINT_MAGIC, struct.pack("<III", CHECKPOINT_VERSION, dtype.itemsize, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<")).tobytes())
    return b"".join(parts)


def loads_checkpoint(buf, path=None):
    def need(off, n, what):
        if off + n > len(buf):
            raise FormatError(f"truncated checkpoint while reading {what}", path, off)

    need(0, 16, "header")
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic (expected GNCK)", path, 0)
    version, width, count = struct.unpack_from("<III", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", path, 4)
    if width not in (4, 8):
        raise FormatError(f"unsupported scalar width {width}", path, 8)
    dtype = np.dtype("<f4" if width == 4 else "<f8")
    off = 16
    state = {}
    for _ in range(count):
        need(off, 4, "name length")
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        need(off, nlen, "name")
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        need(off, 4, "rank")
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        need(off, 4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        nbytes = int(np.prod(dims, dtype=np.int64)) * width
        need(off, nbytes, f"tensor {name}")
        state[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // width, offset=off).reshape(dims).astype(
            dtype.newbyteorder("="))
        off += nbytes
    if off != len(buf):
        raise FormatError("trailing bytes after last record", path, off)
    return state


def save_checkpoint(path, net, extra=None):
    state = net.state_dict()
    if extra:
        state.update(extra)
    with open(path, "wb") as f:
        f.write(dumps_checkpoint(state))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return loads_checkpoint(f.read(), path)


def restore(net, state):
    """Load network tensors from ``state``; extra ``__*`` records are returned untouched."""
    own = {k: v for k, v in state.items() if not k.startswith("__")}
    net.load_state_dict(own)
    return {k: v for k, v in state.items() if k.startswith("__")}
