"""Ghost module, squeeze-and-excite block and Ghost bottleneck.

A Ghost module replaces an ``n``-filter convolution by a primary
convolution producing ``m = ceil(n / s)`` intrinsic maps, followed by a
depthwise ``d x d`` convolution that derives ``(s - 1) * m`` ghost maps from
them. The intrinsic maps pass through unchanged, the two groups are
concatenated and the result is truncated to ``n`` channels.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .layers import BatchNorm2d, Conv2d, DepthwiseConv2d, Linear, Module, Sequential
from .tensor import check_tensor


@dataclass(frozen=True)
class GhostModuleConfig:
    in_channels: int
    out_channels: int
    ratio: int = 2
    kernel_size: int = 1
    cheap_kernel: int = 3
    stride: int = 1
    padding: int | None = None
    use_relu: bool = True
    use_bn: bool = True
    bias: bool = False

    def __post_init__(self):
        n, s = self.out_channels, self.ratio
        if self.in_channels < 1 or n < 1:
            raise ValueError(f"channel counts must be >= 1, got in={self.in_channels} out={n}")
        if not 1 <= s <= n:
            raise ValueError(f"ratio s={s} must satisfy 1 <= s <= n={n}")
        if self.kernel_size % 2 == 0 or self.cheap_kernel % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got k={self.kernel_size} d={self.cheap_kernel}")

    @property
    def intrinsic_channels(self):
        return math.ceil(self.out_channels / self.ratio)

    @property
    def cheap_channels(self):
        return self.intrinsic_channels * (self.ratio - 1)

    @property
    def resolved_padding(self):
        return (self.kernel_size - 1) // 2 if self.padding is None else self.padding


class GhostModule(Module):
    def __init__(self, config: GhostModuleConfig, dtype=None):
        super().__init__()
        self.config = config
        m = config.intrinsic_channels
        self.add_child("primary", Conv2d(config.in_channels, m, config.kernel_size, config.stride,
                                         config.resolved_padding, bias=config.bias, dtype=dtype))
        if config.use_bn:
            self.add_child("primary_bn", BatchNorm2d(m, dtype=dtype))
        if config.ratio > 1:
            self.add_child("cheap", DepthwiseConv2d(config.cheap_channels, config.cheap_kernel,
                                                    bias=config.bias, dtype=dtype))
            if config.use_bn:
                self.add_child("cheap_bn", BatchNorm2d(config.cheap_channels, dtype=dtype))

    def _branch_forward(self, conv, bn, x):
        y = conv.forward(x)
        if bn is not None:
            y = bn.forward(y)
        if self.config.use_relu:
            pre = y
            y = ops.relu_forward(y)
            return y, pre
        return y, None

    def _branch_backward(self, conv, bn, pre, grad):
        if pre is not None:
            grad = ops.relu_backward(pre, grad)
        if bn is not None:
            grad = bn.backward(grad)
        return conv.backward(grad)

    def forward(self, x):
        cfg = self.config
        check_tensor(x, cfg.in_channels)
        intrinsic, self._pre1 = self._branch_forward(self.primary, getattr(self, "primary_bn", None), x)
        if cfg.ratio == 1:
            return intrinsic
        tiled = np.tile(intrinsic, (1, cfg.ratio - 1, 1, 1))
        ghosts, self._pre2 = self._branch_forward(self.cheap, getattr(self, "cheap_bn", None), tiled)
        out = np.concatenate([intrinsic, ghosts], axis=1)
        return np.ascontiguousarray(out[:, : cfg.out_channels])

    def backward(self, grad):
        cfg = self.config
        m = cfg.intrinsic_channels
        if cfg.ratio == 1:
            return self._branch_backward(self.primary, getattr(self, "primary_bn", None), self._pre1, grad)
        full = m * cfg.ratio
        if grad.shape[1] < full:
            pad = np.zeros((grad.shape[0], full - grad.shape[1]) + grad.shape[2:], dtype=grad.dtype)
            grad = np.concatenate([grad, pad], axis=1)
        g_tiled = self._branch_backward(self.cheap, getattr(self, "cheap_bn", None), self._pre2,
                                        np.ascontiguousarray(grad[:, m:]))
        n, _, h, w = g_tiled.shape
        g_intr = grad[:, :m] + g_tiled.reshape(n, cfg.ratio - 1, m, h, w).sum(axis=1)
        return self._branch_backward(self.primary, getattr(self, "primary_bn", None), self._pre1, g_intr)


GATES = {
    "hardsigmoid": (ops.hardsigmoid_forward, ops.hardsigmoid_backward),
    "sigmoid": (ops.sigmoid_forward, ops.sigmoid_backward),
}


class SEBlock(Module):
    """Squeeze-and-excite gating: pool, reduce, ReLU, expand, gate, rescale."""

    def __init__(self, channels, reduction=4, gate="hardsigmoid", dtype=None):
        super().__init__()
        if gate not in GATES:
            raise ValueError(f"unknown SE gate {gate!r}; choose from {sorted(GATES)}")
        self.channels = channels
        self.reduction = reduction
        self.gate = gate
        self.reduced = max(1, channels // reduction)
        self.add_child("reduce", Linear(channels, self.reduced, dtype=dtype, aux=True))
        self.add_child("expand", Linear(self.reduced, channels, dtype=dtype, aux=True))

    def forward(self, x):
        check_tensor(x, self.channels)
        gate_fwd, _ = GATES[self.gate]
        pooled = x.mean(axis=(2, 3))
        z = self.reduce.forward(pooled)
        a = ops.relu_forward(z)
        e = self.expand.forward(a)
        g = gate_fwd(e)
        ops.tally(aux=2 * x.size)  # pooling + rescale
        self._cache = (x, z, e, g)
        return x * g[:, :, None, None]

    def backward(self, grad):
        _, gate_bwd = GATES[self.gate]
        x, z, e, g = self._cache
        gx = grad * g[:, :, None, None]
        gg = (grad * x).sum(axis=(2, 3))
        ge = gate_bwd(e, gg)
        ga = self.expand.backward(ge)
        gz = ops.relu_backward(z, ga)
        gp = self.reduce.backward(gz)
        return gx + gp[:, :, None, None] / (x.shape[2] * x.shape[3])


class GhostBottleneck(Module):
    """Two stacked Ghost modules with a residual shortcut.

    ``ghost1`` expands to ``exp_channels`` with ReLU, an optional strided
    depthwise conv + BN downsamples, an optional SE block gates the expanded
    features, and ``ghost2`` projects to ``out_channels`` without ReLU. The
    shortcut is the identity when shapes allow it, otherwise a projection
    (depthwise stride-s conv + BN + 1x1 conv + BN when strided, 1x1 conv + BN
    when only the width changes).
    """

    def __init__(self, in_channels, exp_channels, out_channels, stride=1, use_se=False,
                 ratio=2, cheap_kernel=3, dw_kernel=3, se_gate="hardsigmoid", se_reduction=4,
                 dtype=None):
        super().__init__()
        if stride not in (1, 2):
            raise ValueError(f"bottleneck stride must be 1 or 2, got {stride}")
        self.in_channels = in_channels
        self.exp_channels = exp_channels
        self.out_channels = out_channels
        self.stride = stride
        self.add_child("ghost1", GhostModule(GhostModuleConfig(
            in_channels, exp_channels, ratio, 1, cheap_kernel, use_relu=True), dtype=dtype))
        if stride > 1:
            self.add_child("dw", DepthwiseConv2d(exp_channels, dw_kernel, stride, dtype=dtype))
            self.add_child("dw_bn", BatchNorm2d(exp_channels, dtype=dtype))
        if use_se:
            self.add_child("se", SEBlock(exp_channels, se_reduction, se_gate, dtype=dtype))
        self.add_child("ghost2", GhostModule(GhostModuleConfig(
            exp_channels, out_channels, ratio, 1, cheap_kernel, use_relu=False), dtype=dtype))
        if stride == 1 and in_channels == out_channels:
            self.shortcut = None
        elif stride > 1:
            self.add_child("shortcut", Sequential([
                DepthwiseConv2d(in_channels, 3, stride, dtype=dtype),
                BatchNorm2d(in_channels, dtype=dtype),
                Conv2d(in_channels, out_channels, 1, dtype=dtype),
                BatchNorm2d(out_channels, dtype=dtype),
            ]))
        else:
            self.add_child("shortcut", Sequential([
                Conv2d(in_channels, out_channels, 1, dtype=dtype),
                BatchNorm2d(out_channels, dtype=dtype),
            ]))

    @property
    def main_path(self):
        names = ["ghost1", "dw", "dw_bn", "se", "ghost2"]
        return [getattr(self, n) for n in names if hasattr(self, n)]

    def forward(self, x):
        check_tensor(x, self.in_channels)
        y = x
        for m in self.main_path:
            y = m.forward(y)
        res = x if self.shortcut is None else self.shortcut.forward(x)
        if res.shape != y.shape:
            raise ShapeError(f"main path {y.shape} and shortcut {res.shape} disagree")
        ops.tally(aux=y.size)
        return y + res

    def backward(self, grad):
        g = grad
        for m in reversed(self.main_path):
            g = m.backward(g)
        gres = grad if self.shortcut is None else self.shortcut.backward(grad)
        return g + gres
