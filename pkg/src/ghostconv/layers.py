"""Stateful layers built on :mod:`ghostconv.ops`.

A layer owns its parameter arrays (``params``), the gradients from its most
recent ``backward`` (``grads``) and non-trainable state such as batch-norm
running statistics (``buffers``). ``forward`` caches what ``backward`` needs,
so every layer instance must be used at most once per forward pass.
"""
import math

import numpy as np

from . import ops
from .errors import ShapeError
from .tensor import resolve_dtype


class Module:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.training = False
        self._children = []

    def add_child(self, name, module):
        self._children.append((name, module))
        setattr(self, name, module)
        return module

    def children(self):
        return list(self._children)

    def modules(self):
        yield self
        for _, child in self._children:
            yield from child.modules()

    def named_parameters(self, prefix=""):
        for name, arr in self.params.items():
            yield prefix + name, arr
        for cname, child in self._children:
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_gradients(self, prefix=""):
        for name, arr in self.params.items():
            yield prefix + name, self.grads.get(name, np.zeros_like(arr))
        for cname, child in self._children:
            yield from child.named_gradients(f"{prefix}{cname}.")

    def named_buffers(self, prefix=""):
        for name, arr in self.buffers.items():
            yield prefix + name, arr
        for cname, child in self._children:
            yield from child.named_buffers(f"{prefix}{cname}.")

    def state_dict(self):
        """Parameters then buffers, in module order."""
        state = dict(self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state):
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ShapeError(f"{name}: checkpoint shape {src.shape} != model shape {arr.shape}")
            arr[...] = src

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for m in self.modules():
            m.grads = {k: np.zeros_like(v) for k, v in m.params.items()}

    def init_parameters(self, rng):
        """Re-initialize every parameter in module order from ``rng``."""
        for m in self.modules():
            m._init(rng)

    def _init(self, rng):
        pass

    def __call__(self, x):
        return self.forward(x)


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=None,
                 bias=False, dtype=None, aux=False):
        super().__init__()
        dtype = resolve_dtype(dtype)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = (kernel_size - 1) // 2 if padding is None else padding
        self.aux = aux
        self.params["weight"] = np.zeros((out_channels, in_channels, kernel_size, kernel_size), dtype)
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype)

    @property
    def has_bias(self):
        return "bias" in self.params

    def _init(self, rng):
        w = self.params["weight"]
        w[...] = he_normal(rng, w.shape, self.in_channels * self.kernel_size**2, w.dtype)
        if self.has_bias:
            self.params["bias"][...] = 0

    def forward(self, x):
        out, cols = ops.conv2d_forward(
            x, self.params["weight"], self.params.get("bias"), self.stride, self.padding,
            return_cols=True, as_aux=self.aux,
        )
        self._cache = (x, cols)
        return out

    def backward(self, grad):
        x, cols = self._cache
        gx, gw, gb = ops.conv2d_backward(
            x, self.params["weight"], grad, self.stride, self.padding, cols=cols, has_bias=self.has_bias
        )
        self.grads["weight"] = gw
        if self.has_bias:
            self.grads["bias"] = gb
        return gx


class DepthwiseConv2d(Module):
    def __init__(self, channels, kernel_size, stride=1, padding=None, bias=False, dtype=None):
        super().__init__()
        dtype = resolve_dtype(dtype)
        self.channels = channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = (kernel_size - 1) // 2 if padding is None else padding
        self.params["weight"] = np.zeros((channels, 1, kernel_size, kernel_size), dtype)
        if bias:
            self.params["bias"] = np.zeros(channels, dtype)

    @property
    def has_bias(self):
        return "bias" in self.params

    def _init(self, rng):
        w = self.params["weight"]
        w[...] = he_normal(rng, w.shape, self.kernel_size**2, w.dtype)
        if self.has_bias:
            self.params["bias"][...] = 0

    def forward(self, x):
        self._x = x
        out = ops.depthwise_conv2d_forward(x, self.params["weight"], self.stride, self.padding)
        if self.has_bias:
            out += self.params["bias"][None, :, None, None]
        return out

    def backward(self, grad):
        gx, gw = ops.depthwise_conv2d_backward(self._x, self.params["weight"], grad, self.stride, self.padding)
        self.grads["weight"] = gw
        if self.has_bias:
            self.grads["bias"] = grad.sum(axis=(0, 2, 3))
        return gx


class BatchNorm2d(Module):
    def __init__(self, channels, eps=ops.BN_EPS, momentum=ops.BN_MOMENTUM, dtype=None):
        super().__init__()
        dtype = resolve_dtype(dtype)
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype)
        self.params["beta"] = np.zeros(channels, dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype)
        self.buffers["running_var"] = np.ones(channels, dtype)

    def _init(self, rng):
        self.params["gamma"][...] = 1
        self.params["beta"][...] = 0
        self.buffers["running_mean"][...] = 0
        self.buffers["running_var"][...] = 1

    def forward(self, x):
        out, self._cache = ops.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            self.training, self.momentum, self.eps,
        )
        return out

    def backward(self, grad):
        gx, gg, gb = ops.batchnorm_backward(grad, self._cache)
        self.grads["gamma"] = gg
        self.grads["beta"] = gb
        return gx


class ReLU(Module):
    def forward(self, x):
        self._x = x
        return ops.relu_forward(x)

    def backward(self, grad):
        return ops.relu_backward(self._x, grad)


class AvgPool2d(Module):
    """Windowed average pooling; ``kernel_size=None`` pools over the whole map."""

    def __init__(self, kernel_size=None, stride=None):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride

    def forward(self, x):
        self._shape = x.shape
        return ops.avgpool_forward(x, self.kernel_size, self.stride)

    def backward(self, grad):
        return ops.avgpool_backward(self._shape, grad, self.kernel_size, self.stride)


class Flatten(Module):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, dtype=None, aux=False):
        super().__init__()
        dtype = resolve_dtype(dtype)
        self.in_features = in_features
        self.out_features = out_features
        self.aux = aux
        self.params["weight"] = np.zeros((out_features, in_features), dtype)
        if bias:
            self.params["bias"] = np.zeros(out_features, dtype)

    @property
    def has_bias(self):
        return "bias" in self.params

    def _init(self, rng):
        w = self.params["weight"]
        w[...] = he_normal(rng, w.shape, self.in_features, w.dtype)
        if self.has_bias:
            self.params["bias"][...] = 0

    def forward(self, x):
        self._x = x
        return ops.fc_forward(x, self.params["weight"], self.params.get("bias"), as_aux=self.aux)

    def backward(self, grad):
        gx, gw, gb = ops.fc_backward(self._x, self.params["weight"], grad, self.has_bias)
        self.grads["weight"] = gw
        if self.has_bias:
            self.grads["bias"] = gb
        return gx


class Sequential(Module):
    def __init__(self, layers=()):
        super().__init__()
        for layer in layers:
            self.append(layer)

    def append(self, layer):
        return self.add_child(str(len(self._children)), layer)

    def __len__(self):
        return len(self._children)

    def __getitem__(self, i):
        return self._children[i][1]

    def __iter__(self):
        return (m for _, m in self._children)

    def forward(self, x):
        for m in self:
            x = m.forward(x)
        return x

    def backward(self, grad):
        for m in reversed(self._children):
            grad = m[1].backward(grad)
        return grad
