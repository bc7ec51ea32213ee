"""Differentiable primitives on ``(N, C, H, W)`` arrays.

Forward functions are pure apart from batch-norm running statistics, which
are updated in place in training mode. Backward functions return gradients
of a scalar loss given the gradient of the loss with respect to the output.

Multiply-accumulates executed inside these functions are reported to any
active :func:`count_ops` context; that is how the cost model cross-checks
its symbolic counts against what a forward pass really does.
"""
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ShapeError
from .tensor import check_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class OpCounter:
    def __init__(self):
        self.mac = 0
        self.aux = 0


_active_counters = []


@contextmanager
def count_ops():
    """Tally MACs (conv/FC) and auxiliary element ops inside the block."""
    counter = OpCounter()
    _active_counters.append(counter)
    try:
        yield counter
    finally:
        _active_counters.remove(counter)


def tally(mac=0, aux=0):
    for c in _active_counters:
        c.mac += int(mac)
        c.aux += int(aux)


def counting():
    return bool(_active_counters)


def conv_output_size(size, k, stride, padding):
    """Output length along one spatial axis, floor convention."""
    if stride < 1 or padding < 0 or k < 1:
        raise ShapeError(f"invalid conv geometry k={k} stride={stride} padding={padding}")
    span = size + 2 * padding - k
    if span < 0:
        raise ShapeError(f"kernel {k} larger than padded input {size + 2 * padding}")
    return span // stride + 1


def _pad(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _unpad(xp, padding):
    if padding == 0:
        return xp
    return np.ascontiguousarray(xp[:, :, padding:-padding, padding:-padding])


# -- ordinary convolution ---------------------------------------------------

def conv2d_forward(x, weight, bias=None, stride=1, padding=0, return_cols=False, as_aux=False):
    """Cross-correlate ``x`` with ``weight`` of shape ``(n, c, k, k)``."""
    check_tensor(x)
    n_out, c, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"only square kernels are supported, got {k}x{k2}")
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, conv expects {c}")
    if bias is not None and bias.shape != (n_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {n_out} filters")
    batch, _, h, w = x.shape
    oh = conv_output_size(h, k, stride, padding)
    ow = conv_output_size(w, k, stride, padding)
    xp = _pad(x, padding)
    cols = kernels.im2col(xp, k, stride, oh, ow)
    out = np.matmul(weight.reshape(n_out, c * k * k), cols)
    if bias is not None:
        out += bias[None, :, None]
    out = out.reshape(batch, n_out, oh, ow)
    macs = batch * n_out * oh * ow * c * k * k
    if as_aux:
        tally(aux=macs)
    else:
        tally(mac=macs)
    if return_cols:
        return out, cols
    return out


def conv2d_backward(x, weight, grad_out, stride=1, padding=0, cols=None, has_bias=True):
    """Return ``(grad_input, grad_weight, grad_bias)``; ``grad_bias`` is None without bias."""
    n_out, c, k, _ = weight.shape
    batch, _, h, w = x.shape
    oh = conv_output_size(h, k, stride, padding)
    ow = conv_output_size(w, k, stride, padding)
    if grad_out.shape != (batch, n_out, oh, ow):
        raise ShapeError(f"grad_output shape {grad_out.shape} != forward output {(batch, n_out, oh, ow)}")
    if cols is None:
        cols = kernels.im2col(_pad(x, padding), k, stride, oh, ow)
    g = grad_out.reshape(batch, n_out, oh * ow)
    grad_w = np.einsum("bnp,bkp->nk", g, cols, optimize=True).reshape(weight.shape)
    grad_cols = np.matmul(weight.reshape(n_out, c * k * k).T, g)
    grad_xp = kernels.col2im(np.ascontiguousarray(grad_cols), c, h + 2 * padding, w + 2 * padding, k, stride, oh, ow)
    grad_b = g.sum(axis=(0, 2)) if has_bias else None
    return _unpad(grad_xp, padding), grad_w.astype(weight.dtype, copy=False), grad_b


# -- depthwise convolution --------------------------------------------------

def depthwise_conv2d_forward(x, weight, stride=1, padding=0):
    """Per-channel convolution with ``weight`` of shape ``(C, 1, k, k)``."""
    check_tensor(x)
    c, one, k, k2 = weight.shape
    if one != 1 or k != k2:
        raise ShapeError(f"depthwise weight must be (C, 1, k, k), got {weight.shape}")
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, depthwise layer has {c}")
    batch, _, h, w = x.shape
    oh = conv_output_size(h, k, stride, padding)
    ow = conv_output_size(w, k, stride, padding)
    w3 = np.ascontiguousarray(weight.reshape(c, k, k))
    out = kernels.depthwise_forward(_pad(x, padding), w3, stride, oh, ow)
    tally(mac=batch * c * oh * ow * k * k)
    return out


def depthwise_conv2d_backward(x, weight, grad_out, stride=1, padding=0):
    """Return ``(grad_input, grad_weight)``."""
    c, _, k, _ = weight.shape
    batch, _, h, w = x.shape
    oh = conv_output_size(h, k, stride, padding)
    ow = conv_output_size(w, k, stride, padding)
    if grad_out.shape != (batch, c, oh, ow):
        raise ShapeError(f"grad_output shape {grad_out.shape} != forward output {(batch, c, oh, ow)}")
    w3 = np.ascontiguousarray(weight.reshape(c, k, k))
    gxp, gw = kernels.depthwise_backward(_pad(x, padding), w3, np.ascontiguousarray(grad_out), stride)
    return _unpad(gxp, padding), gw.reshape(weight.shape)


# -- batch normalization ------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train,
                      momentum=BN_MOMENTUM, eps=BN_EPS):
    """Normalize per channel. Returns ``(out, cache)``.

    In training mode batch statistics are used and the running buffers are
    updated in place (``running = momentum * running + (1 - momentum) * batch``,
    unbiased variance).
    """
    check_tensor(x, gamma.shape[0])
    bshape = (1, -1, 1, 1)
    if train:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise ShapeError("batch norm in training mode needs batch*h*w >= 2 per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var * (count / (count - 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    tally(aux=x.size)
    return out.astype(x.dtype, copy=False), (xhat, inv_std, gamma, train)


def batchnorm_backward(grad_out, cache):
    """Return ``(grad_input, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, train = cache
    bshape = (1, -1, 1, 1)
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    gxhat = grad_out * gamma.reshape(bshape)
    if train:
        m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
        gx = (inv_std.reshape(bshape) / m) * (
            m * gxhat
            - gxhat.sum(axis=(0, 2, 3)).reshape(bshape)
            - xhat * (gxhat * xhat).sum(axis=(0, 2, 3)).reshape(bshape)
        )
    else:
        gx = gxhat * inv_std.reshape(bshape)
    return gx.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


# -- pointwise nonlinearities ---------------------------------------------------

def relu_forward(x):
    tally(aux=x.size)
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)


def hardsigmoid_forward(x):
    tally(aux=x.size)
    return np.clip(x / 6.0 + 0.5, 0.0, 1.0).astype(x.dtype, copy=False)


def hardsigmoid_backward(x, grad_out):
    return grad_out * ((x > -3.0) & (x < 3.0)) / 6.0


def sigmoid_forward(x):
    tally(aux=x.size)
    return (1.0 / (1.0 + np.exp(-x))).astype(x.dtype, copy=False)


def sigmoid_backward(x, grad_out):
    s = 1.0 / (1.0 + np.exp(-x))
    return grad_out * s * (1.0 - s)


# -- pooling ------------------------------------------------------------------

def avgpool_forward(x, kernel=None, stride=None):
    """Average pooling without padding; ``kernel=None`` pools globally."""
    check_tensor(x)
    n, c, h, w = x.shape
    tally(aux=x.size)
    if kernel is None:
        return x.mean(axis=(2, 3), keepdims=True)
    stride = stride or kernel
    oh = conv_output_size(h, kernel, stride, 0)
    ow = conv_output_size(w, kernel, stride, 0)
    out = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            out += x[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride]
    return out / (kernel * kernel)


def avgpool_backward(x_shape, grad_out, kernel=None, stride=None):
    n, c, h, w = x_shape
    if kernel is None:
        return np.broadcast_to(grad_out / (h * w), x_shape).astype(grad_out.dtype, copy=True)
    stride = stride or kernel
    oh, ow = grad_out.shape[2:]
    gx = np.zeros(x_shape, dtype=grad_out.dtype)
    g = grad_out / (kernel * kernel)
    for i in range(kernel):
        for j in range(kernel):
            gx[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += g
    return gx


# -- fully connected and loss -----------------------------------------------

def fc_forward(x, weight, bias=None, as_aux=False):
    """``x @ weight.T + bias`` for ``x`` of shape ``(N, F)``."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"fc expects (N, {weight.shape[1]}) input, got {x.shape}")
    out = x @ weight.T
    if bias is not None:
        out += bias
    macs = x.shape[0] * weight.shape[0] * weight.shape[1]
    if as_aux:
        tally(aux=macs)
    else:
        tally(mac=macs)
    return out


def fc_backward(x, weight, grad_out, has_bias=True):
    grad_x = grad_out @ weight
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0) if has_bias else None
    return grad_x, grad_w, grad_b


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient with respect to ``logits``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} are incompatible")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError(f"label index out of range for {logits.shape[1]} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    z = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(z)
    n = logits.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()
    grad = exp / z
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(logits.dtype, copy=False)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
