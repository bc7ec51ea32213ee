"""Pure numpy implementations of the convolution inner loops.

Used when the compiled ``_ckernels`` extension is unavailable or when
``GHOSTCONV_PURE_PYTHON`` is set. Every function here has a twin in
``_ckernels.pyx`` with the same signature and the same accumulation order
per output element.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride, oh, ow):
    """Unfold a padded ``(N, C, Hp, Wp)`` batch into ``(N, C*k*k, oh*ow)`` columns."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (oh - 1) + 1 : stride, : stride * (ow - 1) + 1 : stride]
    # (N, C, oh, ow, k, k) -> (N, C, k, k, oh, ow)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, oh * ow)


def col2im(cols, c, hp, wp, k, stride, oh, ow):
    n = cols.shape[0]
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, oh, ow)
    hs = stride * (oh - 1) + 1
    ws = stride * (ow - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + hs : stride, j : j + ws : stride] += cols[:, :, i, j]
    return out


def depthwise_forward(xp, w, stride, oh, ow):
    """Per-channel cross-correlation of a padded batch with ``w`` of shape ``(C, k, k)``."""
    n, c = xp.shape[:2]
    k = w.shape[1]
    out = np.zeros((n, c, oh, ow), dtype=xp.dtype)
    hs = stride * (oh - 1) + 1
    ws = stride * (ow - 1) + 1
    for i in range(k):
        for j in range(k):
            out += w[:, i, j][None, :, None, None] * xp[:, :, i : i + hs : stride, j : j + ws : stride]
    return out


def depthwise_backward(xp, w, grad_out, stride):
    """Return ``(grad_xp, grad_w)`` for :func:`depthwise_forward`."""
    k = w.shape[1]
    oh, ow = grad_out.shape[2:]
    hs = stride * (oh - 1) + 1
    ws = stride * (ow - 1) + 1
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(w)
    for i in range(k):
        for j in range(k):
            sl = (slice(None), slice(None), slice(i, i + hs, stride), slice(j, j + ws, stride))
            grad_w[:, i, j] = (grad_out * xp[sl]).sum(axis=(0, 2, 3))
            grad_xp[sl] += w[:, i, j][None, :, None, None] * grad_out
    return grad_xp, grad_w
