# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution inner loops; same contracts as ``_pykernels``."""
import numpy as np

ctypedef fused real:
    float
    double


def im2col(const real[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c * k * k, oh * ow), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, x, row, col
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        col = 0
                        for y in range(oh):
                            for x in range(ow):
                                out[b, row, col] = xp[b, ch, y * stride + i, x * stride + j]
                                col += 1
    return out_arr


def col2im(const real[:, :, ::1] cols, Py_ssize_t c, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t k, Py_ssize_t stride, Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = cols.shape[0]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, x, row, col
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        col = 0
                        for y in range(oh):
                            for x in range(ow):
                                out[b, ch, y * stride + i, x * stride + j] += cols[b, row, col]
                                col += 1
    return out_arr


def depthwise_forward(const real[:, :, :, ::1] xp, const real[:, :, ::1] w, Py_ssize_t stride,
                      Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], k = w.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, oh, ow), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef real wv
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        wv = w[ch, i, j]
                        for y in range(oh):
                            for x in range(ow):
                                out[b, ch, y, x] += wv * xp[b, ch, y * stride + i, x * stride + j]
    return out_arr


def depthwise_backward(const real[:, :, :, ::1] xp, const real[:, :, ::1] w, const real[:, :, :, ::1] grad_out,
                       Py_ssize_t stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], k = w.shape[1]
    cdef Py_ssize_t oh = grad_out.shape[2], ow = grad_out.shape[3]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((n, c, xp.shape[2], xp.shape[3]), dtype=dtype)
    gw_arr = np.zeros((c, k, k), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef real[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef real wv, acc, g
    with nogil:
        for ch in range(c):
            for i in range(k):
                for j in range(k):
                    wv = w[ch, i, j]
                    acc = 0
                    for b in range(n):
                        for y in range(oh):
                            for x in range(ow):
                                g = grad_out[b, ch, y, x]
                                acc = acc + g * xp[b, ch, y * stride + i, x * stride + j]
                                gx[b, ch, y * stride + i, x * stride + j] += wv * g
                    gw[ch, i, j] = acc
    return gx_arr, gw_arr
