# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im. Same layout and summation order as ``_conv_py``."""

import numpy as np

cimport cython

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _out(Py_ssize_t size, Py_ssize_t k, Py_ssize_t s, Py_ssize_t p) noexcept nogil:
    return (size + 2 * p - k) // s + 1


def _im2col(real[:, :, :, ::1] x, real[:, ::1] cols, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = _out(h, kh, stride, pad), wo = _out(w, kw, stride, pad)
    cdef Py_ssize_t ci, i, j, b, oy, ox, iy, ix, row, col
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    col = 0
                    for b in range(n):
                        for oy in range(ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                for ox in range(wo):
                                    cols[row, col] = 0
                                    col = col + 1
                                continue
                            for ox in range(wo):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= w:
                                    cols[row, col] = 0
                                else:
                                    cols[row, col] = x[b, ci, iy, ix]
                                col = col + 1


def _col2im(real[:, ::1] cols, real[:, :, :, ::1] dx, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = dx.shape[0], c = dx.shape[1], h = dx.shape[2], w = dx.shape[3]
    cdef Py_ssize_t ho = _out(h, kh, stride, pad), wo = _out(w, kw, stride, pad)
    cdef Py_ssize_t ci, i, j, b, oy, ox, iy, ix, row, col
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    col = 0
                    for b in range(n):
                        for oy in range(ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                col = col + wo
                                continue
                            for ox in range(wo):
                                ix = ox * stride + j - pad
                                if ix >= 0 and ix < w:
                                    dx[b, ci, iy, ix] += cols[row, col]
                                col = col + 1


def im2col(x, int kh, int kw, int stride, int pad):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((c * kh * kw, n * ho * wo), dtype=x.dtype)
    _im2col(x, cols, kh, kw, stride, pad)
    return cols


def col2im(cols, x_shape, int kh, int kw, int stride, int pad):
    cols = np.ascontiguousarray(cols)
    dx = np.zeros(tuple(x_shape), dtype=cols.dtype)
    _col2im(cols, dx, kh, kw, stride, pad)
    return dx
