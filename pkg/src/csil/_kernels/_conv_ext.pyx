# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stride-1 convolution and max-pool kernels (hot inner loops)."""

import numpy as np


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = h - kh + 1, wo = wd - kw + 1
    out = np.zeros((n, cout, ho, wo))
    cdef double[:, :, :, ::1] y = out
    cdef Py_ssize_t i, o, c, a, b, p, q
    cdef double wv
    for i in range(n):
        for o in range(cout):
            for c in range(cin):
                for a in range(kh):
                    for b in range(kw):
                        wv = w[o, c, a, b]
                        for p in range(ho):
                            for q in range(wo):
                                y[i, o, p, q] += x[i, c, p + a, q + b] * wv
    return out


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    gx_arr = np.zeros((n, cin, h, wd))
    gw_arr = np.zeros((cout, cin, kh, kw))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t i, o, c, a, b, p, q
    cdef double g, wv, acc
    for i in range(n):
        for o in range(cout):
            for c in range(cin):
                for a in range(kh):
                    for b in range(kw):
                        wv = w[o, c, a, b]
                        acc = 0.0
                        for p in range(ho):
                            for q in range(wo):
                                g = gy[i, o, p, q]
                                acc += g * x[i, c, p + a, q + b]
                                gx[i, c, p + a, q + b] += g * wv
                        gw[o, c, a, b] += acc
    return gx_arr, gw_arr


def maxpool2d_forward(double[:, :, :, ::1] x, Py_ssize_t k):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ho = h // k, wo = wd // k
    y_arr = np.empty((n, c, ho, wo))
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef long long[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t i, ch, p, q, a, b, br, bc
    cdef double best, v
    for i in range(n):
        for ch in range(c):
            for p in range(ho):
                for q in range(wo):
                    best = x[i, ch, p * k, q * k]
                    br = p * k
                    bc = q * k
                    for a in range(k):
                        for b in range(k):
                            v = x[i, ch, p * k + a, q * k + b]
                            if v > best:
                                best = v
                                br = p * k + a
                                bc = q * k + b
                    y[i, ch, p, q] = best
                    idx[i, ch, p, q] = br * wd + bc
    return y_arr, idx_arr


def maxpool2d_backward(double[:, :, :, ::1] gy, long long[:, :, :, ::1] idx, x_shape):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], wd = x_shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    gx_arr = np.zeros((n, c, h * wd))
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t i, ch, p, q
    for i in range(n):
        for ch in range(c):
            for p in range(ho):
                for q in range(wo):
                    gx[i, ch, idx[i, ch, p, q]] += gy[i, ch, p, q]
    return gx_arr.reshape(n, c, h, wd)
