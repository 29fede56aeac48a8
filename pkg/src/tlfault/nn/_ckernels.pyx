# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution, pooling and Adam kernels.

Same contracts as ``_kernels_py``. Reductions run in a fixed loop order, so
results are deterministic for a given input.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, double[::1] b):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t F = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t Ho = H - K + 1, Wo = W - K + 1
    out = np.empty((N, F, Ho, Wo))
    cdef double[:, :, :, ::1] y = out
    cdef Py_ssize_t n, f, i, j, c, ki, kj
    cdef double acc
    with nogil:
        for n in range(N):
            for f in range(F):
                for i in range(Ho):
                    for j in range(Wo):
                        acc = b[f]
                        for c in range(C):
                            for ki in range(K):
                                for kj in range(K):
                                    acc = acc + x[n, c, i + ki, j + kj] * w[f, c, ki, kj]
                        y[n, f, i, j] = acc
    return out


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, double[:, :, :, ::1] dy, bint need_dx=True):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t F = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t Ho = dy.shape[2], Wo = dy.shape[3]
    dw_arr = np.zeros((F, C, K, K))
    db_arr = np.zeros(F)
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, :, :, ::1] dx
    dx_arr = None
    if need_dx:
        dx_arr = np.zeros((N, C, H, W))
        dx = dx_arr
    cdef Py_ssize_t n, f, i, j, c, ki, kj
    cdef double g
    with nogil:
        for n in range(N):
            for f in range(F):
                for i in range(Ho):
                    for j in range(Wo):
                        g = dy[n, f, i, j]
                        db[f] += g
                        for c in range(C):
                            for ki in range(K):
                                for kj in range(K):
                                    dw[f, c, ki, kj] += g * x[n, c, i + ki, j + kj]
                                    if need_dx:
                                        dx[n, c, i + ki, j + kj] += g * w[f, c, ki, kj]
    return dx_arr, dw_arr, db_arr


def avgpool_forward(double[:, :, :, ::1] x, Py_ssize_t size, Py_ssize_t stride):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H - size) // stride + 1, Wo = (W - size) // stride + 1
    out = np.empty((N, C, Ho, Wo))
    cdef double[:, :, :, ::1] y = out
    cdef double inv = 1.0 / (size * size)
    cdef Py_ssize_t n, c, i, j, a, bb
    cdef double acc
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        acc = 0.0
                        for a in range(size):
                            for bb in range(size):
                                acc = acc + x[n, c, i * stride + a, j * stride + bb]
                        y[n, c, i, j] = acc * inv
    return out


def avgpool_backward(double[:, :, :, ::1] dy, tuple x_shape, Py_ssize_t size, Py_ssize_t stride):
    cdef Py_ssize_t N = dy.shape[0], C = dy.shape[1], Ho = dy.shape[2], Wo = dy.shape[3]
    dx_arr = np.zeros(x_shape)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double inv = 1.0 / (size * size)
    cdef Py_ssize_t n, c, i, j, a, bb
    cdef double g
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        g = dy[n, c, i, j] * inv
                        for a in range(size):
                            for bb in range(size):
                                dx[n, c, i * stride + a, j * stride + bb] += g
    return dx_arr


def adam_update(double[::1] theta, double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, double bc1, double bc2):
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double gi
    with nogil:
        for i in range(n):
            gi = g[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
            theta[i] = theta[i] - lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
