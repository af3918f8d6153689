# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels; signature-compatible with semlink.kernels._numpy."""

import numpy as np

from libc.math cimport tanh


def conv2d_valid(const double[:, :, ::1] x, const double[:, :, :, ::1] k):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t F = k.shape[0], KH = k.shape[2], KW = k.shape[3]
    cdef Py_ssize_t OH = H - KH + 1, OW = W - KW + 1
    out_arr = np.zeros((F, OH, OW))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t f, c, a, b, i, j
    cdef double acc
    for f in range(F):
        for a in range(OH):
            for b in range(OW):
                acc = 0.0
                for c in range(C):
                    for i in range(KH):
                        for j in range(KW):
                            acc += k[f, c, i, j] * x[c, a + i, b + j]
                out[f, a, b] = acc
    return out_arr


def conv2d_valid_vjp(const double[:, :, ::1] g, const double[:, :, :, ::1] k):
    cdef Py_ssize_t F = g.shape[0], OH = g.shape[1], OW = g.shape[2]
    cdef Py_ssize_t C = k.shape[1], KH = k.shape[2], KW = k.shape[3]
    cdef Py_ssize_t H = OH + KH - 1, W = OW + KW - 1
    gx_arr = np.zeros((C, H, W))
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t f, c, a, b, i, j
    cdef double gv
    for f in range(F):
        for a in range(OH):
            for b in range(OW):
                gv = g[f, a, b]
                for c in range(C):
                    for i in range(KH):
                        for j in range(KW):
                            gx[c, a + i, b + j] += k[f, c, i, j] * gv
    return gx_arr


def avgpool2(const double[:, :, ::1] x):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t H2 = H // 2, W2 = W // 2
    out_arr = np.zeros((C, H2, W2))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, a, b
    for c in range(C):
        for a in range(H2):
            for b in range(W2):
                out[c, a, b] = 0.25 * (x[c, 2 * a, 2 * b] + x[c, 2 * a, 2 * b + 1]
                                       + x[c, 2 * a + 1, 2 * b] + x[c, 2 * a + 1, 2 * b + 1])
    return out_arr


def avgpool2_vjp(const double[:, :, ::1] g, in_shape):
    cdef Py_ssize_t C = in_shape[0], H = in_shape[1], W = in_shape[2]
    cdef Py_ssize_t H2 = g.shape[1], W2 = g.shape[2]
    gx_arr = np.zeros((C, H, W))
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t c, a, b
    cdef double q
    for c in range(C):
        for a in range(H2):
            for b in range(W2):
                q = 0.25 * g[c, a, b]
                gx[c, 2 * a, 2 * b] = q
                gx[c, 2 * a, 2 * b + 1] = q
                gx[c, 2 * a + 1, 2 * b] = q
                gx[c, 2 * a + 1, 2 * b + 1] = q
    return gx_arr


def dense2_forward(const double[::1] y, const double[:, ::1] w1, const double[::1] b1,
                   const double[:, ::1] w2, const double[::1] b2):
    cdef Py_ssize_t N = y.shape[0], HD = w1.shape[0], M = w2.shape[0]
    hidden_arr = np.empty(HD)
    out_arr = np.empty(M)
    cdef double[::1] hidden = hidden_arr
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef double acc
    for r in range(HD):
        acc = b1[r]
        for c in range(N):
            acc += w1[r, c] * y[c]
        hidden[r] = tanh(acc)
    for r in range(M):
        acc = b2[r]
        for c in range(HD):
            acc += w2[r, c] * hidden[c]
        out[r] = acc
    return out_arr, hidden_arr


def dense2_vjp(const double[::1] cot, const double[::1] hidden, const double[:, ::1] w1,
               const double[:, ::1] w2):
    cdef Py_ssize_t N = w1.shape[1], HD = w1.shape[0], M = w2.shape[0]
    gh_arr = np.zeros(HD)
    gy_arr = np.zeros(N)
    cdef double[::1] gh = gh_arr
    cdef double[::1] gy = gy_arr
    cdef Py_ssize_t r, c
    cdef double acc
    for c in range(HD):
        acc = 0.0
        for r in range(M):
            acc += w2[r, c] * cot[r]
        gh[c] = acc * (1.0 - hidden[c] * hidden[c])
    for c in range(N):
        acc = 0.0
        for r in range(HD):
            acc += w1[r, c] * gh[r]
        gy[c] = acc
    return gy_arr
