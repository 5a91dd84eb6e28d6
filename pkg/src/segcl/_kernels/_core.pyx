# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: stride-1 'same' conv2d, 2x2 max pool, 2x2 nearest upsample.

All loops are gather-form and single-threaded: fixed summation order, so
results are deterministic run-to-run.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w):
    cdef Py_ssize_t N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ph = (kh - 1) // 2, pw = (kw - 1) // 2
    out_arr = np.zeros((N, Cout, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, co, ci, y, xx, i, j, yy, shift, x0, x1
    cdef double wv
    cdef double *po
    cdef const double *px
    # accumulate one shifted row per (kernel tap, input channel): the inner
    # loop is a contiguous axpy the compiler can vectorize
    for n in range(N):
        for co in range(Cout):
            for ci in range(Cin):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[co, ci, i, j]
                        shift = j - pw
                        x0 = 0 if shift >= 0 else -shift
                        x1 = W if shift <= 0 else W - shift
                        for y in range(H):
                            yy = y + i - ph
                            if yy < 0 or yy >= H:
                                continue
                            po = &out[n, co, y, 0]
                            px = &x[n, ci, yy, 0]
                            for xx in range(x0, x1):
                                po[xx] += wv * px[xx + shift]
    return out_arr


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] dout):
    cdef Py_ssize_t N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ph = (kh - 1) // 2, pw = (kw - 1) // 2
    dx_arr = np.zeros((N, Cin, H, W), dtype=np.float64)
    dw_arr = np.zeros((Cout, Cin, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t n, co, ci, y, xx, i, j, u, yy, shift, x0, x1
    cdef double wv, acc
    cdef double *pd
    cdef const double *pg
    cdef const double *pxr

    # dx[u, v] += w[co, ci, i, j] * dout[n, co, u + ph - i, v + pw - j]
    for n in range(N):
        for ci in range(Cin):
            for co in range(Cout):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[co, ci, i, j]
                        shift = pw - j
                        x0 = 0 if shift >= 0 else -shift
                        x1 = W if shift <= 0 else W - shift
                        for u in range(H):
                            yy = u + ph - i
                            if yy < 0 or yy >= H:
                                continue
                            pd = &dx[n, ci, u, 0]
                            pg = &dout[n, co, yy, 0]
                            for xx in range(x0, x1):
                                pd[xx] += wv * pg[xx + shift]

    # dw[co, ci, i, j] reduces dout rows against shifted x rows
    for co in range(Cout):
        for ci in range(Cin):
            for i in range(kh):
                for j in range(kw):
                    shift = j - pw
                    x0 = 0 if shift >= 0 else -shift
                    x1 = W if shift <= 0 else W - shift
                    acc = 0.0
                    for n in range(N):
                        for y in range(H):
                            yy = y + i - ph
                            if yy < 0 or yy >= H:
                                continue
                            pg = &dout[n, co, y, 0]
                            pxr = &x[n, ci, yy, 0]
                            for xx in range(x0, x1):
                                acc += pg[xx] * pxr[xx + shift]
                    dw[co, ci, i, j] = acc
    return dx_arr, dw_arr


def maxpool2x2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H // 2, Wo = W // 2
    out_arr = np.empty((N, C, Ho, Wo), dtype=np.float64)
    arg_arr = np.empty((N, C, Ho, Wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, c, y, xx, best_k
    cdef double v, best
    for n in range(N):
        for c in range(C):
            for y in range(Ho):
                for xx in range(Wo):
                    best = x[n, c, 2 * y, 2 * xx]
                    best_k = 0
                    # row-major window scan; strict > keeps the first max
                    v = x[n, c, 2 * y, 2 * xx + 1]
                    if v > best:
                        best = v; best_k = 1
                    v = x[n, c, 2 * y + 1, 2 * xx]
                    if v > best:
                        best = v; best_k = 2
                    v = x[n, c, 2 * y + 1, 2 * xx + 1]
                    if v > best:
                        best = v; best_k = 3
                    out[n, c, y, xx] = best
                    arg[n, c, y, xx] = best_k
    return out_arr, arg_arr


def maxpool2x2_backward(double[:, :, :, ::1] dout, long long[:, :, :, ::1] arg):
    cdef Py_ssize_t N = dout.shape[0], C = dout.shape[1], Ho = dout.shape[2], Wo = dout.shape[3]
    dx_arr = np.zeros((N, C, Ho * 2, Wo * 2), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, y, xx, k
    for n in range(N):
        for c in range(C):
            for y in range(Ho):
                for xx in range(Wo):
                    k = arg[n, c, y, xx]
                    dx[n, c, 2 * y + k // 2, 2 * xx + k % 2] = dout[n, c, y, xx]
    return dx_arr


def upsample2x2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    out_arr = np.empty((N, C, H * 2, W * 2), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, y, xx
    cdef double v
    for n in range(N):
        for c in range(C):
            for y in range(H):
                for xx in range(W):
                    v = x[n, c, y, xx]
                    out[n, c, 2 * y, 2 * xx] = v
                    out[n, c, 2 * y, 2 * xx + 1] = v
                    out[n, c, 2 * y + 1, 2 * xx] = v
                    out[n, c, 2 * y + 1, 2 * xx + 1] = v
    return out_arr


def upsample2x2_backward(double[:, :, :, ::1] dout):
    cdef Py_ssize_t N = dout.shape[0], C = dout.shape[1], H = dout.shape[2] // 2, W = dout.shape[3] // 2
    dx_arr = np.empty((N, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, y, xx
    for n in range(N):
        for c in range(C):
            for y in range(H):
                for xx in range(W):
                    dx[n, c, y, xx] = (dout[n, c, 2 * y, 2 * xx]
                                       + dout[n, c, 2 * y, 2 * xx + 1]
                                       + dout[n, c, 2 * y + 1, 2 * xx]
                                       + dout[n, c, 2 * y + 1, 2 * xx + 1])
    return dx_arr
