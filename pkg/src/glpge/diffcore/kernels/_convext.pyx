# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled direct-convolution kernels.

Each output row is written by exactly one thread and inner accumulation
order never depends on the thread count, so results are bit-identical to a
sequential run. Kernels are generated for float32 and float64 via fused
types; float32 accumulates in float32 to match the training precision of
the NumPy fallback.
"""

from cython.parallel import prange

ctypedef fused floating:
    float
    double


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   floating[::1] b, floating[:, :, :, ::1] out,
                   int stride, int pad, int threads):
    cdef Py_ssize_t N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = out.shape[2], Wo = out.shape[3]
    cdef Py_ssize_t rows = N * Co * Ho
    cdef Py_ssize_t idx, n, co, ho, ci, i, j, wo, hi, wbase
    cdef floating wv

    for idx in prange(rows, nogil=True, num_threads=threads, schedule='static'):
        n = idx / (Co * Ho)
        co = (idx / Ho) % Co
        ho = idx % Ho
        for wo in range(Wo):
            out[n, co, ho, wo] = b[co]
        for ci in range(Ci):
            for i in range(kh):
                hi = ho * stride + i - pad
                if hi < 0 or hi >= H:
                    continue
                for j in range(kw):
                    wv = w[co, ci, i, j]
                    wbase = j - pad
                    for wo in range(Wo):
                        if wbase >= 0 and wbase < W:
                            out[n, co, ho, wo] = out[n, co, ho, wo] + wv * x[n, ci, hi, wbase]
                        wbase = wbase + stride


def conv2d_backward_input(floating[:, :, :, ::1] dy, floating[:, :, :, ::1] w,
                          floating[:, :, :, ::1] dx, int stride, int pad,
                          int threads):
    cdef Py_ssize_t N = dx.shape[0], Ci = dx.shape[1], H = dx.shape[2], W = dx.shape[3]
    cdef Py_ssize_t Co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = dy.shape[2], Wo = dy.shape[3]
    cdef Py_ssize_t rows = N * Ci * H
    cdef Py_ssize_t idx, n, ci, hi, co, i, j, wo, ho, wi
    cdef floating acc, wv
    cdef Py_ssize_t num

    # dx[n,ci,hi,wi] = sum over (co,i,j,ho,wo) with hi = ho*stride + i - pad
    for idx in prange(rows, nogil=True, num_threads=threads, schedule='static'):
        n = idx / (Ci * H)
        ci = (idx / H) % Ci
        hi = idx % H
        for wi in range(W):
            acc = 0
            for co in range(Co):
                for i in range(kh):
                    num = hi + pad - i
                    if num < 0 or num % stride != 0:
                        continue
                    ho = num / stride
                    if ho >= Ho:
                        continue
                    for j in range(kw):
                        num = wi + pad - j
                        if num < 0 or num % stride != 0:
                            continue
                        wo = num / stride
                        if wo >= Wo:
                            continue
                        acc = acc + dy[n, co, ho, wo] * w[co, ci, i, j]
            dx[n, ci, hi, wi] = acc


def conv2d_backward_weight(floating[:, :, :, ::1] dy, floating[:, :, :, ::1] x,
                           floating[:, :, :, ::1] dw, int stride, int pad,
                           int threads):
    cdef Py_ssize_t N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Co = dw.shape[0], kh = dw.shape[2], kw = dw.shape[3]
    cdef Py_ssize_t Ho = dy.shape[2], Wo = dy.shape[3]
    cdef Py_ssize_t pairs = Co * Ci
    cdef Py_ssize_t idx, co, ci, i, j, n, ho, wo, hi, wi
    cdef floating acc

    for idx in prange(pairs, nogil=True, num_threads=threads, schedule='static'):
        co = idx / Ci
        ci = idx % Ci
        for i in range(kh):
            for j in range(kw):
                acc = 0
                for n in range(N):
                    for ho in range(Ho):
                        hi = ho * stride + i - pad
                        if hi < 0 or hi >= H:
                            continue
                        for wo in range(Wo):
                            wi = wo * stride + j - pad
                            if wi < 0 or wi >= W:
                                continue
                            acc = acc + dy[n, co, ho, wo] * x[n, ci, hi, wi]
                dw[co, ci, i, j] = acc
