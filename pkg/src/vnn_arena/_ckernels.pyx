# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense kernels.

Summation runs index-ascending starting from +0.0 with the bias added last,
exactly like the numpy fallback in ``_pykernels``; the extension is built with
``-ffp-contract=off`` so no fused multiply-add changes the rounding.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def dense_forward(const double[:, ::1] X, const double[:, ::1] W, const double[::1] b):
    cdef Py_ssize_t B = X.shape[0], n = X.shape[1], m = W.shape[0]
    cdef Py_ssize_t r, i, j
    cdef double acc
    if W.shape[1] != n or b.shape[0] != m:
        raise ValueError("dense_forward: shape mismatch")
    out = np.empty((B, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(B):
            for i in range(m):
                acc = 0.0
                for j in range(n):
                    acc = acc + W[i, j] * X[r, j]
                o[r, i] = acc + b[i]
    return out


def dense_interval(const double[:, ::1] L, const double[:, ::1] U,
                   const double[:, ::1] W, const double[::1] b):
    cdef Py_ssize_t B = L.shape[0], n = L.shape[1], m = W.shape[0]
    cdef Py_ssize_t r, i, j
    cdef double lo, hi, w
    if U.shape[0] != B or U.shape[1] != n or W.shape[1] != n or b.shape[0] != m:
        raise ValueError("dense_interval: shape mismatch")
    out_l = np.empty((B, m), dtype=np.float64)
    out_u = np.empty((B, m), dtype=np.float64)
    cdef double[:, ::1] ol = out_l
    cdef double[:, ::1] ou = out_u
    with nogil:
        for r in range(B):
            for i in range(m):
                lo = 0.0
                hi = 0.0
                for j in range(n):
                    w = W[i, j]
                    if w >= 0.0:
                        lo = lo + w * L[r, j]
                        hi = hi + w * U[r, j]
                    else:
                        lo = lo + w * U[r, j]
                        hi = hi + w * L[r, j]
                ol[r, i] = lo + b[i]
                ou[r, i] = hi + b[i]
    return out_l, out_u
