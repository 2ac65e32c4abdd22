# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Loop order is fixed, so results are reproducible."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _ipow(double x, int k) nogil:
    cdef double r = 1.0
    while k > 0:
        if k & 1:
            r *= x
        x *= x
        k >>= 1
    return r


def gram_power_sum(const double[::1] ca, const double[:, ::1] va,
                   const double[::1] cb, const double[:, ::1] vb, int k):
    """Return sum_ij ca[i] cb[j] (va[i] . vb[j])**k."""
    cdef Py_ssize_t ra = va.shape[0], rb = vb.shape[0], w = va.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double total = 0.0, row, dot
    with nogil:
        for i in range(ra):
            row = 0.0
            for j in range(rb):
                dot = 0.0
                for l in range(w):
                    dot = dot + va[i, l] * vb[j, l]
                row = row + cb[j] * _ipow(dot, k)
            total = total + ca[i] * row
    return total


def batch_apply(const double[:, ::1] v, const double[:, ::1] a,
                const cnp.int64_t[:, ::1] batches, double step):
    """out[b, t] = v[t] - step * sum_{j in batches[b]} (a[j] . v[t]) a[j]."""
    cdef Py_ssize_t nb = batches.shape[0], bsz = batches.shape[1]
    cdef Py_ssize_t r = v.shape[0], w = v.shape[1]
    cdef Py_ssize_t b, t, j, l, idx
    cdef double proj
    out_arr = np.empty((nb, r, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for b in range(nb):
            for t in range(r):
                for l in range(w):
                    out[b, t, l] = v[t, l]
                for j in range(bsz):
                    idx = batches[b, j]
                    proj = 0.0
                    for l in range(w):
                        proj = proj + a[idx, l] * v[t, l]
                    proj = step * proj
                    for l in range(w):
                        out[b, t, l] = out[b, t, l] - proj * a[idx, l]
    return out_arr


def rowwise_apply(const double[:, ::1] v, const double[:, ::1] a,
                  const cnp.int64_t[:, ::1] batches, double step):
    """out[t] = v[t] - step * sum_{j in batches[t]} (a[j] . v[t]) a[j]."""
    cdef Py_ssize_t r = v.shape[0], w = v.shape[1], bsz = batches.shape[1]
    cdef Py_ssize_t t, j, l, idx
    cdef double proj
    out_arr = np.empty((r, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for t in range(r):
            for l in range(w):
                out[t, l] = v[t, l]
            for j in range(bsz):
                idx = batches[t, j]
                proj = 0.0
                for l in range(w):
                    proj = proj + a[idx, l] * v[t, l]
                proj = step * proj
                for l in range(w):
                    out[t, l] = out[t, l] - proj * a[idx, l]
    return out_arr
