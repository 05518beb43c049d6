# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``hybridnet._fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def jacobi_eigh(double[:, ::1] a_in, double tol, int max_sweeps):
    """Cyclic Jacobi on a symmetric matrix; returns (diag, vectors, sweeps, off)."""
    cdef Py_ssize_t d = a_in.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a_arr = np.array(a_in, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] v_arr = np.eye(d, dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t p, q, k
    cdef int sweep = 0
    cdef double off, total, apq, theta, t, c, s, x, y
    total = 0.0
    for p in range(d):
        for q in range(d):
            total += a[p, q] * a[p, q]
    total = sqrt(total)
    while True:
        off = 0.0
        for p in range(d):
            for q in range(d):
                if p != q:
                    off += a[p, q] * a[p, q]
        off = sqrt(off)
        if off <= tol * total or sweep >= max_sweeps:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(d):
                    x = a[k, p]
                    y = a[k, q]
                    a[k, p] = c * x - s * y
                    a[k, q] = s * x + c * y
                for k in range(d):
                    x = a[p, k]
                    y = a[q, k]
                    a[p, k] = c * x - s * y
                    a[q, k] = s * x + c * y
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(d):
                    x = v[k, p]
                    y = v[k, q]
                    v[k, p] = c * x - s * y
                    v[k, q] = s * x + c * y
        sweep += 1
    return np.diagonal(a_arr).copy(), v_arr, sweep, off


def correlate_valid(double[:, :, ::1] img, double[:, :, :, ::1] kernels):
    """Valid-mode multichannel correlation: (C,M,N) x (L,C,kh,kw) -> (L,M-kh+1,N-kw+1)."""
    cdef Py_ssize_t C = img.shape[0], M = img.shape[1], N = img.shape[2]
    cdef Py_ssize_t L = kernels.shape[0], kh = kernels.shape[2], kw = kernels.shape[3]
    cdef Py_ssize_t om = M - kh + 1, on = N - kw + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out_arr = np.zeros((L, om, on), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t l, ch, i, j, u, w
    cdef double acc
    for l in range(L):
        for i in range(om):
            for j in range(on):
                acc = 0.0
                for ch in range(C):
                    for u in range(kh):
                        for w in range(kw):
                            acc = acc + img[ch, i + u, j + w] * kernels[l, ch, u, w]
                out[l, i, j] = acc
    return out_arr


def hash_bits(double[:, :, ::1] responses):
    """Pack sign bits: pixel = sum_l 2**l * [responses[l] > 0]."""
    cdef Py_ssize_t L = responses.shape[0], m = responses.shape[1], n = responses.shape[2]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out_arr = np.zeros((m, n), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t l, i, j
    cdef cnp.int64_t bit
    for l in range(L):
        bit = (<cnp.int64_t>1) << l
        for i in range(m):
            for j in range(n):
                if responses[l, i, j] > 0.0:
                    out[i, j] += bit
    return out_arr


def block_hist(cnp.int64_t[:, ::1] hashed, Py_ssize_t bins, Py_ssize_t bh, Py_ssize_t bw,
               Py_ssize_t sh, Py_ssize_t sw):
    """Per-block value counts, blocks row-major: returns (B, bins) int64."""
    cdef Py_ssize_t m = hashed.shape[0], n = hashed.shape[1]
    cdef Py_ssize_t nby = (m - bh) // sh + 1, nbx = (n - bw) // sw + 1
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out_arr = np.zeros((nby * nbx, bins), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t by, bx, b, i, j, y0, x0
    cdef cnp.int64_t val
    for by in range(nby):
        y0 = by * sh
        for bx in range(nbx):
            x0 = bx * sw
            b = by * nbx + bx
            for i in range(y0, y0 + bh):
                for j in range(x0, x0 + bw):
                    val = hashed[i, j]
                    if val < 0 or val >= bins:
                        raise ValueError(f"hash value {val} outside [0, {bins})")
                    out[b, val] += 1
    return out_arr


ctypedef fused real:
    float
    double


def dcd_epoch(cnp.int64_t[::1] indptr, int[::1] indices, real[::1] data, cnp.int64_t[::1] order,
              double[::1] y, double[::1] alpha, double[::1] w, double[::1] bias, double[::1] qdiag,
              double upper, double xscale, double bias_value):
    """One pass of dual coordinate descent for a binary L2-regularized hinge SVM.

    Rows are visited in ``order``; row ``i`` enters as ``xscale * x_i`` plus a
    constant feature ``bias_value`` whose weight is ``bias[0]``. Updates
    ``alpha``, ``w`` and ``bias`` in place and returns the largest projected
    gradient seen.
    """
    cdef Py_ssize_t ii, i, p, n = order.shape[0]
    cdef double g, grad, pg, a, na, delta, coef, worst = 0.0
    for ii in range(n):
        i = order[ii]
        g = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            g += w[indices[p]] * data[p]
        g = xscale * g + bias[0] * bias_value
        grad = y[i] * g - 1.0
        a = alpha[i]
        pg = grad
        if a <= 0.0:
            pg = grad if grad < 0.0 else 0.0
        elif a >= upper:
            pg = grad if grad > 0.0 else 0.0
        if fabs(pg) > worst:
            worst = fabs(pg)
        if pg == 0.0 or qdiag[i] <= 0.0:
            continue
        na = a - grad / qdiag[i]
        if na < 0.0:
            na = 0.0
        elif na > upper:
            na = upper
        delta = (na - a) * y[i]
        alpha[i] = na
        coef = delta * xscale
        for p in range(indptr[i], indptr[i + 1]):
            w[indices[p]] += coef * data[p]
        bias[0] += delta * bias_value
    return worst
