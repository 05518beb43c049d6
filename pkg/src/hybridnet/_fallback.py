"""Pure numpy versions of the compiled kernels (same signatures, same results
up to floating-point summation order)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def jacobi_eigh(a_in, tol, max_sweeps):
    a = np.array(a_in, dtype=np.float64, copy=True)
    d = a.shape[0]
    v = np.eye(d)
    total = np.sqrt(np.sum(a * a))
    sweep = 0
    while True:
        off = np.sqrt(np.sum(np.square(a - np.diag(np.diagonal(a)))))
        if off <= tol * total or sweep >= max_sweeps:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                x, y = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * x - s * y
                a[:, q] = s * x + c * y
                x, y = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * x - s * y
                a[q, :] = s * x + c * y
                a[p, q] = a[q, p] = 0.0
                x, y = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * x - s * y
                v[:, q] = s * x + c * y
        sweep += 1
    return np.diagonal(a).copy(), v, sweep, float(off)


def correlate_valid(img, kernels):
    windows = sliding_window_view(img, kernels.shape[2:], axis=(1, 2))
    return np.ascontiguousarray(np.einsum("cmnuw,lcuw->lmn", windows, kernels))


def hash_bits(responses):
    weights = np.left_shift(1, np.arange(responses.shape[0], dtype=np.int64))
    return np.tensordot(weights, (responses > 0).astype(np.int64), axes=1)


_BLOCK_INDEX = {}


def _block_index(m, n, bh, bw, sh, sw):
    key = (m, n, bh, bw, sh, sw)
    if key not in _BLOCK_INDEX:
        flat = np.arange(m * n, dtype=np.int64).reshape(m, n)
        win = sliding_window_view(flat, (bh, bw))[::sh, ::sw]
        _BLOCK_INDEX[key] = win.reshape(-1, bh * bw)
    return _BLOCK_INDEX[key]


def block_hist(hashed, bins, bh, bw, sh, sw):
    m, n = hashed.shape
    idx = _block_index(m, n, bh, bw, sh, sw)
    vals = hashed.ravel()[idx]
    if vals.size and (vals.min() < 0 or vals.max() >= bins):
        raise ValueError(f"hash value outside [0, {bins})")
    offsets = (np.arange(idx.shape[0], dtype=np.int64) * bins)[:, None]
    counts = np.bincount((vals + offsets).ravel(), minlength=idx.shape[0] * bins)
    return counts.reshape(idx.shape[0], bins).astype(np.int64)


def dcd_epoch(indptr, indices, data, order, y, alpha, w, bias, qdiag, upper, xscale, bias_value):
    worst = 0.0
    for i in order:
        lo, hi = indptr[i], indptr[i + 1]
        cols, vals = indices[lo:hi], data[lo:hi]
        g = xscale * float(np.dot(w[cols], vals)) + bias[0] * bias_value
        grad = y[i] * g - 1.0
        a = alpha[i]
        pg = grad
        if a <= 0.0:
            pg = min(grad, 0.0)
        elif a >= upper:
            pg = max(grad, 0.0)
        worst = max(worst, abs(pg))
        if pg == 0.0 or qdiag[i] <= 0.0:
            continue
        na = min(max(a - grad / qdiag[i], 0.0), upper)
        delta = (na - a) * y[i]
        alpha[i] = na
        w[cols] += (delta * xscale) * vals
        bias[0] += delta * bias_value
    return worst
