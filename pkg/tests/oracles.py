"""Brute-force reference implementations used as test oracles.

Each oracle is written from the definition with explicit loops or with
numpy's own linear algebra, independently of the library code.
"""

import itertools

import numpy as np


def unfold_oracle(t, mode):
    """Element-by-element index map: column index is the row-major rank of
    the remaining indices, remaining modes ascending."""
    shape = t.shape
    rest = [k for k in range(t.ndim) if k != mode]
    ncols = int(np.prod([shape[k] for k in rest]))
    out = np.zeros((shape[mode], ncols))
    for idx in itertools.product(*[range(s) for s in shape]):
        col = 0
        for k in rest:
            col = col * shape[k] + idx[k]
        out[idx[mode], col] = t[idx]
    return out


def mode_product_oracle(t, a, mode):
    shape = list(t.shape)
    shape[mode] = a.shape[0]
    out = np.zeros(shape)
    for idx in itertools.product(*[range(s) for s in shape]):
        total = 0.0
        for j in range(t.shape[mode]):
            src = list(idx)
            src[mode] = j
            total += a[idx[mode], j] * t[tuple(src)]
        out[idx] = total
    return out


def outer_oracle(vectors):
    shape = [len(v) for v in vectors]
    out = np.zeros(shape)
    for idx in itertools.product(*[range(s) for s in shape]):
        val = 1.0
        for v, i in zip(vectors, idx):
            val *= v[i]
        out[idx] = val
    return out


def convolve_oracle(img, kernel):
    """Zero-padded same-size correlation summed over channels.

    ``img`` is ``(C, m, n)``, ``kernel`` is ``(k1, k2, C)``.
    """
    c, m, n = img.shape
    k1, k2 = kernel.shape[:2]
    p1, p2 = k1 // 2, k2 // 2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            total = 0.0
            for a in range(k1):
                for b in range(k2):
                    y, x = i + a - p1, j + b - p2
                    if 0 <= y < m and 0 <= x < n:
                        for ch in range(c):
                            total += kernel[a, b, ch] * img[ch, y, x]
            out[i, j] = total
    return out


def hash_oracle(responses):
    """``responses`` is ``(L2, m, n)``; bit ``l`` set where response ``l > 0``."""
    L2, m, n = responses.shape
    out = np.zeros((m, n), dtype=np.int64)
    for i in range(m):
        for j in range(n):
            bits = "".join("1" if responses[l, i, j] > 0 else "0" for l in reversed(range(L2)))
            out[i, j] = int(bits, 2)
    return out


def block_hist_oracle(hashed, block, stride, bins):
    m, n = hashed.shape
    bh, bw = block
    sh, sw = stride
    rows = []
    for top in range(0, m - bh + 1, sh):
        for left in range(0, n - bw + 1, sw):
            counts = [0] * bins
            for y in range(top, top + bh):
                for x in range(left, left + bw):
                    counts[hashed[y, x]] += 1
            rows.append(counts)
    return np.array(rows, dtype=np.int64).ravel()


def spp_oracle(hashed, levels, bins):
    m, n = hashed.shape
    out = []
    for lv in levels:
        for a in range(lv):
            for b in range(lv):
                y0, y1 = a * m // lv, (a + 1) * m // lv
                x0, x1 = b * n // lv, (b + 1) * n // lv
                counts = [0] * bins
                for y in range(y0, y1):
                    for x in range(x0, x1):
                        counts[hashed[y, x]] += 1
                out.extend(counts)
    return np.array(out, dtype=np.float64)


def _unfold(t, k):
    return np.moveaxis(t, k, 0).reshape(t.shape[k], -1)


def _apply(t, mats, skip):
    for k, u in enumerate(mats):
        if k == skip or u is None:
            continue
        t = np.moveaxis(np.tensordot(u, t, axes=(1, k)), 0, k)
    return t


def hooi_oracle(x, ranks, sweeps):
    """Tucker HOOI on every mode but the last, via ``numpy.linalg.svd``.

    Returns the loss after HOSVD initialization and ``sweeps`` sweeps.
    """
    n = x.ndim
    modes = list(range(n - 1))
    u = [None] * n
    for k, r in zip(modes, ranks):
        u[k] = np.linalg.svd(_unfold(x, k), full_matrices=False)[0][:, :r]
    for _ in range(sweeps):
        for k, r in zip(modes, ranks):
            others = [None if j == k else (f.T if f is not None else None) for j, f in enumerate(u)]
            y = _apply(x, others, n - 1)
            u[k] = np.linalg.svd(_unfold(y, k), full_matrices=False)[0][:, :r]
    core = _apply(x, [f.T if f is not None else None for f in u], n - 1)
    xhat = _apply(core, u, n - 1)
    return float(np.linalg.norm(x - xhat))


def windows_oracle(img, k1, k2):
    """Centered patches of ``(C, m, n)`` by explicit slicing, one column per
    valid center in row-major order, vectorized over ``(k1, k2, channel)``."""
    c, m, n = img.shape
    cols = []
    for i in range(m - k1 + 1):
        for j in range(n - k2 + 1):
            patch = np.transpose(img[:, i:i + k1, j:j + k2], (1, 2, 0)).ravel()
            cols.append(patch - patch.mean())
    return np.array(cols).T


def perceptron_oracle(x, labels, n_classes, epochs=200, margin=1.0):
    """Multi-class margin perceptron, used as an agreement reference."""
    w = np.zeros((n_classes, x.shape[1] + 1))
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    for _ in range(epochs):
        changed = False
        for xi, yi in zip(xb, labels):
            s = w @ xi
            s_other = np.max(np.delete(s, yi))
            if s[yi] - s_other < margin:
                wrong = int(np.argmax(np.where(np.arange(n_classes) == yi, -np.inf, s)))
                w[yi] += xi
                w[wrong] -= xi
                changed = True
        if not changed:
            break
    return lambda z: np.argmax(np.hstack([z, np.ones((z.shape[0], 1))]) @ w.T, axis=1)


def attention_forward_oracle(W, w, V, c, f_pca, f_tf):
    """Scalar-by-scalar forward pass for one pair of views."""
    d, D = W.shape
    scores = []
    for f in (f_pca, f_tf):
        s = 0.0
        for a in range(d):
            pre = 0.0
            for j in range(D):
                pre += W[a, j] * f[j]
            s += w[a] * np.tanh(pre)
        scores.append(s)
    top = max(scores)
    e = [np.exp(s - top) for s in scores]
    alpha = [v / sum(e) for v in e]
    F = [alpha[0] * f_pca[j] + alpha[1] * f_tf[j] for j in range(D)]
    logits = []
    for k in range(V.shape[0]):
        z = c[k]
        for j in range(D):
            z += V[k, j] * F[j]
        logits.append(z)
    return np.array(F), np.array(alpha), np.array(logits)


def central_differences(fn, params, step=1e-5):
    """Numerical gradient of scalar ``fn()`` w.r.t. each array in ``params``
    (perturbed in place and restored)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = fn()
            flat[i] = orig - step
            lo = fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, b in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def svm_dual_oracle(x, y, reg):
    """Binary hinge SVM with a penalized unit bias feature, solved as the box
    QP ``min 1/2 a'Qa - sum(a), 0 <= a <= 1/(reg n)`` by L-BFGS-B.

    Returns ``(w, b, primal)`` with ``primal = reg/2 (|w|^2 + b^2) + mean hinge``.
    """
    from scipy.optimize import minimize

    n = x.shape[0]
    z = np.hstack([x, np.ones((n, 1))]) * y[:, None]
    q = z @ z.T
    upper = 1.0 / (reg * n)
    res = minimize(lambda a: (0.5 * a @ q @ a - a.sum(), q @ a - 1.0), np.zeros(n), jac=True,
                   method="L-BFGS-B", bounds=[(0.0, upper)] * n, options={"ftol": 1e-15, "gtol": 1e-12,
                                                                       "maxiter": 10000})
    wb = z.T @ res.x
    w, b = wb[:-1], wb[-1]
    hinge = np.maximum(0.0, 1.0 - y * (x @ w + b)).mean()
    return w, b, 0.5 * reg * (w @ w + b * b) + hinge
