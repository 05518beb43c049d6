"""Dense multilinear algebra on numpy arrays.

Tensors are plain C-contiguous ``float64`` ndarrays. Modes are 0-based.
The mode-``k`` unfolding places mode ``k`` on the rows and the remaining
modes on the columns in ascending order, last remaining mode varying
fastest (row-major), so ``fold`` is an exact inverse.
"""

from functools import reduce

import numpy as np

from .errors import InvalidArgument


def as_tensor(x):
    t = np.ascontiguousarray(x, dtype=np.float64)
    if t.ndim == 0 or 0 in t.shape:
        raise InvalidArgument(f"tensor needs >=1 nonempty mode, got shape {t.shape}")
    return t


def _check_mode(ndim, mode):
    if not 0 <= mode < ndim:
        raise InvalidArgument(f"mode {mode} out of range for a {ndim}-mode tensor")


def unfold(t, mode):
    """Mode-``mode`` matricization, shape ``(t.shape[mode], prod(others))``."""
    t = as_tensor(t)
    _check_mode(t.ndim, mode)
    return np.ascontiguousarray(np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1))


def fold(m, mode, shape):
    """Inverse of :func:`unfold` for a tensor of the given ``shape``."""
    m = np.asarray(m, dtype=np.float64)
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), mode)
    rest = [s for i, s in enumerate(shape) if i != mode]
    expected = (shape[mode], int(np.prod(rest, dtype=np.int64)))
    if m.ndim != 2 or m.shape != expected:
        raise InvalidArgument(
            f"matrix of shape {m.shape} cannot fold on mode {mode} into {shape}; "
            f"expected {expected}"
        )
    full = m.reshape([shape[mode]] + rest)
    return np.ascontiguousarray(np.moveaxis(full, 0, mode))


def mode_product(t, a, mode):
    """n-mode product ``t x_mode a``; satisfies ``unfold(y, mode) == a @ unfold(t, mode)``."""
    t = as_tensor(t)
    a = np.asarray(a, dtype=np.float64)
    _check_mode(t.ndim, mode)
    if a.ndim != 2 or a.shape[1] != t.shape[mode]:
        raise InvalidArgument(
            f"matrix {a.shape} incompatible with mode {mode} of size {t.shape[mode]}"
        )
    shape = list(t.shape)
    shape[mode] = a.shape[0]
    return fold(a @ unfold(t, mode), mode, shape)


def multi_mode_product(t, matrices, skip=None, transpose=False):
    """Apply ``t x_k matrices[k]`` for every mode except ``skip``.

    ``matrices`` is indexed by mode; entries for skipped modes are ignored
    (may be ``None``). With ``transpose=True`` each matrix is transposed first.
    """
    out = as_tensor(t)
    for k, a in enumerate(matrices):
        if k == skip or a is None:
            continue
        out = mode_product(out, a.T if transpose else a, k)
    return out


def outer_product(vectors):
    """Outer product of two or more vectors."""
    vectors = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if len(vectors) < 2:
        raise InvalidArgument("outer_product needs at least two vectors")
    if any(v.size == 0 for v in vectors):
        raise InvalidArgument("outer_product got an empty vector")
    return reduce(np.multiply.outer, vectors)


def frobenius_norm(t):
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))
