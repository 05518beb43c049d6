"""Leading eigenpairs of small symmetric matrices via cyclic Jacobi."""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import InvalidArgument, NumericFailure

MAX_DIM = 256
JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenResult:
    """Eigenvalues in descending order and matching orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return self.values.shape[0]


def canonicalize_signs(vectors):
    """Flip each column so its largest-magnitude entry is positive.

    Ties go to the lowest row index (``argmax`` returns the first maximum).
    """
    vectors = np.array(vectors, dtype=np.float64, copy=True)
    if vectors.size == 0:
        return vectors
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _check_symmetric(g, max_dim):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise InvalidArgument(f"expected a square matrix, got shape {g.shape}")
    if g.shape[0] > max_dim:
        raise InvalidArgument(f"matrix dimension {g.shape[0]} exceeds cap {max_dim}")
    if not np.all(np.isfinite(g)):
        raise InvalidArgument("matrix has non-finite entries")
    scale = np.max(np.abs(g)) if g.size else 0.0
    if scale > 0 and np.max(np.abs(g - g.T)) > 1e-9 * scale:
        raise InvalidArgument("matrix is not symmetric within 1e-9 relative")
    return np.ascontiguousarray(0.5 * (g + g.T))


def leading_eigs(g, count, max_dim=MAX_DIM, kernels=None):
    """Return the ``count`` largest eigenpairs of symmetric ``g``.

    The full spectrum is computed by cyclic Jacobi and truncated. Vectors
    are sign-canonical (see :func:`canonicalize_signs`).

    Raises
    ------
    InvalidArgument
        Non-square, asymmetric, oversize input or ``count`` out of range.
    NumericFailure
        Jacobi did not reach the off-diagonal tolerance.
    """
    g = _check_symmetric(g, max_dim)
    d = g.shape[0]
    if not 1 <= count <= d:
        raise InvalidArgument(f"count {count} must lie in [1, {d}]")
    k = kernels or backend.kernels
    values, vectors, sweeps, off = k.jacobi_eigh(g, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    total = np.sqrt(np.sum(g * g))
    if off > 1e-12 * total:
        raise NumericFailure(
            f"Jacobi stalled after {sweeps} sweeps: off-diagonal norm {off:.3e} "
            f"vs matrix norm {total:.3e}"
        )
    order = np.argsort(-values, kind="stable")[:count]
    return EigenResult(values=values[order].copy(), vectors=canonicalize_signs(vectors[:, order]))


def left_singular_vectors(x, count, max_dim=MAX_DIM, kernels=None):
    """Leading left singular vectors of ``x`` through the row Gram ``x x^T``.

    ``values`` holds squared singular values (the Gram eigenvalues).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument(f"expected a matrix, got shape {x.shape}")
    if not 1 <= count <= x.shape[0]:
        raise InvalidArgument(f"count {count} must lie in [1, {x.shape[0]}]")
    return leading_eigs(gram(x), count, max_dim=max_dim, kernels=kernels)


def gram(x, block=65536):
    """``x @ x.T`` accumulated over column blocks with pairwise reduction."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[1]
    if n <= block:
        return x @ x.T
    parts = [x[:, i:i + block] @ x[:, i:i + block].T for i in range(0, n, block)]
    return pairwise_sum(parts)


def pairwise_sum(parts):
    """Sum a list of equally shaped arrays with a fixed binary-tree order."""
    if not parts:
        raise InvalidArgument("pairwise_sum of an empty list")
    parts = list(parts)
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


class GramAccumulator:
    """Streaming ``sum_j x_j x_j^T`` over column batches.

    Partial sums are merged like a binary counter so the reduction tree
    depends only on the sequence of batch sizes.
    """

    def __init__(self, dim):
        self.dim = dim
        self.count = 0
        self._levels = []

    def add(self, cols):
        cols = np.asarray(cols, dtype=np.float64)
        if cols.ndim != 2 or cols.shape[0] != self.dim:
            raise InvalidArgument(f"expected ({self.dim}, n) columns, got {cols.shape}")
        part = cols @ cols.T
        self.count += cols.shape[1]
        level = 0
        while level < len(self._levels) and self._levels[level] is not None:
            part = self._levels[level] + part
            self._levels[level] = None
            level += 1
        if level == len(self._levels):
            self._levels.append(part)
        else:
            self._levels[level] = part

    def result(self):
        parts = [p for p in reversed(self._levels) if p is not None]
        if not parts:
            return np.zeros((self.dim, self.dim))
        return pairwise_sum(parts)
