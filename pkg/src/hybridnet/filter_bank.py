"""PCA filters (amalgamated view) and tensor filters (minutiae view)."""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .errors import InvalidArgument, NumericFailure
from .lomoi import LomoiConfig, lomoi, lomoi_from_gram
from .tensor_core import outer_product

AMALGAMATED = "amalgamated"
MINUTIAE = "minutiae"
RANK_DEFICIENCY_RTOL = 1e-10


@dataclass
class FilterBank:
    """Kernels of one layer of one view.

    ``kernels`` has shape ``(L, k1, k2)`` or ``(L, k1, k2, channels)``.
    ``eigenvalues`` is set for PCA banks; ``indices`` and
    ``singular_values`` (the per-kernel product) for tensor banks.
    ``spectrum`` keeps the full Gram spectrum and ``decomposition`` the
    factorization result, for diagnostics.
    """

    kernels: np.ndarray
    view: str
    layer: int
    eigenvalues: np.ndarray = None
    indices: list = None
    singular_values: np.ndarray = None
    spectrum: np.ndarray = None
    decomposition: object = field(default=None, repr=False)

    def __len__(self):
        return self.kernels.shape[0]

    @property
    def channels(self):
        return 1 if self.kernels.ndim == 3 else self.kernels.shape[3]

    @property
    def shape(self):
        return self.kernels.shape[1:]

    def conv_kernels(self):
        """Kernels as ``(L, channels, k1, k2)`` for :mod:`hybridnet.convnet`."""
        if self.kernels.ndim == 3:
            return np.ascontiguousarray(self.kernels[:, None])
        return np.ascontiguousarray(np.moveaxis(self.kernels, 3, 1))

    def vectors(self):
        return self.kernels.reshape(len(self), -1)


def _slab_shape(k1, k2, channels):
    return (k1, k2) if channels == 1 else (k1, k2, channels)


def pca_filters_from_gram(gram, count, k1, k2, channels=1, layer=1):
    """Leading eigenvectors of the patch Gram reshaped row-major into kernels.

    Raises :class:`NumericFailure` if any requested eigenvalue is below
    ``1e-10`` times the largest, naming the first deficient index.
    """
    dim = k1 * k2 * channels
    gram = np.asarray(gram, dtype=np.float64)
    if gram.shape != (dim, dim):
        raise InvalidArgument(f"Gram shape {gram.shape} does not match patches of {k1}x{k2}x{channels}")
    if not 1 <= count <= dim:
        raise InvalidArgument(f"filter count {count} must lie in [1, {dim}]")
    full = spectral.leading_eigs(gram, dim)
    top = full.values[0]
    for idx in range(count):
        if top <= 0 or full.values[idx] <= RANK_DEFICIENCY_RTOL * top:
            raise NumericFailure(
                f"patch Gram is rank deficient at filter index {idx} "
                f"(eigenvalue {full.values[idx]:.3e}, largest {top:.3e})"
            )
    vecs = full.vectors[:, :count]
    kernels = vecs.T.reshape((count,) + _slab_shape(k1, k2, channels))
    return FilterBank(
        kernels=np.ascontiguousarray(kernels),
        view=AMALGAMATED,
        layer=layer,
        eigenvalues=full.values[:count].copy(),
        spectrum=full.values,
    )


def pca_filters(patches, count, layer=1):
    """PCA filters from a :class:`~hybridnet.patches.PatchSet`."""
    dim = patches.as_matrix.shape[0]
    if patches.count < dim:
        raise InvalidArgument(f"need at least {dim} patches for a well-posed Gram, got {patches.count}")
    return pca_filters_from_gram(
        spectral.gram(patches.as_matrix), count, patches.k1, patches.k2, patches.channels, layer
    )


def choose_ranks(count, slab_shape):
    """Smallest rank grid with ``prod(ranks) >= count``.

    Starts from equal ranks ``floor(count ** (1/n))`` and increments modes
    in order (first mode first) until the grid is large enough.
    """
    n = len(slab_shape)
    cap = int(np.prod(slab_shape))
    if not 1 <= count <= cap:
        raise InvalidArgument(f"cannot form {count} tensor filters from slabs of shape {slab_shape}")
    base = max(1, int(np.floor(count ** (1.0 / n) + 1e-9)))
    ranks = [min(base, s) for s in slab_shape]
    mode = 0
    while int(np.prod(ranks)) < count:
        if ranks[mode] < slab_shape[mode]:
            ranks[mode] += 1
        mode = (mode + 1) % n
    return tuple(ranks)


def _bank_from_factors(result, select, layer):
    factors, svals = result.factors, result.singular_values
    grid = list(itertools.product(*[range(f.shape[1]) for f in factors]))
    if not 1 <= select <= len(grid):
        raise InvalidArgument(f"select {select} must lie in [1, {len(grid)}]")
    scores = {idx: float(np.prod([s[i] for s, i in zip(svals, idx)])) for idx in grid}
    order = sorted(grid, key=lambda idx: (-scores[idx], idx))[:select]
    kernels = np.stack([outer_product([f[:, i] for f, i in zip(factors, idx)]) for idx in order])
    return FilterBank(
        kernels=np.ascontiguousarray(kernels),
        view=MINUTIAE,
        layer=layer,
        indices=order,
        singular_values=np.array([scores[idx] for idx in order]),
        decomposition=result,
    )


def tensor_filters(patches, ranks, select, layer=1, tolerance=None, max_iter=None):
    """Tensor filters from the dense patch tensor of a PatchSet.

    The sample mode (last) is left out of the factorization. Kernels are
    outer products of factor columns, ranked by the product of their
    singular values (ties by index tuple), first ``select`` kept.
    """
    kw = {} if max_iter is None else {"max_iter": max_iter}
    cfg = LomoiConfig(ranks=tuple(ranks), tolerance=tolerance, **kw)
    return _bank_from_factors(lomoi(patches.as_tensor, cfg), select, layer)


def tensor_filters_from_gram(gram, slab_shape, ranks, select, layer=1, tolerance=None, max_iter=None):
    """Same as :func:`tensor_filters` computed from the patch Gram matrix."""
    kw = {} if max_iter is None else {"max_iter": max_iter}
    result = lomoi_from_gram(gram, slab_shape, ranks, tolerance=tolerance, **kw)
    return _bank_from_factors(result, select, layer)
