"""Dense overlapping patch extraction and the two patch views.

Images are ``float64`` arrays of shape ``(channels, m, n)``; 2-D input is
treated as one channel. A patch is vectorized row-major over
``(k1, k2, channel)``, so the matrix view is a plain reshape of the tensor
view.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgument
from .spectral import GramAccumulator

CENTERING = ("patch", "image")


def as_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise InvalidArgument(f"image must be (m, n) or (1|3, m, n), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidArgument("image has non-finite pixels")
    return np.ascontiguousarray(img)


def check_patch_size(k1, k2, m, n):
    for k in (k1, k2):
        if int(k) != k or k < 3 or k % 2 == 0:
            raise InvalidArgument(f"patch size must be an odd integer >= 3, got {k}")
    if k1 > m or k2 > n:
        raise InvalidArgument(f"patch {k1}x{k2} larger than image {m}x{n}")


def grid_shape(m, n, k1, k2):
    """Valid-position grid: ``(m - 2*(k1//2), n - 2*(k2//2))``."""
    return m - 2 * (k1 // 2), n - 2 * (k2 // 2)


@dataclass(frozen=True)
class PatchSet:
    """Zero-centered patches of one or more images.

    ``as_matrix`` has shape ``(k1*k2*channels, count)``; column order is
    image order, then row-major over patch centers.
    """

    as_matrix: np.ndarray
    k1: int
    k2: int
    channels: int
    grids: tuple

    @property
    def count(self):
        return self.as_matrix.shape[1]

    @property
    def as_tensor(self):
        """``(k1, k2, count)`` for one channel, ``(k1, k2, 3, count)`` for RGB."""
        if self.channels == 1:
            return self.as_matrix.reshape(self.k1, self.k2, self.count)
        return self.as_matrix.reshape(self.k1, self.k2, self.channels, self.count)

    @property
    def slab_shape(self):
        return (self.k1, self.k2) if self.channels == 1 else (self.k1, self.k2, self.channels)


def center_columns(cols):
    """Subtract each column's mean; constant columns become exactly zero."""
    out = cols - cols.mean(axis=0, keepdims=True)
    out[:, np.ptp(cols, axis=0) == 0] = 0.0
    return out


def patch_matrix(img, k1, k2, centering="patch"):
    img = as_image(img)
    c, m, n = img.shape
    check_patch_size(k1, k2, m, n)
    win = sliding_window_view(img, (k1, k2), axis=(1, 2))  # (c, gm, gn, k1, k2)
    gm, gn = win.shape[1:3]
    cols = np.transpose(win, (1, 2, 3, 4, 0)).reshape(gm * gn, k1 * k2 * c).T
    if centering == "patch":
        cols = center_columns(cols)
    elif centering == "image":
        cols = cols - cols.mean(axis=1, keepdims=True)
    else:
        raise InvalidArgument(f"centering must be one of {CENTERING}, got {centering!r}")
    return np.ascontiguousarray(cols)


def extract_patches(img, k1, k2, centering="patch"):
    """All fully supported ``k1 x k2`` patches of ``img``, stride 1, centered.

    ``centering='patch'`` removes each patch's own mean over all its
    entries; ``'image'`` removes the image's mean patch.
    """
    img = as_image(img)
    mat = patch_matrix(img, k1, k2, centering)
    return PatchSet(mat, int(k1), int(k2), img.shape[0], (grid_shape(img.shape[1], img.shape[2], k1, k2),))


def stack_patchsets(sets):
    sets = list(sets)
    if not sets:
        raise InvalidArgument("nothing to stack")
    geo = {(s.k1, s.k2, s.channels) for s in sets}
    if len(geo) != 1:
        raise InvalidArgument(f"heterogeneous patch geometry: {sorted(geo)}")
    first = sets[0]
    return PatchSet(
        np.concatenate([s.as_matrix for s in sets], axis=1),
        first.k1,
        first.k2,
        first.channels,
        tuple(g for s in sets for g in s.grids),
    )


def patch_gram(images, k1, k2, centering="patch"):
    """Gram matrix of the stacked patch matrix of ``images`` without
    materializing it; returns ``(gram, patch_count)``."""
    acc = None
    for img in images:
        cols = patch_matrix(img, k1, k2, centering)
        if acc is None:
            acc = GramAccumulator(cols.shape[0])
        acc.add(cols)
    if acc is None:
        raise InvalidArgument("no images given")
    return acc.result(), acc.count
