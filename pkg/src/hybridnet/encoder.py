"""Output layer: binary hashing, block histograms, pyramid pooling, PCA."""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import backend
from .errors import InvalidArgument
from .spectral import canonicalize_signs

log = logging.getLogger(__name__)

DEFAULT_SPP_LEVELS = (4, 2, 1)


@dataclass
class FeatureVector:
    """Concatenated histograms with their layout.

    ``values`` has length ``bins * filters * blocks``; order is view,
    then layer-1 filter, then block (row-major), then bin.
    """

    values: np.ndarray
    bins: int
    filters: int
    blocks: int
    view: str
    normalized: bool = False

    def __len__(self):
        return self.values.shape[0]

    @property
    def layout(self):
        return (self.bins, self.filters, self.blocks)


def hash_responses(stack, L2):
    """Collapse each layer-1 batch of ``L2`` responses into one integer image.

    Bit ``j`` (weight ``2**j``) is set where layer-2 response ``j`` is
    strictly positive. Returns an ``(L1, m, n)`` int64 array.
    """
    lineage = [tuple(x) for x in stack.lineage]
    if L2 < 1 or len(lineage) % L2:
        raise InvalidArgument(f"{len(lineage)} responses do not split into batches of {L2}")
    L1 = len(lineage) // L2
    if lineage != [(i, j) for i in range(L1) for j in range(L2)]:
        raise InvalidArgument("response lineage is not a complete layer-1 x layer-2 grid")
    resp = np.ascontiguousarray(stack.responses, dtype=np.float64)
    k = backend.kernels
    return np.stack([k.hash_bits(resp[i * L2:(i + 1) * L2]) for i in range(L1)])


def block_stride(block, overlap):
    """Stride per axis: ``floor(block * (1 - overlap))``, at least 1."""
    return tuple(max(1, int(np.floor(b * (1.0 - overlap) + 1e-9))) for b in block)


def block_count(m, n, block, overlap):
    """Number of whole blocks; trailing partial blocks are dropped."""
    bh, bw = block
    if bh > m or bw > n:
        raise InvalidArgument(f"block {block} larger than image {m}x{n}")
    sh, sw = block_stride(block, overlap)
    return ((m - bh) // sh + 1) * ((n - bw) // sw + 1)


def block_histogram(hashed, block, overlap, L2):
    """Counts of each value ``0 .. 2**L2 - 1`` per block, block-major."""
    hashed = np.ascontiguousarray(hashed, dtype=np.int64)
    m, n = hashed.shape
    block_count(m, n, block, overlap)
    bins = 1 << L2
    if hashed.size and (hashed.min() < 0 or hashed.max() >= bins):
        raise InvalidArgument(f"hash values outside [0, {bins})")
    sh, sw = block_stride(block, overlap)
    counts = backend.kernels.block_hist(hashed, bins, block[0], block[1], sh, sw)
    return counts.ravel()


def _normalize(hist, bins):
    per_block = hist.reshape(-1, bins).astype(np.float64)
    mass = per_block.sum(axis=1, keepdims=True)
    return (per_block / np.where(mass > 0, mass, 1.0)).ravel()


def encode_view(stack, L2, block, overlap, normalize=False):
    """Block-histogram feature of one view's response stack."""
    hashed = hash_responses(stack, L2)
    bins = 1 << L2
    parts = [block_histogram(h, block, overlap, L2) for h in hashed]
    values = np.concatenate(parts).astype(np.float64)
    if normalize:
        values = _normalize(values, bins)
    blocks = parts[0].size // bins
    return FeatureVector(values, bins, hashed.shape[0], blocks, stack.view, normalize)


def encode(stacks, cfg):
    """Encode one image from its per-view stacks (amalgamated first).

    Two views give the hybrid feature: the per-view vectors concatenated,
    with ``filters`` counting both views' layer-1 filters.
    """
    if isinstance(stacks, dict):
        stacks = [stacks[v] for v in ("amalgamated", "minutiae") if v in stacks]
    if not stacks:
        raise InvalidArgument("no response stacks to encode")
    if cfg.spp_levels:
        parts = [spp_encode(hash_responses(s, cfg.L2), cfg.spp_levels, cfg.L2) for s in stacks]
        for p, s in zip(parts, stacks):
            p.view = s.view
    else:
        parts = [encode_view(s, cfg.L2, cfg.block, cfg.overlap, cfg.normalize_blocks) for s in stacks]
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    return FeatureVector(
        np.concatenate([p.values for p in parts]),
        first.bins,
        sum(p.filters for p in parts),
        first.blocks,
        "hybrid",
        first.normalized,
    )


def _cell_edges(size, level):
    return [(i * size) // level for i in range(level + 1)]


def spp_blocks(levels):
    return int(sum(lv * lv for lv in levels))


def spp_encode(hashed, levels=DEFAULT_SPP_LEVELS, L2=8):
    """Spatial pyramid histograms of hashed images ``(groups, m, n)``.

    Each level ``l`` splits the image into ``l x l`` non-overlapping cells
    (edges at ``floor(i * size / l)``) and counts hash values per cell.
    Order: group, level (as given), cell row-major, bin.
    """
    hashed = np.asarray(hashed, dtype=np.int64)
    if hashed.ndim == 2:
        hashed = hashed[None]
    levels = tuple(int(lv) for lv in levels)
    if not levels or min(levels) < 1:
        raise InvalidArgument("levels must be a nonempty list of positive ints")
    g, m, n = hashed.shape
    if max(levels) > min(m, n):
        raise InvalidArgument(f"pyramid level {max(levels)} finer than image {m}x{n}")
    bins = 1 << L2
    if hashed.size and (hashed.min() < 0 or hashed.max() >= bins):
        raise InvalidArgument(f"hash values outside [0, {bins})")
    out = []
    for img in hashed:
        for lv in levels:
            ys, xs = _cell_edges(m, lv), _cell_edges(n, lv)
            for a in range(lv):
                for b in range(lv):
                    cell = img[ys[a]:ys[a + 1], xs[b]:xs[b + 1]]
                    out.append(np.bincount(cell.ravel(), minlength=bins))
    values = np.concatenate(out).astype(np.float64)
    return FeatureVector(values, bins, g, spp_blocks(levels), "spp")


@dataclass
class PCAProjection:
    """Per-group mean and orthonormal projection fitted on training rows.

    ``groups`` is the number of equal-width column groups reduced
    independently (1 = whole vector).
    """

    means: list
    components: list
    groups: int
    group_dim: int
    target_dim: int
    warnings: list = field(default_factory=list)

    @property
    def output_dim(self):
        return sum(c.shape[1] for c in self.components)

    def transform(self, x):
        out = []
        for g in range(self.groups):
            block = _columns(x, g * self.group_dim, (g + 1) * self.group_dim)
            out.append((block - self.means[g]) @ self.components[g])
        return np.hstack(out)


def _columns(x, lo, hi):
    block = x[:, lo:hi]
    if sp.issparse(block):
        block = block.toarray()
    return np.asarray(block, dtype=np.float64)


def _leading_basis(centered, k):
    n, d = centered.shape
    if d <= n:
        cov = centered.T @ centered
        vals, vecs = scipy.linalg.eigh(cov, subset_by_index=[d - k, d - 1])
        order = np.argsort(-vals, kind="stable")
        return vals[order], vecs[:, order]
    gram = centered @ centered.T
    vals, vecs = scipy.linalg.eigh(gram, subset_by_index=[n - k, n - 1])
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    basis = centered.T @ vecs / np.sqrt(np.clip(vals, 1e-300, None))
    return vals, basis


def pca_reduce(train, target_dim=100, groups=1, rank_rtol=1e-10):
    """Fit a per-group PCA projection to ``target_dim`` on training rows.

    ``train`` is ``(N, groups * group_dim)``, dense or sparse. When a
    group's centered data has rank below ``target_dim`` the target for that
    group is lowered and a warning recorded on the result.
    """
    n, d = train.shape
    if groups < 1 or d % groups:
        raise InvalidArgument(f"{d} columns do not split into {groups} groups")
    if n <= target_dim:
        raise InvalidArgument(f"need more than {target_dim} training rows, got {n}")
    gd = d // groups
    means, comps, warnings = [], [], []
    for g in range(groups):
        block = _columns(train, g * gd, (g + 1) * gd)
        mean = block.mean(axis=0)
        centered = block - mean
        k = min(target_dim, gd, n)
        vals, vecs = _leading_basis(centered, k)
        keep = vals > rank_rtol * max(vals[0], 1e-300) if vals.size else np.zeros(0, bool)
        if not keep.all():
            rank = int(keep.sum())
            msg = f"group {g}: rank {rank} below target {target_dim}; reduced"
            log.warning(msg)
            warnings.append(msg)
            vecs = vecs[:, :rank]
        elif k < target_dim:
            msg = f"group {g}: only {k} dimensions available for target {target_dim}"
            log.warning(msg)
            warnings.append(msg)
        means.append(mean)
        comps.append(canonicalize_signs(vecs))
    return PCAProjection(means, comps, groups, gd, target_dim, warnings)
