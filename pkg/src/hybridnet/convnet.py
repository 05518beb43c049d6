"""Two-layer convolution cascades: PCANet, TFNet and HybridNet.

Filter learning needs every patch of every training image, so it streams:
layer-1 banks come from the patch Gram of the raw images, layer-2 banks
from the patch Gram of all layer-1 responses, computed image by image.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import backend
from .errors import InvalidArgument
from .filter_bank import (
    AMALGAMATED,
    MINUTIAE,
    choose_ranks,
    pca_filters_from_gram,
    tensor_filters_from_gram,
)
from .patches import as_image, center_columns, check_patch_size, patch_gram
from .spectral import GramAccumulator

NETS = {
    "pcanet": (AMALGAMATED,),
    "tfnet": (MINUTIAE,),
    "hybrid": (AMALGAMATED, MINUTIAE),
}
PADDING = ("zero", "replicate")


@dataclass(frozen=True)
class NetConfig:
    """Network and output-layer hyperparameters.

    ``ranks1``/``ranks2`` default to :func:`~hybridnet.filter_bank.choose_ranks`
    of ``L1``/``L2``. ``spp_levels`` switches the output layer to spatial
    pyramid pooling; ``pca_dim`` enables the per-group PCA reduction.
    """

    L1: int = 9
    L2: int = 8
    k1: int = 7
    k2: int = 7
    channels: int = 1
    ranks1: tuple = None
    ranks2: tuple = None
    block: tuple = (7, 7)
    overlap: float = 0.5
    padding: str = "zero"
    centering: str = "patch"
    lomoi_tol: float = None
    lomoi_max_iter: int = 50
    spp_levels: tuple = None
    pca_dim: int = None
    pca_scope: str = "group"
    normalize_blocks: bool = False

    def __post_init__(self):
        for name in ("L1", "L2", "k1", "k2", "lomoi_max_iter"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgument(f"{name} must be positive")
        for name in ("k1", "k2"):
            k = getattr(self, name)
            if k < 3 or k % 2 == 0:
                raise InvalidArgument(f"{name} must be an odd integer >= 3, got {k}")
        if self.channels not in (1, 3):
            raise InvalidArgument("channels must be 1 or 3")
        if len(self.block) != 2 or min(self.block) < 1:
            raise InvalidArgument(f"bad block geometry {self.block}")
        if not 0.0 <= self.overlap < 1.0:
            raise InvalidArgument("overlap must lie in [0, 1)")
        if self.padding not in PADDING:
            raise InvalidArgument(f"padding must be one of {PADDING}")
        if self.L2 > 62:
            raise InvalidArgument("L2 > 62 overflows the hash range")
        if self.pca_scope not in ("group", "vector"):
            raise InvalidArgument("pca_scope must be 'group' or 'vector'")

    @property
    def slab1(self):
        return (self.k1, self.k2) if self.channels == 1 else (self.k1, self.k2, self.channels)

    @property
    def slab2(self):
        return (self.k1, self.k2)

    def resolved_ranks(self):
        r1 = tuple(self.ranks1) if self.ranks1 else choose_ranks(self.L1, self.slab1)
        r2 = tuple(self.ranks2) if self.ranks2 else choose_ranks(self.L2, self.slab2)
        return r1, r2

    def updated(self, **kw):
        return replace(self, **kw)


@dataclass
class ResponseStack:
    """Layer-2 responses of one image for one view.

    ``responses[i]`` came from layer-1 filter ``lineage[i][0]`` followed by
    layer-2 filter ``lineage[i][1]``; ordering is layer-1 major.
    """

    responses: np.ndarray
    lineage: list
    view: str
    layer1: np.ndarray = None

    def __len__(self):
        return self.responses.shape[0]


def _pad(img, kh, kw, padding):
    mode = "constant" if padding == "zero" else "edge"
    return np.pad(img, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)), mode=mode)


def convolve_many(img, kernels, padding="zero", kernels_impl=None):
    """Same-size correlation of ``(C, m, n)`` with ``(L, C, kh, kw)`` kernels."""
    img = as_image(img) if np.ndim(img) != 3 else np.ascontiguousarray(img, dtype=np.float64)
    kernels = np.ascontiguousarray(kernels, dtype=np.float64)
    if kernels.ndim != 4 or kernels.shape[1] != img.shape[0]:
        raise InvalidArgument(f"kernels {kernels.shape} incompatible with image {img.shape}")
    kh, kw = kernels.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidArgument("kernel sizes must be odd")
    if kh > img.shape[1] or kw > img.shape[2]:
        raise InvalidArgument(f"kernel {kh}x{kw} larger than image {img.shape[1:]}")
    k = kernels_impl or backend.kernels
    return k.correlate_valid(np.ascontiguousarray(_pad(img, kh, kw, padding)), kernels)


def convolve(img, kernel, padding="zero"):
    """Zero-padded correlation summed over channels; output is ``m x n``.

    ``kernel`` is ``(k1, k2)`` or ``(k1, k2, channels)``.
    """
    img = as_image(img)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim == 2:
        kernel = kernel[..., None]
    if kernel.ndim != 3 or kernel.shape[2] != img.shape[0]:
        raise InvalidArgument(f"kernel {kernel.shape} has wrong channel count for image {img.shape}")
    return convolve_many(img, np.moveaxis(kernel, 2, 0)[None], padding)[0]


def response_patch_cols(resp, k1, k2, centering="patch"):
    """Centered patch columns of a stack of single-channel responses ``(R, m, n)``."""
    win = sliding_window_view(resp, (k1, k2), axis=(1, 2))
    cols = win.reshape(-1, k1 * k2).T
    if centering == "patch":
        return center_columns(cols)
    per_image = cols.reshape(k1 * k2, resp.shape[0], -1)
    return (per_image - per_image.mean(axis=2, keepdims=True)).reshape(k1 * k2, -1)


@dataclass
class Banks:
    """Learned banks per view: ``{view: (layer1, layer2)}`` plus diagnostics."""

    net: str
    cfg: NetConfig
    banks: dict
    gram1: np.ndarray = field(default=None, repr=False)
    gram2: np.ndarray = field(default=None, repr=False)
    patch_counts: tuple = (0, 0)

    def layer1(self, view):
        return self.banks[view][0]

    def layer2(self, view):
        return self.banks[view][1]

    @property
    def views(self):
        return NETS[self.net]


def _layer1_banks(gram, cfg, views):
    r1, _ = cfg.resolved_ranks()
    out = {}
    if AMALGAMATED in views:
        out[AMALGAMATED] = pca_filters_from_gram(gram, cfg.L1, cfg.k1, cfg.k2, cfg.channels, layer=1)
    if MINUTIAE in views:
        out[MINUTIAE] = tensor_filters_from_gram(
            gram, cfg.slab1, r1, cfg.L1, layer=1, tolerance=cfg.lomoi_tol, max_iter=cfg.lomoi_max_iter
        )
    return out


def _layer2_banks(gram, cfg, views):
    _, r2 = cfg.resolved_ranks()
    out = {}
    if AMALGAMATED in views:
        out[AMALGAMATED] = pca_filters_from_gram(gram, cfg.L2, cfg.k1, cfg.k2, 1, layer=2)
    if MINUTIAE in views:
        out[MINUTIAE] = tensor_filters_from_gram(
            gram, cfg.slab2, r2, cfg.L2, layer=2, tolerance=cfg.lomoi_tol, max_iter=cfg.lomoi_max_iter
        )
    return out


def _check_images(images, cfg):
    images = [as_image(img) for img in images]
    if not images:
        raise InvalidArgument("no training images")
    for img in images:
        if img.shape[0] != cfg.channels:
            raise InvalidArgument(f"image has {img.shape[0]} channels, config expects {cfg.channels}")
        check_patch_size(cfg.k1, cfg.k2, img.shape[1], img.shape[2])
    return images


def fit_banks(images, cfg, net="hybrid"):
    """Learn both layers of filters for ``net`` from ``images``.

    For ``hybrid`` each layer-1 bank is learned from the same raw patches
    and each layer-2 bank from the union of both views' layer-1 responses.
    """
    if net not in NETS:
        raise InvalidArgument(f"net must be one of {sorted(NETS)}, got {net!r}")
    views = NETS[net]
    images = _check_images(images, cfg)
    gram1, n1 = patch_gram(images, cfg.k1, cfg.k2, cfg.centering)
    l1 = _layer1_banks(gram1, cfg, views)
    kernels1 = [l1[v].conv_kernels() for v in views]
    acc = GramAccumulator(cfg.k1 * cfg.k2)
    for img in images:
        resp = np.concatenate([convolve_many(img, k, cfg.padding) for k in kernels1])
        acc.add(response_patch_cols(resp, cfg.k1, cfg.k2, cfg.centering))
    gram2 = acc.result()
    l2 = _layer2_banks(gram2, cfg, views)
    return Banks(
        net=net,
        cfg=cfg,
        banks={v: (l1[v], l2[v]) for v in views},
        gram1=gram1,
        gram2=gram2,
        patch_counts=(n1, acc.count),
    )


def image_responses(img, banks, view):
    """Layer-1 and layer-2 responses of one image for one view."""
    cfg = banks.cfg
    b1, b2 = banks.banks[view]
    first = convolve_many(img, b1.conv_kernels(), cfg.padding)
    k2 = b2.conv_kernels()
    second = np.concatenate([convolve_many(first[i:i + 1], k2, cfg.padding) for i in range(len(b1))])
    lineage = [(i, j) for i in range(len(b1)) for j in range(len(b2))]
    return ResponseStack(responses=second, lineage=lineage, view=view, layer1=first)


def run_pcanet(images, cfg):
    banks = fit_banks(images, cfg, "pcanet")
    stacks = [image_responses(img, banks, AMALGAMATED) for img in banks_images(images)]
    return stacks, banks.banks[AMALGAMATED]


def run_tfnet(images, cfg):
    banks = fit_banks(images, cfg, "tfnet")
    stacks = [image_responses(img, banks, MINUTIAE) for img in banks_images(images)]
    return stacks, banks.banks[MINUTIAE]


def run_hybridnet(images, cfg):
    """Returns ``(amalgamated stacks, minutiae stacks, Banks)``."""
    banks = fit_banks(images, cfg, "hybrid")
    images = banks_images(images)
    pca = [image_responses(img, banks, AMALGAMATED) for img in images]
    tf = [image_responses(img, banks, MINUTIAE) for img in images]
    return pca, tf, banks


def banks_images(images):
    return [as_image(img) for img in images]
