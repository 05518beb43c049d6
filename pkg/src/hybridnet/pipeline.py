"""Fit filters once, then stream images to sparse per-view feature rows.

Histogram features are wide (``2**L2 * L1 * B`` per view) but sparse: each
block holds at most ``block_h * block_w`` distinct hash values. Rows are
therefore accumulated in CSR form.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .convnet import NETS, fit_banks, image_responses
from .encoder import block_count, encode, pca_reduce, spp_blocks
from .errors import InvalidArgument
from .filter_bank import AMALGAMATED, MINUTIAE
from .patches import as_image
from .spectral import leading_eigs

log = logging.getLogger(__name__)


def feature_layout(cfg, net, shape):
    """``(bins, filters, blocks)`` of one view, and the total dimension for ``net``."""
    m, n = shape
    blocks = spp_blocks(cfg.spp_levels) if cfg.spp_levels else block_count(m, n, cfg.block, cfg.overlap)
    layout = (1 << cfg.L2, cfg.L1, blocks)
    return layout, len(NETS[net]) * int(np.prod(layout))


@dataclass
class Diagnostics:
    """Spectra and core norms of a fitted extractor, for plotting."""

    layer1_spectrum: np.ndarray = None
    layer2_spectrum: np.ndarray = None
    layer1_core_norms: list = field(default_factory=list)
    layer2_core_norms: list = field(default_factory=list)
    patch_counts: tuple = (0, 0)

    @property
    def leading_eigenvalue(self):
        return float(self.layer2_spectrum[0])

    @property
    def core_norm(self):
        return self.layer2_core_norms[-1] if self.layer2_core_norms else None


def _spectrum(gram):
    return leading_eigs(gram, gram.shape[0]).values


def _core_history(bank):
    res = bank.decomposition
    return list(res.core_norm_history) if res is not None else []


class FeatureExtractor:
    """Learn banks for ``net`` and encode images per view.

    >>> from hybridnet.convnet import NetConfig
    >>> from hybridnet.data_io import synth_dataset
    >>> data = synth_dataset(4, seed=0, size=(16, 16))
    >>> cfg = NetConfig(L1=2, L2=2, k1=3, k2=3, block=(8, 8))
    >>> fx = FeatureExtractor(cfg, "hybrid").fit(data.images)
    >>> {v: x.shape for v, x in fx.transform(data.images).items()}
    {'amalgamated': (4, 72), 'minutiae': (4, 72)}

    Raw histogram rows are stored as float32 by default: the counts are
    small integers, so this is exact and halves memory. Normalized blocks
    default to float64.
    """

    def __init__(self, cfg, net="hybrid", dtype=None):
        if net not in NETS:
            raise InvalidArgument(f"net must be one of {sorted(NETS)}, got {net!r}")
        self.cfg = cfg
        self.net = net
        if dtype is None:
            dtype = np.float64 if cfg.normalize_blocks else np.float32
        self.dtype = dtype
        self.banks = None
        self.projections = {}
        self.timings = {}

    @property
    def views(self):
        return NETS[self.net]

    def fit(self, images):
        t0 = time.perf_counter()
        self.banks = fit_banks(list(images), self.cfg, self.net)
        self.timings["fit"] = time.perf_counter() - t0
        return self

    def diagnostics(self):
        b = self._require()
        d = Diagnostics(_spectrum(b.gram1), _spectrum(b.gram2), patch_counts=b.patch_counts)
        if MINUTIAE in b.banks:
            d.layer1_core_norms = _core_history(b.layer1(MINUTIAE))
            d.layer2_core_norms = _core_history(b.layer2(MINUTIAE))
        return d

    def _require(self):
        if self.banks is None:
            raise InvalidArgument("extractor is not fitted")
        return self.banks

    def encode_one(self, img):
        """Dense ``{view: FeatureVector}`` of one image."""
        banks = self._require()
        img = as_image(img)
        return {v: encode([image_responses(img, banks, v)], self.cfg) for v in self.views}

    def transform_raw(self, images):
        """Sparse histogram rows ``{view: csr (N, D_view)}`` before any PCA."""
        self._require()
        t0 = time.perf_counter()
        parts = {v: ([], [], [0]) for v in self.views}
        dims = {}
        for img in images:
            for v, fv in self.encode_one(img).items():
                data, cols, ptr = parts[v]
                nz = np.flatnonzero(fv.values)
                data.append(fv.values[nz].astype(self.dtype))
                cols.append(nz.astype(np.int32))
                ptr.append(ptr[-1] + nz.size)
                dims[v] = (fv.values.size, fv.layout)
        out = {}
        for v in self.views:
            if v not in dims:
                raise InvalidArgument("no images to transform")
            # release each view's per-image pieces as soon as they are joined
            data, cols, ptr = parts.pop(v)
            data, cols = np.concatenate(data), np.concatenate(cols)
            out[v] = sp.csr_matrix((data, cols, np.asarray(ptr, dtype=np.int64)),
                                   shape=(len(ptr) - 1, dims[v][0]), copy=False)
            del data, cols
        self.timings["transform"] = self.timings.get("transform", 0.0) + time.perf_counter() - t0
        self.layouts = {v: dims[v][1] for v in dims}
        return out

    def fit_reduction(self, raw):
        """Fit per-view PCA on training rows when ``cfg.pca_dim`` is set."""
        cfg = self.cfg
        if not cfg.pca_dim:
            return self
        for v, x in raw.items():
            groups = cfg.L1 if cfg.pca_scope == "group" else 1
            self.projections[v] = pca_reduce(x, cfg.pca_dim, groups=groups)
        return self

    def reduce(self, raw):
        if not self.projections:
            return raw
        return {v: self.projections[v].transform(x) for v, x in raw.items()}

    def transform(self, images):
        return self.reduce(self.transform_raw(images))

    def fit_transform(self, images):
        images = list(images)
        self.fit(images)
        raw = self.transform_raw(images)
        self.fit_reduction(raw)
        return self.reduce(raw)


def combine(views, net):
    """Single classifier input: the one view, or both side by side for hybrid."""
    if net != "hybrid":
        return views[NETS[net][0]]
    a, b = views[AMALGAMATED], views[MINUTIAE]
    if sp.issparse(a):
        return sp.hstack([a, b], format="csr")
    return np.hstack([a, b])
