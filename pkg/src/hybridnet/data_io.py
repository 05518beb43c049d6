"""Dataset readers, the HNF1 feature container, and synthetic data.

HNF1 layout (little-endian)::

    b"HNF1" | version u32 | count u64 | dims u64 | bins u32 | filters u32
    | blocks u32 | view u8 | has_labels u8
    payload: count x ([label u32] + dims x f64)
    trailer: CRC32(payload) u32

Wide sparse features use the companion layout ``b"HNS1"``: same header
(``dims`` is the column count; the last byte holds flags, bit 0 for labels
and bit 1 for f32 data), then ``[count x label u32]``,
``indptr (count + 1) x u64``, ``indices nnz x u32``, ``data nnz x f64``
(or ``f32``) and the same CRC32 trailer. Histogram counts are integers, so
f32 stores them exactly at half the size.
"""

import gzip
import hashlib
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .attention import AttentionModel
from .classifier import LinearModel
from .errors import CorruptionError, FormatError, InvalidArgument
from .filter_bank import FilterBank

MAGIC = b"HNF1"
SPARSE_MAGIC = b"HNS1"
VERSION = 1
_HEADER = struct.Struct("<4sIQQIIIBB")
_TRAILER = struct.Struct("<I")
VIEW_TAGS = {
    "none": 0,
    "amalgamated": 1,
    "minutiae": 2,
    "hybrid": 3,
    "attention": 4,
    "spp": 5,
    "reduced": 6,
    "model": 7,
    "bank": 8,
}
_TAG_VIEWS = {v: k for k, v in VIEW_TAGS.items()}


@dataclass
class DatasetSplit:
    """Images ``(N, C, m, n)`` scaled to [0, 1] and integer labels."""

    images: np.ndarray
    labels: np.ndarray
    name: str = ""
    split: str = "train"
    checksum: str = ""
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise FormatError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and self.labels.min() < 0:
            raise FormatError("negative class label")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def subset(self, idx, split=None):
        idx = np.asarray(idx)
        return DatasetSplit(self.images[idx], self.labels[idx], self.name, split or self.split, self.checksum)


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if str(path).endswith(".gz"):
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: bad gzip stream: {exc}", 0) from exc
    return raw


def _digest(raw):
    return hashlib.sha256(raw).hexdigest()


def parse_idx(raw):
    """Decode IDX bytes: unsigned-byte data, any rank; returns a uint8 array."""
    if len(raw) < 4:
        raise FormatError("IDX header truncated", len(raw))
    zero, dtype, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype != 0x08 or ndim == 0:
        raise FormatError(f"bad IDX magic 0x{raw[:4].hex()}", 0)
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise FormatError("IDX dimension table truncated", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:hdr])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) != hdr + size:
        raise FormatError(f"IDX payload has {len(raw) - hdr} bytes, header promises {size}", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, offset=hdr).reshape(dims)


def read_idx(path):
    """IDX images (magic 0x00000803) scaled to [0, 1] as ``(N, m, n)``
    float64, or labels (0x00000801) as int64."""
    arr = parse_idx(_read_bytes(path))
    if arr.ndim == 1:
        return arr.astype(np.int64)
    if arr.ndim == 3:
        return arr.astype(np.float64) / 255.0
    raise FormatError(f"unsupported IDX rank {arr.ndim}", 3)


def load_idx_pair(images_path, labels_path, name="mnist", split="train"):
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise FormatError("expected a 3-D image file and a 1-D label file")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels in {labels_path}")
    raw = _read_bytes(images_path) + _read_bytes(labels_path)
    return DatasetSplit(images[:, None], labels, name, split, _digest(raw))


def read_mnist_variations(path, name="mnist-variation", split="train", size=(28, 28)):
    """Parse the MNIST-variations text format: per line, ``m*n`` pixel
    values in row-major order followed by the label."""
    raw = _read_bytes(path)
    npix = size[0] * size[1]
    rows, labels, warnings = [], [], []
    for lineno, line in enumerate(raw.decode("ascii", errors="replace").splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != npix + 1:
            raise FormatError(f"{path}: expected {npix + 1} values, found {len(tokens)}", f"line {lineno}")
        try:
            vals = np.array([float(t) for t in tokens])
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric token ({exc})", f"line {lineno}") from exc
        label = vals[-1]
        if label != int(label) or label < 0:
            raise FormatError(f"{path}: label {label} is not a class id", f"line {lineno}")
        pix = vals[:-1]
        if pix.min() < 0.0 or pix.max() > 1.0:
            warnings.append(f"line {lineno}: pixel values outside [0, 1]")
        rows.append(pix)
        labels.append(int(label))
    if not rows:
        raise FormatError(f"{path}: no samples", "line 1")
    images = np.stack(rows).reshape(-1, 1, size[0], size[1])
    return DatasetSplit(images, np.array(labels, dtype=np.int64), name, split, _digest(raw), warnings)


def read_cifar(path, variant=10, name=None, split="train"):
    """CIFAR binary batches; CIFAR-100 records use the fine label."""
    if variant not in (10, 100):
        raise InvalidArgument("variant must be 10 or 100")
    raw = _read_bytes(path)
    nlab = 1 if variant == 10 else 2
    rec = nlab + 3072
    if len(raw) == 0 or len(raw) % rec:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of record length {rec}",
                          len(raw) - len(raw) % rec)
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    labels = arr[:, nlab - 1].astype(np.int64)
    images = arr[:, nlab:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return DatasetSplit(images, labels, name or f"cifar{variant}", split, _digest(raw))


def concat_splits(splits, name=None, split=None):
    splits = list(splits)
    digest = hashlib.sha256("".join(s.checksum for s in splits).encode()).hexdigest()
    return DatasetSplit(
        np.concatenate([s.images for s in splits]),
        np.concatenate([s.labels for s in splits]),
        name or splits[0].name,
        split or splits[0].split,
        digest,
    )


@dataclass
class FeatureContainer:
    values: np.ndarray
    labels: np.ndarray = None
    layout: tuple = (0, 0, 0)
    view: str = "none"
    version: int = VERSION

    @property
    def count(self):
        return self.values.shape[0]

    @property
    def dims(self):
        return self.values.shape[1]


class FeatureWriter:
    """Streams records to an HNF1 file; the record count is patched on close."""

    def __init__(self, path, dims, layout=(0, 0, 0), view="none", labels=False):
        if view not in VIEW_TAGS:
            raise InvalidArgument(f"unknown view tag {view!r}")
        self.path = path
        self.dims = int(dims)
        self.layout = tuple(int(v) for v in layout)
        self.view = view
        self.labels = bool(labels)
        self.count = 0
        self._crc = 0
        self._fh = open(path, "wb")
        self._fh.write(self._header())

    def _header(self):
        return _HEADER.pack(MAGIC, VERSION, self.count, self.dims, *self.layout,
                            VIEW_TAGS[self.view], int(self.labels))

    def write(self, rows, labels=None):
        if sp.issparse(rows):
            rows = rows.toarray()
        rows = np.atleast_2d(np.asarray(rows, dtype="<f8"))
        if rows.shape[1] != self.dims:
            raise InvalidArgument(f"rows have {rows.shape[1]} columns, container has {self.dims}")
        if self.labels:
            if labels is None or len(labels) != rows.shape[0]:
                raise InvalidArgument("container expects one label per record")
            labels = np.asarray(labels)
            if labels.size and labels.min() < 0:
                raise InvalidArgument("labels must be non-negative")
        for i, row in enumerate(rows):
            chunk = (struct.pack("<I", int(labels[i])) if self.labels else b"") + row.tobytes()
            self._crc = zlib.crc32(chunk, self._crc)
            self._fh.write(chunk)
        self.count += rows.shape[0]

    def close(self):
        if self._fh is None:
            return
        self._fh.write(_TRAILER.pack(self._crc & 0xFFFFFFFF))
        self._fh.seek(0)
        self._fh.write(self._header())
        self._fh.close()
        self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_features(path, values, labels=None, layout=(0, 0, 0), view="none", chunk=256):
    values = values if sp.issparse(values) else np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.ndim != 2:
        raise InvalidArgument("values must be a 2-D array")
    with FeatureWriter(path, values.shape[1], layout, view, labels is not None) as out:
        for lo in range(0, values.shape[0], chunk):
            out.write(values[lo:lo + chunk], None if labels is None else labels[lo:lo + chunk])


def parse_features(raw):
    if len(raw) < _HEADER.size + _TRAILER.size:
        raise FormatError("container truncated", len(raw))
    magic, version, count, dims, bins, filters, blocks, tag, has_labels = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", 4)
    if has_labels not in (0, 1) or tag not in _TAG_VIEWS:
        raise FormatError("bad header flags", _HEADER.size - 2)
    rec = dims * 8 + 4 * has_labels
    payload = raw[_HEADER.size:len(raw) - _TRAILER.size]
    if len(payload) != count * rec:
        raise FormatError(f"payload has {len(payload)} bytes, header promises {count * rec}", _HEADER.size)
    (crc,) = _TRAILER.unpack_from(raw, len(raw) - _TRAILER.size)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptionError("payload checksum mismatch", len(raw) - _TRAILER.size)
    if has_labels:
        dt = np.dtype([("label", "<u4"), ("x", "<f8", (dims,))])
        recs = np.frombuffer(payload, dtype=dt, count=count)
        values = recs["x"].astype(np.float64).reshape(count, dims)
        labels = recs["label"].astype(np.int64)
    else:
        values = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(count, dims)
        labels = None
    return FeatureContainer(values, labels, (bins, filters, blocks), _TAG_VIEWS[tag], version)


def read_features(path):
    with open(path, "rb") as fh:
        # one writable buffer; sparse arrays are views into it
        raw = bytearray(os.fstat(fh.fileno()).st_size)
        fh.readinto(raw)
    if raw[:4] == SPARSE_MAGIC:
        return parse_sparse_features(raw)
    return parse_features(bytes(raw))


_LABELS, _F32 = 1, 2


def write_sparse_features(path, values, labels=None, layout=(0, 0, 0), view="none"):
    """Write a CSR matrix in the HNS1 layout, streaming each array to disk.

    float32 input keeps f32 storage; anything else is written as f64.
    """
    if view not in VIEW_TAGS:
        raise InvalidArgument(f"unknown view tag {view!r}")
    x = sp.csr_matrix(values)
    if x.dtype != np.float32:
        x = x.astype(np.float64)
    if not x.has_sorted_indices:
        x = x.copy()
        x.sort_indices()
    count, dims = x.shape
    if dims >= 1 << 31:
        raise InvalidArgument("too many columns for u32 indices")
    arrays = []
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (count,) or (labels.size and labels.min() < 0):
            raise InvalidArgument("need one non-negative label per row")
        arrays.append(labels.astype("<u4"))
    arrays += [x.indptr.astype("<u8"), x.indices.astype("<u4", copy=False),
               x.data.astype("<f4" if x.dtype == np.float32 else "<f8", copy=False)]
    flags = (_LABELS if labels is not None else 0) | (_F32 if x.dtype == np.float32 else 0)
    header = _HEADER.pack(SPARSE_MAGIC, VERSION, count, dims, *(int(v) for v in layout), VIEW_TAGS[view], flags)
    crc = 0
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in arrays:
            buf = np.ascontiguousarray(arr).data.cast("B")
            crc = zlib.crc32(buf, crc)
            fh.write(buf)
        fh.write(_TRAILER.pack(crc & 0xFFFFFFFF))


def parse_sparse_features(raw):
    """Parse HNS1 bytes. A writable buffer (``bytearray``) is used without copies."""
    if len(raw) < _HEADER.size + _TRAILER.size:
        raise FormatError("container truncated", len(raw))
    magic, version, count, dims, bins, filters, blocks, tag, flags = _HEADER.unpack_from(raw)
    if magic != SPARSE_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", 4)
    if flags > (_LABELS | _F32) or tag not in _TAG_VIEWS:
        raise FormatError("bad header flags", _HEADER.size - 2)
    end = len(raw) - _TRAILER.size
    payload = memoryview(raw)[_HEADER.size:end]
    (crc,) = _TRAILER.unpack_from(raw, end)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptionError("payload checksum mismatch", end)
    pos = 0
    labels = None
    if flags & _LABELS:
        if len(payload) < 4 * count:
            raise FormatError("labels truncated", _HEADER.size)
        labels = np.frombuffer(payload, "<u4", count, pos).astype(np.int64)
        pos += 4 * count
    if len(payload) < pos + 8 * (count + 1):
        raise FormatError("index pointer truncated", _HEADER.size + pos)
    indptr = np.frombuffer(payload, "<i8", count + 1, pos)
    pos += 8 * (count + 1)
    nnz = int(indptr[-1])
    width = 4 if flags & _F32 else 8
    if indptr[0] != 0 or np.any(np.diff(indptr) < 0) or len(payload) != pos + (4 + width) * nnz:
        raise FormatError("inconsistent sparse payload", _HEADER.size + pos)
    indices = np.frombuffer(payload, "<i4", nnz, pos)
    data = np.frombuffer(payload, "<f4" if width == 4 else "<f8", nnz, pos + 4 * nnz)
    if nnz and (indices.min() < 0 or indices.max() >= dims):
        raise FormatError("column index out of range", _HEADER.size + pos)
    values = sp.csr_matrix((data, indices, indptr), shape=(count, dims), copy=False)
    return FeatureContainer(values, labels, (bins, filters, blocks), _TAG_VIEWS[tag], version)


def synth_dataset(n, n_classes=2, size=(28, 28), channels=1, seed=0, noise=0.25,
                  name="synth", split="train"):
    """Class-conditional oriented gratings plus Gaussian noise, in [0, 1].

    Class ``c`` has orientation ``pi * c / n_classes``; phase and a small
    frequency jitter are random per image. Labels cycle through classes.
    """
    if n < 1 or n_classes < 2:
        raise InvalidArgument("need n >= 1 and at least two classes")
    rng = np.random.default_rng(seed)
    m, w = size
    yy, xx = np.mgrid[0:m, 0:w].astype(np.float64)
    labels = np.arange(n, dtype=np.int64) % n_classes
    images = np.empty((n, channels, m, w))
    for i, c in enumerate(labels):
        theta = np.pi * c / n_classes + rng.normal(0, 0.05)
        freq = 2 * np.pi / 6.0 * (1 + rng.normal(0, 0.05))
        phase = rng.uniform(0, 2 * np.pi)
        wave = 0.5 + 0.5 * np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        for ch in range(channels):
            images[i, ch] = wave * (1.0 - 0.2 * ch) + rng.normal(0, noise, size)
    images = np.clip(images, 0.0, 1.0)
    digest = hashlib.sha256(images.tobytes()).hexdigest()
    return DatasetSplit(images, labels, name, split, digest)


def save_bank(path, bank):
    """Kernels as rows; the label field holds the layer, layout ``(k1, k2, channels)``."""
    k1, k2 = bank.kernels.shape[1:3]
    labels = np.full(len(bank), bank.layer, dtype=np.int64)
    write_features(path, bank.vectors(), labels, (k1, k2, bank.channels), bank.view)


def load_bank(path):
    c = read_features(path)
    k1, k2, ch = c.layout
    shape = (c.count, k1, k2) if ch == 1 else (c.count, k1, k2, ch)
    layer = int(c.labels[0]) if c.count else 0
    return FilterBank(kernels=c.values.reshape(shape), view=c.view, layer=layer)


def save_linear_model(path, model):
    """One record: ``[reg, epochs, seed, input_scale, bias_penalty, weights, bias, (mean, scale)]``."""
    c, d = model.weights.shape
    std = model.mean is not None
    parts = [[model.reg, model.epochs, model.seed, model.input_scale, float(model.bias_penalty)],
             model.weights.ravel(), model.bias]
    if std:
        parts += [model.mean, model.scale]
    write_features(path, np.concatenate(parts)[None], None, (c, d, int(std)), "model")


def load_linear_model(path):
    cont = read_features(path)
    c, d, std = cont.layout
    v = cont.values[0]
    reg, epochs, seed, input_scale, penalty = v[0], int(v[1]), int(v[2]), float(v[3]), bool(v[4])
    pos = 5
    w = v[pos:pos + c * d].reshape(c, d)
    pos += c * d
    b = v[pos:pos + c]
    pos += c
    mean = scale = None
    if std:
        mean, scale = v[pos:pos + d], v[pos + d:pos + 2 * d]
    return LinearModel(w.copy(), b.copy(), reg, epochs, seed, [], mean, scale, input_scale, penalty)


def save_attention_model(path, model):
    """One record: ``[W, w, V, c, input_scale]`` with layout ``(D, d, C)``."""
    D, d, C = model.dims
    flat = np.concatenate([model.W.ravel(), model.w, model.V.ravel(), model.c, [model.input_scale]])
    write_features(path, flat[None], None, (D, d, C), "attention")


def load_attention_model(path):
    cont = read_features(path)
    D, d, C = cont.layout
    v = cont.values[0]
    sizes = np.cumsum([d * D, d, C * D, C])
    W, w, V, c, rest = np.split(v, sizes)
    return AttentionModel(W.reshape(d, D).copy(), w.copy(), V.reshape(C, D).copy(), c.copy(), float(rest[0]))


DATASETS = ("synth", "mnist-basic", "mnist", "cifar10", "cifar100", "mnist5k")
DATA_ENV = {
    "mnist-basic": "HYBRIDNET_MNIST_BASIC_DIR",
    "mnist": "HYBRIDNET_MNIST_DIR",
    "cifar10": "HYBRIDNET_CIFAR10_DIR",
    "cifar100": "HYBRIDNET_CIFAR100_DIR",
}


def _find(directory, *names):
    for name in names:
        for cand in (name, name + ".gz"):
            path = os.path.join(directory, cand)
            if os.path.exists(path):
                return path
    raise FileNotFoundError(f"none of {list(names)} found in {directory}")


def _data_dir(name, data_dir):
    directory = data_dir or os.environ.get(DATA_ENV[name])
    if not directory:
        raise FileNotFoundError(f"dataset {name!r} needs --data-dir or ${DATA_ENV[name]}")
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"{directory} is not a directory")
    return directory


def _head(split, n):
    if n is None or n >= len(split):
        return split
    return split.subset(np.arange(n))


def load_mnist_sample(n_test=1000, seed=0):
    """5,000-digit MNIST sample bundled with :mod:`mlxtend` (optional extra),
    shuffled with ``seed`` and split into train/test."""
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:
        raise FileNotFoundError("the mnist5k sample needs the optional 'mlxtend' package") from exc
    x, y = mnist_data()
    order = np.random.default_rng(seed).permutation(x.shape[0])
    images = (x[order] / 255.0).reshape(-1, 1, 28, 28)
    labels = y[order].astype(np.int64)
    digest = hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()
    cut = images.shape[0] - n_test
    return (
        DatasetSplit(images[:cut], labels[:cut], "mnist5k", "train", digest),
        DatasetSplit(images[cut:], labels[cut:], "mnist5k", "test", digest),
    )


def load_dataset(name, data_dir=None, n_train=None, n_test=None, seed=0, synth_classes=2, synth_size=(28, 28)):
    """``(train, test)`` splits of a named dataset, each truncated to its
    first ``n_train`` / ``n_test`` samples."""
    if name not in DATASETS:
        raise InvalidArgument(f"dataset must be one of {DATASETS}, got {name!r}")
    if name == "synth":
        n_train = n_train or 200
        n_test = n_test or 200
        return (
            synth_dataset(n_train, synth_classes, synth_size, seed=seed, split="train"),
            synth_dataset(n_test, synth_classes, synth_size, seed=seed + 10_000, split="test"),
        )
    if name == "mnist5k":
        train, test = load_mnist_sample(seed=seed)
        return _head(train, n_train), _head(test, n_test)
    directory = _data_dir(name, data_dir)
    if name == "mnist-basic":
        train = read_mnist_variations(_find(directory, "mnist_train.amat"), name, "train")
        test = read_mnist_variations(_find(directory, "mnist_test.amat"), name, "test")
    elif name == "mnist":
        train = load_idx_pair(_find(directory, "train-images-idx3-ubyte"),
                              _find(directory, "train-labels-idx1-ubyte"), name, "train")
        test = load_idx_pair(_find(directory, "t10k-images-idx3-ubyte"),
                             _find(directory, "t10k-labels-idx1-ubyte"), name, "test")
    elif name == "cifar10":
        train = concat_splits([read_cifar(_find(directory, f"data_batch_{i}.bin"), 10) for i in range(1, 6)],
                              split="train")
        test = read_cifar(_find(directory, "test_batch.bin"), 10, split="test")
    else:
        train = read_cifar(_find(directory, "train.bin"), 100, split="train")
        test = read_cifar(_find(directory, "test.bin"), 100, split="test")
    return _head(train, n_train), _head(test, n_test)
