import gzip
import os
import struct
import tempfile
import zlib

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from hybridnet.attention import init_model
from hybridnet.classifier import svm_predict, svm_train
from hybridnet.convnet import NetConfig, fit_banks
from hybridnet.data_io import (
    FeatureWriter,
    concat_splits,
    load_attention_model,
    load_bank,
    load_dataset,
    load_idx_pair,
    load_linear_model,
    parse_features,
    parse_idx,
    read_cifar,
    read_features,
    read_idx,
    read_mnist_variations,
    save_attention_model,
    save_bank,
    save_linear_model,
    synth_dataset,
    write_features,
    write_sparse_features,
)
from hybridnet.errors import CorruptionError, FormatError, InvalidArgument
from hybridnet.pipeline import FeatureExtractor


def idx_bytes(arr):
    """Big-endian IDX layout: two zero bytes, type 0x08, rank, u32 dims, data."""
    arr = np.asarray(arr, dtype=np.uint8)
    return bytes([0, 0, 8, arr.ndim]) + b"".join(struct.pack(">I", d) for d in arr.shape) + arr.tobytes()


def cifar_record(label_bytes, pixels):
    return bytes(label_bytes) + bytes(np.asarray(pixels, dtype=np.uint8).ravel())


class TestIDX:
    def test_two_image_fixture(self, tmp_path):
        imgs = np.array([[[0, 255], [128, 1]], [[10, 20], [30, 40]]], dtype=np.uint8)
        (tmp_path / "img").write_bytes(idx_bytes(imgs))
        (tmp_path / "lab").write_bytes(idx_bytes([3, 7]))
        np.testing.assert_array_equal(read_idx(tmp_path / "img"), imgs / 255.0)
        split = load_idx_pair(tmp_path / "img", tmp_path / "lab")
        assert split.images.shape == (2, 1, 2, 2)
        np.testing.assert_array_equal(split.labels, [3, 7])
        assert len(split.checksum) == 64

    def test_magic_header(self):
        assert idx_bytes(np.zeros((1, 2, 2)))[:4] == b"\x00\x00\x08\x03"
        assert idx_bytes(np.zeros(2))[:4] == b"\x00\x00\x08\x01"

    def test_gzip(self, tmp_path):
        (tmp_path / "lab.gz").write_bytes(gzip.compress(idx_bytes([1, 2, 3])))
        np.testing.assert_array_equal(read_idx(tmp_path / "lab.gz"), [1, 2, 3])

    def test_count_mismatch(self, tmp_path):
        (tmp_path / "img").write_bytes(idx_bytes(np.zeros((2, 2, 2))))
        (tmp_path / "lab").write_bytes(idx_bytes([1, 2, 3]))
        with pytest.raises(FormatError):
            load_idx_pair(tmp_path / "img", tmp_path / "lab")

    def test_empty_and_truncated(self, tmp_path):
        (tmp_path / "e").write_bytes(b"")
        with pytest.raises(FormatError):
            read_idx(tmp_path / "e")
        raw = idx_bytes(np.zeros((2, 3, 3)))
        with pytest.raises(FormatError) as info:
            parse_idx(raw[:-1])
        assert info.value.offset == len(raw) - 1

    def test_bad_magic(self):
        with pytest.raises(FormatError) as info:
            parse_idx(b"\x00\x00\x09\x01\x00\x00\x00\x01\x05")
        assert info.value.offset == 0

    @given(st.binary(max_size=64))
    def test_total_over_bytes(self, raw):
        try:
            parse_idx(raw)
        except FormatError as exc:
            assert exc.offset is not None


class TestAMAT:
    def line(self, pix, label):
        return " ".join(f"{v:.6g}" for v in pix) + f" {label}\n"

    def test_one_line_fixture(self, tmp_path):
        pix = np.zeros(784)
        pix[[0, 29, 783]] = [1.0, 0.5, 0.25]
        (tmp_path / "a.amat").write_text(self.line(pix, 4))
        split = read_mnist_variations(tmp_path / "a.amat")
        assert split.images.shape == (1, 1, 28, 28)
        assert split.images[0, 0, 0, 0] == 1.0 and split.images[0, 0, 1, 1] == 0.5
        assert split.images[0, 0, 27, 27] == 0.25
        np.testing.assert_array_equal(split.labels, [4])
        assert not split.warnings

    def test_missing_label(self, tmp_path):
        (tmp_path / "a.amat").write_text(self.line(np.zeros(784), 1) + " ".join(["0"] * 784) + "\n")
        with pytest.raises(FormatError, match="line 2"):
            read_mnist_variations(tmp_path / "a.amat")

    def test_non_numeric(self, tmp_path):
        (tmp_path / "a.amat").write_text("x " * 784 + "1\n")
        with pytest.raises(FormatError, match="line 1"):
            read_mnist_variations(tmp_path / "a.amat")

    def test_out_of_range_warns(self, tmp_path):
        pix = np.zeros(784)
        pix[5] = 1.5
        (tmp_path / "a.amat").write_text(self.line(np.zeros(784), 0) + self.line(pix, 2))
        split = read_mnist_variations(tmp_path / "a.amat")
        assert len(split) == 2 and split.warnings == ["line 2: pixel values outside [0, 1]"]

    def test_empty(self, tmp_path):
        (tmp_path / "a.amat").write_text("")
        with pytest.raises(FormatError):
            read_mnist_variations(tmp_path / "a.amat")


class TestCIFAR:
    def test_two_records(self, tmp_path, rng):
        px = rng.integers(0, 256, size=(2, 3, 32, 32))
        (tmp_path / "b.bin").write_bytes(cifar_record([6], px[0]) + cifar_record([9], px[1]))
        split = read_cifar(tmp_path / "b.bin", 10)
        np.testing.assert_array_equal(split.labels, [6, 9])
        np.testing.assert_array_equal(split.images, px / 255.0)
        # channel-major: first 1024 bytes are the red plane
        assert split.images[0, 0, 0, 1] == px[0, 0, 0, 1] / 255.0

    def test_fine_label(self, tmp_path, rng):
        px = rng.integers(0, 256, size=(3, 32, 32))
        (tmp_path / "t.bin").write_bytes(cifar_record([3, 87], px))
        split = read_cifar(tmp_path / "t.bin", 100)
        assert split.labels[0] == 87 and split.name == "cifar100"

    def test_truncated(self, tmp_path):
        (tmp_path / "b.bin").write_bytes(cifar_record([1], np.zeros(3072))[:-1])
        with pytest.raises(FormatError):
            read_cifar(tmp_path / "b.bin", 10)

    def test_bad_variant(self, tmp_path):
        with pytest.raises(InvalidArgument):
            read_cifar(tmp_path / "b.bin", 20)

    def test_concat(self, tmp_path):
        a, b = synth_dataset(3, seed=1), synth_dataset(2, seed=2)
        c = concat_splits([a, b])
        assert len(c) == 5 and c.checksum not in (a.checksum, b.checksum)


class TestContainer:
    def test_roundtrip_bitwise(self, tmp_path, rng):
        x = rng.normal(size=(3, 17))
        write_features(tmp_path / "f.hnf", x, np.array([0, 5, 2]), (4, 2, 2), "hybrid")
        c = read_features(tmp_path / "f.hnf")
        assert c.values.tobytes() == x.tobytes()
        np.testing.assert_array_equal(c.labels, [0, 5, 2])
        assert (c.layout, c.view, c.count, c.dims) == ((4, 2, 2), "hybrid", 3, 17)

    def test_byte_layout(self, tmp_path):
        write_features(tmp_path / "f.hnf", np.array([[1.5, -2.0]]), np.array([7]), (1, 2, 3), "spp")
        raw = (tmp_path / "f.hnf").read_bytes()
        want_header = b"HNF1" + struct.pack("<IQQIIIBB", 1, 1, 2, 1, 2, 3, 5, 1)
        payload = struct.pack("<Idd", 7, 1.5, -2.0)
        assert raw == want_header + payload + struct.pack("<I", zlib.crc32(payload))

    def test_flipped_byte(self, tmp_path, rng):
        write_features(tmp_path / "f.hnf", rng.normal(size=(3, 4)))
        raw = bytearray((tmp_path / "f.hnf").read_bytes())
        raw[40] ^= 0x01
        with pytest.raises(CorruptionError):
            parse_features(bytes(raw))

    def test_empty(self, tmp_path):
        write_features(tmp_path / "f.hnf", np.zeros((0, 12)))
        c = read_features(tmp_path / "f.hnf")
        assert c.count == 0 and c.dims == 12 and c.labels is None

    def test_truncated(self, tmp_path, rng):
        write_features(tmp_path / "f.hnf", rng.normal(size=(2, 4)))
        raw = (tmp_path / "f.hnf").read_bytes()
        with pytest.raises(FormatError):
            parse_features(raw[:-9])
        with pytest.raises(FormatError):
            parse_features(b"XXXX" + raw[4:])

    def test_streaming_writer(self, tmp_path, rng):
        x = rng.normal(size=(10, 3))
        with FeatureWriter(tmp_path / "f.hnf", 3, labels=True) as out:
            out.write(x[:4], np.arange(4))
            out.write(x[4:], np.arange(4, 10))
        c = read_features(tmp_path / "f.hnf")
        assert c.values.tobytes() == x.tobytes() and c.count == 10

    def test_writer_errors(self, tmp_path):
        with pytest.raises(InvalidArgument):
            FeatureWriter(tmp_path / "f.hnf", 3, view="bogus")
        with FeatureWriter(tmp_path / "f.hnf", 3, labels=True) as out:
            with pytest.raises(InvalidArgument):
                out.write(np.zeros((1, 4)), [0])
            with pytest.raises(InvalidArgument):
                out.write(np.zeros((1, 3)))

    def test_sparse_roundtrip(self, tmp_path):
        x = sp.random(20, 500, density=0.05, random_state=0, format="csr")
        labels = np.arange(20) % 3
        write_sparse_features(tmp_path / "s.hnf", x, labels, (8, 2, 4), "amalgamated")
        c = read_features(tmp_path / "s.hnf")
        assert sp.issparse(c.values)
        assert (c.values != x).nnz == 0
        np.testing.assert_array_equal(c.labels, labels)
        assert c.layout == (8, 2, 4)

    def test_sparse_flipped_byte(self, tmp_path):
        write_sparse_features(tmp_path / "s.hnf", sp.eye(5, format="csr"))
        raw = bytearray((tmp_path / "s.hnf").read_bytes())
        raw[-6] ^= 0x10
        with pytest.raises(CorruptionError):
            read_features_bytes(raw, tmp_path)

    @given(st.integers(0, 2**32 - 1), st.integers(0, 6), st.integers(1, 9))
    def test_roundtrip_property(self, seed, n, d):
        x = np.random.default_rng(seed).normal(size=(n, d))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "f.hnf")
            write_features(path, x)
            assert read_features(path).values.tobytes() == x.tobytes()


def read_features_bytes(raw, tmp_path):
    path = tmp_path / "raw.hnf"
    path.write_bytes(bytes(raw))
    return read_features(path)


class TestModels:
    def test_linear_model(self, tmp_path, rng):
        x = rng.normal(size=(40, 6))
        y = np.arange(40) % 3
        for std in (False, True):
            m = svm_train(x, y, reg=0.1, standardize=std)
            save_linear_model(tmp_path / "m.hnf", m)
            back = load_linear_model(tmp_path / "m.hnf")
            np.testing.assert_array_equal(back.weights, m.weights)
            np.testing.assert_array_equal(svm_predict(back, x), svm_predict(m, x))
            assert back.input_scale == m.input_scale and back.reg == m.reg

    def test_attention_model(self, tmp_path):
        m = init_model(12, 4, 3, seed=2)
        m.input_scale = 0.25
        save_attention_model(tmp_path / "a.hnf", m)
        back = load_attention_model(tmp_path / "a.hnf")
        for k in ("W", "w", "V", "c"):
            assert getattr(back, k).tobytes() == getattr(m, k).tobytes()
        assert back.input_scale == 0.25

    def test_bank(self, tmp_path):
        data = synth_dataset(4, size=(12, 12), seed=0)
        banks = fit_banks(list(data.images), NetConfig(L1=2, L2=2, k1=3, k2=3), "tfnet")
        bank = banks.layer2("minutiae")
        save_bank(tmp_path / "b.hnf", bank)
        back = load_bank(tmp_path / "b.hnf")
        assert back.kernels.tobytes() == bank.kernels.tobytes()
        assert (back.view, back.layer) == (bank.view, bank.layer)


class TestSynth:
    def test_deterministic(self):
        assert synth_dataset(5, seed=3).images.tobytes() == synth_dataset(5, seed=3).images.tobytes()

    def test_seeds_differ(self):
        assert synth_dataset(5, seed=3).images.tobytes() != synth_dataset(5, seed=4).images.tobytes()

    def test_range_and_labels(self):
        d = synth_dataset(9, n_classes=3, channels=3, size=(10, 12))
        assert d.images.shape == (9, 3, 10, 12)
        assert d.images.min() >= 0 and d.images.max() <= 1
        np.testing.assert_array_equal(d.labels, np.arange(9) % 3)

    def test_load_dataset_splits_disjoint(self):
        train, test = load_dataset("synth", n_train=6, n_test=6)
        assert train.images.tobytes() != test.images.tobytes()

    def test_unknown_dataset(self):
        with pytest.raises(InvalidArgument):
            load_dataset("imagenet")

    def test_missing_directory(self, monkeypatch, tmp_path):
        monkeypatch.delenv("HYBRIDNET_MNIST_BASIC_DIR", raising=False)
        with pytest.raises(FileNotFoundError):
            load_dataset("mnist-basic")
        with pytest.raises(FileNotFoundError):
            load_dataset("mnist-basic", data_dir=str(tmp_path))

    def test_pcanet_svm_smoke(self):
        train, test = load_dataset("synth", n_train=200, n_test=200, seed=0)
        fx = FeatureExtractor(NetConfig(), "pcanet").fit(train.images)
        xtr = fx.transform(train.images)["amalgamated"]
        xte = fx.transform(test.images)["amalgamated"]
        model = svm_train(xtr, train.labels)
        assert np.mean(svm_predict(model, xte) == test.labels) > 0.95
