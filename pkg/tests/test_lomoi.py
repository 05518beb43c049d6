import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridnet.errors import InvalidArgument
from hybridnet.lomoi import LomoiConfig, core_norm, lomoi, lomoi_from_gram, write_diagnostics_csv
from hybridnet.spectral import canonicalize_signs
from hybridnet.tensor_core import frobenius_norm, outer_product, unfold
from oracles import hooi_oracle


def unit(r, n):
    v = r.normal(size=n)
    return v / np.linalg.norm(v)


def slab_moment(x):
    """Second moment of the slabs along the last mode."""
    flat = x.reshape(-1, x.shape[-1])
    return flat @ flat.T


class TestLomoi:
    def test_rank_one_recovery(self, kernels, rng):
        u, v, w = unit(rng, 5), unit(rng, 4), unit(rng, 30)
        res = lomoi(outer_product([u, v, w]), LomoiConfig((1, 1)))
        assert res.loss_history[0] < 1e-10
        np.testing.assert_allclose(res.factors[0][:, 0], canonicalize_signs(u[:, None])[:, 0], atol=1e-10)
        np.testing.assert_allclose(res.factors[1][:, 0], canonicalize_signs(v[:, None])[:, 0], atol=1e-10)

    def test_full_rank_identity(self, kernels, rng):
        x = rng.normal(size=(4, 3, 20))
        res = lomoi(x, LomoiConfig((4, 3)))
        assert np.linalg.norm(res.reconstruction - x) <= 1e-10 * np.linalg.norm(x)

    def test_against_hooi_oracle(self, kernels, rng):
        x = rng.normal(size=(7, 7, 200))
        res = lomoi(x, LomoiConfig((3, 3), tolerance=0.0, max_iter=5))
        assert res.sweeps == 5
        assert res.loss == pytest.approx(hooi_oracle(x, (3, 3), res.sweeps), rel=1e-6)

    def test_structure(self, rng):
        x = rng.normal(size=(5, 6, 7))
        res = lomoi(x, LomoiConfig((2, 3), excluded_mode=1))
        assert res.modes == (0, 2)
        assert [f.shape for f in res.factors] == [(5, 2), (7, 3)]
        assert res.core.shape == (2, 6, 3)
        for f in res.factors:
            np.testing.assert_allclose(f.T @ f, np.eye(f.shape[1]), atol=1e-10)

    def test_default_excludes_last(self, rng):
        res = lomoi(rng.normal(size=(3, 3, 4)), LomoiConfig((2, 2)))
        assert res.excluded_mode == 2

    def test_bad_config(self):
        x = np.ones((3, 3, 4))
        for cfg in (
            LomoiConfig((4, 2)),
            LomoiConfig((2,)),
            LomoiConfig((2, 2), excluded_mode=3),
            LomoiConfig((2, 2), max_iter=0),
            LomoiConfig((2, 2), tolerance=-1.0),
        ):
            with pytest.raises(InvalidArgument):
                lomoi(x, cfg)

    def test_tolerance_stops_early(self, rng):
        x = rng.normal(size=(4, 4, 30))
        res = lomoi(x, LomoiConfig((4, 4)))
        assert res.sweeps == 0

    def test_max_iter_bounds_sweeps(self, rng):
        res = lomoi(rng.normal(size=(6, 6, 50)), LomoiConfig((2, 2), tolerance=0.0, max_iter=3))
        assert res.sweeps == 3 and len(res.loss_history) == 4

    def test_deterministic(self, rng):
        x = rng.normal(size=(5, 5, 40))
        a, b = lomoi(x, LomoiConfig((2, 3))), lomoi(x.copy(), LomoiConfig((2, 3)))
        assert a.reconstruction.tobytes() == b.reconstruction.tobytes()
        assert a.loss_history == b.loss_history

    def test_four_mode_tensor(self, rng):
        x = rng.normal(size=(3, 4, 2, 10))
        res = lomoi(x, LomoiConfig((2, 2, 2)))
        assert res.core.shape == (2, 2, 2, 10)
        pyth = res.loss ** 2 + frobenius_norm(res.reconstruction) ** 2
        assert pyth == pytest.approx(frobenius_norm(x) ** 2, rel=1e-8)

    @given(st.integers(0, 2**32 - 1))
    def test_monotone_and_pythagoras(self, seed):
        r = np.random.default_rng(seed)
        shape = (int(r.integers(2, 7)), int(r.integers(2, 7)), int(r.integers(2, 60)))
        ranks = (int(r.integers(1, shape[0] + 1)), int(r.integers(1, shape[1] + 1)))
        x = r.normal(size=shape)
        res = lomoi(x, LomoiConfig(ranks, tolerance=0.0, max_iter=8))
        assert np.all(np.diff(res.loss_history) <= 1e-9)
        xn = frobenius_norm(x)
        assert frobenius_norm(res.reconstruction) <= xn * (1 + 1e-12)
        assert res.loss ** 2 + frobenius_norm(res.reconstruction) ** 2 == pytest.approx(xn ** 2, rel=1e-8)


class TestCoreNorm:
    def test_zero_tensor(self):
        res = lomoi(np.zeros((3, 3, 5)), LomoiConfig((2, 2)))
        assert core_norm(res) == 0.0 and res.sweeps == 0

    def test_full_rank_isometry(self, rng):
        x = rng.normal(size=(4, 5, 12))
        res = lomoi(x, LomoiConfig((4, 5)))
        assert core_norm(res) == pytest.approx(frobenius_norm(x), rel=1e-10)

    def test_projection_contracts(self, rng):
        x = rng.normal(size=(6, 6, 50))
        res = lomoi(x, LomoiConfig((3, 3)))
        assert core_norm(res) <= frobenius_norm(x)
        # core norm equals the norm of the reconstruction (orthonormal factors)
        assert core_norm(res) == pytest.approx(frobenius_norm(res.reconstruction), rel=1e-10)


class TestFromGram:
    def test_matches_dense(self, kernels, rng):
        x = rng.normal(size=(5, 4, 300))
        dense = lomoi(x, LomoiConfig((2, 3), tolerance=0.0, max_iter=6))
        moment = lomoi_from_gram(slab_moment(x), (5, 4), (2, 3), tolerance=0.0, max_iter=6)
        np.testing.assert_allclose(moment.loss_history, dense.loss_history, rtol=1e-7)
        np.testing.assert_allclose(moment.core_norm_history, dense.core_norm_history, rtol=1e-10)
        for a, b in zip(moment.factors, dense.factors):
            np.testing.assert_allclose(np.abs(a.T @ b), np.eye(a.shape[1]), atol=1e-6)

    def test_three_mode_slabs(self, rng):
        x = rng.normal(size=(3, 3, 2, 100))
        dense = lomoi(x, LomoiConfig((2, 2, 1), tolerance=0.0, max_iter=4))
        moment = lomoi_from_gram(slab_moment(x), (3, 3, 2), (2, 2, 1), tolerance=0.0, max_iter=4)
        np.testing.assert_allclose(moment.core_norm_history, dense.core_norm_history, rtol=1e-10)

    def test_mode_gram_is_unfolding_gram(self, rng):
        x = rng.normal(size=(4, 5, 60))
        res = lomoi_from_gram(slab_moment(x), (4, 5), (4, 5), tolerance=0.0, max_iter=1)
        g0 = unfold(x, 0) @ unfold(x, 0).T
        np.testing.assert_allclose(res.singular_values[0] ** 2, np.linalg.eigvalsh(g0)[::-1], rtol=1e-10)

    def test_shape_check(self):
        with pytest.raises(InvalidArgument):
            lomoi_from_gram(np.eye(5), (2, 3), (1, 1))


def test_diagnostics_csv(tmp_path, rng):
    res = lomoi(rng.normal(size=(4, 4, 20)), LomoiConfig((2, 2), tolerance=0.0, max_iter=3))
    path = tmp_path / "d.csv"
    write_diagnostics_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "sweep,loss,core_norm"
    assert len(lines) == 5
    sweep, loss, cn = lines[-1].split(",")
    assert int(sweep) == 3 and float(loss) == res.loss and float(cn) == res.core_norm_history[-1]
