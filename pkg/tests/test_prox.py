"""Proximal operators against closed forms, search oracles, and SVD identities."""

import numpy as np
import pytest

from slrl.errors import ParameterError
from slrl.prox import prox_l21, svd, svt

from _oracles import l21_prox_objective, l21_prox_search, svt_objective


class TestProxL21:
    def test_zero_matrix_fixed_point(self):
        out = prox_l21(np.zeros((4, 6)), 0.7)
        np.testing.assert_array_equal(out, np.zeros((4, 6)))

    def test_closed_form_by_hand(self):
        col = np.array([[3.0], [4.0]])
        np.testing.assert_allclose(prox_l21(col, 1.0), [[2.4], [3.2]], atol=1e-15)

    def test_tie_at_threshold_gives_zero_column(self):
        col = np.array([[0.7], [0.0]])
        np.testing.assert_array_equal(prox_l21(col, 0.7), np.zeros((2, 1)))

    def test_nonpositive_threshold_rejected(self):
        with pytest.raises(ParameterError):
            prox_l21(np.ones((2, 2)), 0.0)
        with pytest.raises(ParameterError):
            prox_l21(np.ones((2, 2)), -1.0)

    def test_matches_scalar_search_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            c = rng.normal(size=(5, 8))
            theta = float(rng.uniform(0.01, 2.0))
            out = prox_l21(c, theta)
            gap = l21_prox_objective(out, c, theta) - l21_prox_search(c, theta)
            assert gap <= 1e-8

    def test_column_geometry(self):
        rng = np.random.default_rng(11)
        c = rng.normal(size=(6, 10))
        theta = 0.8
        out = prox_l21(c, theta)
        in_norms = np.linalg.norm(c, axis=0)
        out_norms = np.linalg.norm(out, axis=0)
        np.testing.assert_allclose(
            out_norms, np.maximum(0.0, in_norms - theta), atol=1e-12
        )
        for j in range(c.shape[1]):
            if out_norms[j] > 0:
                cos = out[:, j] @ c[:, j] / (out_norms[j] * in_norms[j])
                assert cos == pytest.approx(1.0, abs=1e-12)

    def test_firmly_nonexpansive(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            x = rng.normal(size=(4, 7))
            y = rng.normal(size=(4, 7))
            theta = float(rng.uniform(0.05, 1.5))
            lhs = np.linalg.norm(prox_l21(x, theta) - prox_l21(y, theta))
            assert lhs <= np.linalg.norm(x - y) + 1e-12


class TestSvt:
    def test_diagonal_shrinkage(self):
        b, factors = svt(np.diag([3.0, 1.0, 0.2]), 0.5)
        np.testing.assert_allclose(b, np.diag([2.5, 0.5, 0.0]), atol=1e-12)
        assert factors.rank == 2

    def test_full_shrinkage_to_zero(self):
        rng = np.random.default_rng(13)
        d = rng.normal(size=(4, 5))
        top = np.linalg.svd(d, compute_uv=False)[0]
        b, factors = svt(d, top * 1.01)
        np.testing.assert_array_equal(b, np.zeros_like(d))
        assert factors.rank == 0

    def test_outputs_shrunk_singular_values(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            d = rng.normal(size=(6, 9))
            theta = float(rng.uniform(0.1, 1.5))
            b, factors = svt(d, theta)
            want = np.maximum(np.linalg.svd(d, compute_uv=False) - theta, 0.0)
            got = np.zeros_like(want)
            sv = np.linalg.svd(b, compute_uv=False)
            got[: sv.size] = sv
            np.testing.assert_allclose(got, want, atol=1e-8)
            np.testing.assert_allclose(factors.reconstruct(), b, atol=1e-10)

    def test_rank_never_increases(self):
        rng = np.random.default_rng(15)
        u = rng.normal(size=(6, 2))
        v = rng.normal(size=(2, 8))
        d = u @ v
        b, _ = svt(d, 0.1)
        rank_in = int((np.linalg.svd(d, compute_uv=False) > 1e-10).sum())
        rank_out = int((np.linalg.svd(b, compute_uv=False) > 1e-10).sum())
        assert rank_out <= rank_in

    def test_beats_random_perturbations(self):
        rng = np.random.default_rng(16)
        d = rng.normal(size=(5, 6))
        theta = 0.6
        b, _ = svt(d, theta)
        base = svt_objective(b, d, theta)
        for _ in range(200):
            delta = rng.normal(size=b.shape) * rng.uniform(1e-4, 0.5)
            assert base <= svt_objective(b + delta, d, theta) + 1e-12

    def test_nonpositive_threshold_rejected(self):
        with pytest.raises(ParameterError):
            svt(np.ones((2, 2)), 0.0)


class TestSvd:
    def test_identity(self):
        f = svd(np.eye(3))
        np.testing.assert_allclose(f.singular_values, [1.0, 1.0, 1.0], atol=1e-14)

    def test_rank_one(self):
        rng = np.random.default_rng(17)
        u = rng.normal(size=4)
        v = rng.normal(size=6)
        f = svd(np.outer(u, v))
        want = np.linalg.norm(u) * np.linalg.norm(v)
        assert f.singular_values[0] == pytest.approx(want, abs=1e-10)
        assert np.all(f.singular_values[1:] <= 1e-10)

    def test_reconstruction_and_ordering(self):
        rng = np.random.default_rng(18)
        for _ in range(10):
            a = rng.normal(size=(7, 5))
            f = svd(a)
            rel = np.linalg.norm(f.reconstruct() - a) / np.linalg.norm(a)
            assert rel <= 1e-8
            assert np.all(np.diff(f.singular_values) <= 1e-14)
            assert np.all(f.singular_values >= 0)

    def test_deterministic(self):
        rng = np.random.default_rng(19)
        a = rng.normal(size=(6, 6))
        f1, f2 = svd(a), svd(a)
        np.testing.assert_array_equal(f1.u, f2.u)
        np.testing.assert_array_equal(f1.singular_values, f2.singular_values)
        np.testing.assert_array_equal(f1.v, f2.v)
