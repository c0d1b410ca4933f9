"""
Tests for Tucker approximation, rank estimation and nearly-low-rank denoising.
"""

import numpy as np
import pytest

from tensor.core import frobenius, mode_product, unfold
from tensor.lowrank import (TuckerFactors, estimate_ranks, hooi, hosvd, nearly_lowrank_denoise,
                            tucker_reconstruct, validate_ranks)


def planted_tucker(dims, ranks, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    core = rng.standard_normal(ranks)
    out = core
    for mode, (d, r) in enumerate(zip(dims, ranks), start=1):
        q, _ = np.linalg.qr(rng.standard_normal((d, r)))
        out = mode_product(out, q, mode)
    return out + noise * rng.standard_normal(dims)


def _orthonormal(u):
    return np.linalg.norm(u.T @ u - np.eye(u.shape[1])) <= 1e-10


def test_validate_ranks():
    assert validate_ranks((2, 2, 2), (3, 3, 3)) == (2, 2, 2)
    with pytest.raises(ValueError):
        validate_ranks((4, 1, 1), (3, 3, 3))
    with pytest.raises(ValueError):
        validate_ranks((0, 1, 1), (3, 3, 3))
    with pytest.raises(ValueError):
        validate_ranks((1, 1), (3, 3, 3))


def test_hosvd_rank_one_outer_product():
    rng = np.random.default_rng(0)
    a, b, c = (v / np.linalg.norm(v) for v in (rng.standard_normal(4), rng.standard_normal(5),
                                              rng.standard_normal(6)))
    t = 5.0 * np.einsum("i,j,k->ijk", a, b, c)
    f = hosvd(t, (1, 1, 1))
    assert frobenius(t - f.reconstruct()) < 1e-10
    assert abs(f.core[0, 0, 0]) == pytest.approx(5.0, abs=1e-10)


@pytest.mark.parametrize("decompose", [hosvd, hooi])
def test_full_ranks_reconstruct_exactly(decompose):
    t = np.random.default_rng(1).standard_normal((3, 4, 5))
    f = decompose(t, t.shape)
    assert frobenius(t - f.reconstruct()) < 1e-10
    assert all(_orthonormal(u) for u in f.factors)


def test_zero_tensor_gives_zero_core():
    f = hooi(np.zeros((3, 3, 3)), (2, 2, 2))
    assert not f.core.any()
    assert all(_orthonormal(u) for u in f.factors)


def test_degenerate_mode_uses_identity():
    t = np.random.default_rng(2).standard_normal((1, 4, 5))
    f = hooi(t, (1, 2, 2))
    np.testing.assert_array_equal(f.factors[0], np.ones((1, 1)))


@pytest.mark.parametrize("seed", range(20))
def test_hooi_recovers_planted_rank_222(seed):
    t = planted_tucker((6, 7, 8), (2, 2, 2), seed)
    f = hooi(t, (2, 2, 2))
    assert frobenius(t - f.reconstruct()) < 1e-8
    assert all(_orthonormal(u) for u in f.factors)


@pytest.mark.parametrize("seed", range(20))
def test_hooi_fit_monotone_and_beats_hosvd(seed):
    t = np.random.default_rng(seed).standard_normal((8, 8, 8))
    f = hooi(t, (3, 3, 3), max_iter=20, tol=0.0)
    fits = np.array(f.fit_history)
    assert np.all(np.diff(fits) >= -1e-12)
    err_hooi = frobenius(t - f.reconstruct())
    err_hosvd = frobenius(t - hosvd(t, (3, 3, 3)).reconstruct())
    assert err_hooi <= err_hosvd + 1e-12


def test_tucker_reconstruct_identity_factors_and_nested_sum():
    rng = np.random.default_rng(3)
    core = rng.standard_normal((3, 3, 3))
    f = TuckerFactors(core=core, factors=(np.eye(3), np.eye(3), np.eye(3)))
    np.testing.assert_array_equal(tucker_reconstruct(f), core)

    us = tuple(rng.standard_normal((3, 3)) for _ in range(3))
    out = tucker_reconstruct(TuckerFactors(core=core, factors=us))
    expected = np.zeros((3, 3, 3))
    for i, j, k in np.ndindex(3, 3, 3):
        expected[i, j, k] = sum(core[p, q, r] * us[0][i, p] * us[1][j, q] * us[2][k, r]
                                for p, q, r in np.ndindex(3, 3, 3))
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_estimate_ranks_examples():
    t = planted_tucker((6, 7, 8), (2, 2, 2), seed=4)
    assert estimate_ranks(t, 0.0, 0.999) == (2, 2, 2)
    full = np.random.default_rng(5).standard_normal((4, 5, 6))
    assert estimate_ranks(full, 0.0, 1.0) == (3, 4, 5)
    rank_one = planted_tucker((5, 5, 5), (1, 1, 1), seed=6, noise=1e-6)
    assert estimate_ranks(rank_one, 0.0, 0.99) == (1, 1, 1)


def test_estimate_ranks_noise_floor_lowers_ranks():
    t = planted_tucker((10, 10, 10), (2, 2, 2), seed=7, noise=0.05)
    with_floor = estimate_ranks(t, 0.05, 0.99)
    without = estimate_ranks(t, 0.0, 0.99)
    assert all(a <= b for a, b in zip(with_floor, without))


def test_nearly_lowrank_limits():
    x = np.random.default_rng(8).standard_normal((4, 5, 6))
    np.testing.assert_allclose(nearly_lowrank_denoise(x, 1e-12, (2, 2, 2)), x, atol=1e-9)
    rank_one = planted_tucker((4, 5, 6), (1, 1, 1), seed=9)
    for lam in (0.1, 10.0, 1000.0):
        np.testing.assert_allclose(nearly_lowrank_denoise(rank_one, lam, (1, 1, 1)), rank_one, atol=1e-8)
    with pytest.raises(ValueError):
        nearly_lowrank_denoise(x, 0.0, (2, 2, 2))


@pytest.mark.parametrize("seed", range(10))
def test_nearly_lowrank_reduces_error(seed):
    clean = planted_tucker((8, 8, 8), (2, 2, 2), seed)
    noisy = clean + 0.1 * np.random.default_rng(seed + 100).standard_normal(clean.shape)
    out = nearly_lowrank_denoise(noisy, 50.0, (2, 2, 2))
    assert frobenius(out - clean) < frobenius(noisy - clean)


def test_nearly_lowrank_objective_non_increasing():
    clean = planted_tucker((8, 8, 8), (2, 2, 2), 11)
    noisy = clean + 0.1 * np.random.default_rng(12).standard_normal(clean.shape)
    history = []
    nearly_lowrank_denoise(noisy, 5.0, (2, 2, 2), iters=10, history=history)
    assert len(history) == 10
    assert np.all(np.diff(history) <= 1e-9 * history[0])


class TestLongTailSpectrum:
    """Mode-3 spectra of a noisy group: hard Tucker truncation versus the nearly-low-rank estimate."""

    ranks = (2, 2, 2)

    @classmethod
    def setup_class(cls):
        clean = planted_tucker((9, 10, 12), cls.ranks, 13)
        noisy = clean + 0.1 * np.random.default_rng(14).standard_normal(clean.shape)
        cls.sv_noisy = np.linalg.svd(unfold(noisy, 3), compute_uv=False)
        cls.sv_hard = np.linalg.svd(unfold(hooi(noisy, cls.ranks).reconstruct(), 3), compute_uv=False)
        cls.sv_soft = np.linalg.svd(unfold(nearly_lowrank_denoise(noisy, 5.0, cls.ranks), 3), compute_uv=False)
        cls.tail = slice(cls.ranks[2], None)

    def test_hard_truncation_cuts_the_tail(self):
        assert np.all(self.sv_hard[self.tail] < 1e-10)

    def test_nearly_lowrank_keeps_a_shrunk_tail(self):
        assert np.all(self.sv_soft[self.tail] > 1e-6)
        assert np.all(self.sv_soft[self.tail] < self.sv_noisy[self.tail])
