"""
Tests for the ADMM solver and the end-to-end denoiser.
"""

import copy
import dataclasses

import numpy as np
import pytest

from config.schema import LtdlConfig
from data.noise import add_gaussian_noise
from data.synthetic import make_lowrank_cube
from denoise.dictionary import DictionaryPair, init_dictionaries, normalize_columns
from denoise.ltdl import (GroupState, SolverDivergedError, SolverReport, ZSystem, augmented_lagrangian,
                          denoise, learn_dictionaries, objective, reconstruct, run_admm, soft_threshold,
                          update_c, update_t, update_y, update_z, warm_start)
from metrics.quality import psnr, sam
from tensor.core import mode_product, unfold


def _toy(seed, n_groups=2, dims=(16, 8, 10), ranks=(4, 4, 3), noise=0.1):
    rng = np.random.default_rng(seed)
    groups = []
    for _ in range(n_groups):
        x = rng.standard_normal(ranks)
        for mode, (d, r) in enumerate(zip(dims, ranks), start=1):
            x = mode_product(x, rng.standard_normal((d, r)), mode)
        groups.append(x / np.abs(x).max() + noise * rng.standard_normal(dims))
    dicts = init_dictionaries(groups, 1.5, 1.5, seed=seed)
    states = [GroupState.initial(x, ranks, dicts.d_a.shape[1], dicts.d_e.shape[1]) for x in groups]
    return states, dicts


def _random_state(seed, lambda_r_dims=(6, 5, 3)):
    rng = np.random.default_rng(seed)
    m, h, s = lambda_r_dims
    d_a = normalize_columns(rng.standard_normal((m, 9)))
    d_e = normalize_columns(rng.standard_normal((h, 7)))
    dicts = DictionaryPair(d_a=d_a, d_e=d_e, tau_a=1.5, tau_e=1.4)
    state = GroupState.initial(rng.standard_normal((m, h, s)), (2, 2, 2), 9, 7)
    state.z = rng.standard_normal(state.z.shape)
    state.c = rng.standard_normal(state.c.shape)
    state.y = rng.standard_normal(state.y.shape)
    state.t = rng.standard_normal(state.t.shape)
    return state, dicts


def _z_objective(state, dicts, rho, lambda_r, z):
    """The part of the augmented Lagrangian that depends on Z."""
    recon = mode_product(mode_product(z, dicts.d_a, 1), dicts.d_e, 2)
    return (np.sum((state.x - recon) ** 2) + lambda_r * np.sum((recon - state.t) ** 2)
            + np.sum((state.c - z) * state.y) + 0.5 * rho * np.sum((state.c - z) ** 2))


def test_group_state_dims():
    states, dicts = _toy(0)
    s = states[0]
    assert s.z.shape == (24, 12, 10)
    assert s.t.shape == s.x.shape
    assert reconstruct(s, dicts).shape == s.x.shape
    with pytest.raises(ValueError):
        GroupState.initial(np.zeros((4, 4, 4)), (5, 1, 1), 6, 6)


def test_update_t_zero_code_and_full_ranks():
    states, dicts = _toy(1)
    s = states[0]
    assert not update_t(s, dicts).any()

    rng = np.random.default_rng(1)
    full = GroupState.initial(s.x, s.x.shape, dicts.d_a.shape[1], dicts.d_e.shape[1])
    full.z = rng.standard_normal(full.z.shape)
    t = update_t(full, dicts)
    np.testing.assert_allclose(t, reconstruct(full, dicts), atol=1e-10)


def test_update_t_never_worsens_fit():
    states, dicts = _toy(2)
    warm_start(states, dicts, 0.01)
    s = states[0]
    recon = reconstruct(s, dicts)
    update_t(s, dicts)
    first = np.sum((recon - s.t) ** 2)
    update_t(s, dicts)
    assert np.sum((recon - s.t) ** 2) <= first * (1.0 + 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_update_z_zeroes_gradient(seed):
    state, dicts = _random_state(seed)
    rho, lambda_r = 0.7, 3.0
    z = update_z(state, dicts, rho, lambda_r)
    rng = np.random.default_rng(seed + 100)
    scale = _z_objective(state, dicts, rho, lambda_r, z)
    for _ in range(10):
        v = rng.standard_normal(z.shape)
        eps = 1e-4
        deriv = (_z_objective(state, dicts, rho, lambda_r, z + eps * v)
                 - _z_objective(state, dicts, rho, lambda_r, z - eps * v)) / (2 * eps)
        assert abs(deriv) < 1e-6 * max(1.0, abs(scale))


def _cg(matvec, b, tol=1e-13, max_iter=2000):
    x = np.zeros_like(b)
    r = b - matvec(x)
    p = r.copy()
    rs = r @ r
    for _ in range(max_iter):
        ap = matvec(p)
        alpha = rs / (p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = r @ r
        if np.sqrt(rs_new) < tol * np.linalg.norm(b):
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


@pytest.mark.parametrize("seed", range(10))
def test_update_z_matches_conjugate_gradient(seed):
    state, dicts = _random_state(seed)
    rho, lambda_r = 0.3, 2.0
    z = update_z(state, dicts, rho, lambda_r)

    d = dicts.equivalent()
    system = (2 + 2 * lambda_r) * d.T @ d + rho * np.eye(d.shape[1])
    rhs = (2 * unfold(state.x, 3) + 2 * lambda_r * unfold(state.t, 3)) @ d + rho * unfold(state.c, 3) + unfold(state.y, 3)
    oracle = np.stack([_cg(lambda v: system @ v, row) for row in rhs])
    np.testing.assert_allclose(unfold(z, 3), oracle, rtol=1e-8, atol=1e-8 * np.abs(oracle).max())


def test_update_z_proximal_limit():
    state, dicts = _random_state(3)
    state.c[:] = 0.0
    state.y[:] = 0.0
    z = update_z(state, dicts, 1e12, 0.0)
    assert np.abs(z).max() < 1e-9


def test_z_system_rejects_non_positive_rho():
    _, dicts = _random_state(0)
    with pytest.raises(ValueError):
        ZSystem(dicts, 1.0, 0.0)


def test_soft_threshold_examples():
    np.testing.assert_allclose(soft_threshold(np.array([1.2, -0.3, -2.0]), 0.5), [0.7, 0.0, -1.5])
    t = np.random.default_rng(0).standard_normal((3, 3, 3))
    np.testing.assert_array_equal(soft_threshold(t, 0.0), t)
    with pytest.raises(ValueError):
        soft_threshold(t, -1.0)


@pytest.mark.parametrize("m", [-2.3, -0.4, 0.0, 0.05, 0.6, 3.1])
def test_soft_threshold_is_prox_of_l1(m):
    lambda_s, rho = 0.8, 2.0
    prox = lambda c: lambda_s * np.abs(c) + 0.5 * rho * (c - m) ** 2
    grid = np.linspace(-5.0, 5.0, 2_000_001)
    best = prox(grid).min()
    ours = prox(soft_threshold(np.array([m]), lambda_s / rho)[0])
    assert ours <= best + 1e-9


def test_update_c_and_y():
    state, _ = _random_state(4)
    c = update_c(state, 2.0, 0.0)
    np.testing.assert_allclose(c, state.z - state.y / 2.0)

    state.c = state.z.copy()
    y0 = state.y.copy()
    np.testing.assert_array_equal(update_y(state, 5.0), y0)

    state.y = np.zeros_like(state.y)
    state.c = state.z + 1.0
    np.testing.assert_allclose(update_y(state, 2.0), 2.0 * np.ones_like(state.y))


def test_objective_examples():
    states, dicts = _toy(5)
    for s in states:
        s.x = np.zeros_like(s.x)
    assert objective(states, dicts, 0.3, 4.0) == 0.0

    states, dicts = _toy(6, n_groups=1)
    s = states[0]
    s.t = np.random.default_rng(6).standard_normal(s.t.shape)
    expected = np.sum(s.x ** 2) + 4.0 * np.sum(s.t ** 2)
    assert objective(states, dicts, 0.3, 4.0) == pytest.approx(expected, rel=1e-12)


def test_objective_brute_force_two_groups():
    states, dicts = _toy(7)
    rng = np.random.default_rng(7)
    for s in states:
        s.z = rng.standard_normal(s.z.shape)
        s.t = rng.standard_normal(s.t.shape)
    d = dicts.equivalent()
    total = 0.0
    for s in states:
        recon3 = unfold(s.z, 3) @ d.T
        total += np.sum((unfold(s.x, 3) - recon3) ** 2)
        total += 0.2 * np.sum(np.abs(s.z))
        total += 3.0 * np.sum((recon3 - unfold(s.t, 3)) ** 2)
    assert objective(states, dicts, 0.2, 3.0) == pytest.approx(total, rel=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_augmented_lagrangian_non_increasing_over_block_updates(seed):
    states, dicts = _toy(seed)
    lambda_s, lambda_r, rho = 0.01, 5.0, 0.05
    warm_start(states, dicts, rho)
    for s in states:
        s.y = 0.01 * np.random.default_rng(seed).standard_normal(s.y.shape)
    system = ZSystem(dicts, lambda_r, rho)
    values = [augmented_lagrangian(states, dicts, lambda_s, lambda_r, rho)]
    for step in (lambda s: update_t(s, dicts), lambda s: update_z(s, dicts, rho, lambda_r, system),
                 lambda s: update_c(s, rho, lambda_s)):
        for s in states:
            step(s)
        values.append(augmented_lagrangian(states, dicts, lambda_s, lambda_r, rho))
    for before, after in zip(values, values[1:]):
        assert after <= before + 1e-9 * abs(before)


def _running_max_drift(values):
    running = np.maximum.accumulate(values)
    return running[-1] / running[-11] - 1.0


def test_frozen_dictionary_rates():
    states, dicts = _toy(11)
    cfg = LtdlConfig(rho0=0.01, mu=1.3, max_outer_iters=40, tol_residual=1e-30, dict_update_every=0)
    frozen = dicts.copy()
    warm_start(states, dicts, cfg.rho0)
    report = run_admm(states, dicts, cfg, lambda_s=0.01, lambda_r=5.0)
    assert len(report.records) == 40
    np.testing.assert_array_equal(dicts.d_a, frozen.d_a)
    for name in ("residual", "dz", "dxhat"):
        scaled = np.array([r.rho * getattr(r, name) for r in report.records])
        assert np.all(np.isfinite(scaled))
        assert _running_max_drift(scaled) < 0.05, name
    rhos = [r.rho for r in report.records]
    np.testing.assert_allclose(rhos, 0.01 * 1.3 ** np.arange(40), rtol=1e-12)


def test_rho_is_capped():
    states, dicts = _toy(12)
    cfg = LtdlConfig(rho0=1.0, mu=10.0, rho_max=100.0, max_outer_iters=5, tol_residual=1e-30,
                     dict_update_every=0)
    warm_start(states, dicts, cfg.rho0)
    report = run_admm(states, dicts, cfg, 0.01, 1.0)
    assert [r.rho for r in report.records] == [1.0, 10.0, 100.0, 100.0, 100.0]


def test_group_order_and_workers_do_not_change_states():
    states, dicts = _toy(13, n_groups=3)
    cfg = LtdlConfig(max_outer_iters=1, tol_residual=1e-30)
    warm_start(states, dicts, cfg.rho0)
    forward = copy.deepcopy(states)
    backward = copy.deepcopy(states)[::-1]
    threaded = copy.deepcopy(states)
    run_admm(forward, dicts.copy(), cfg, 0.01, 5.0)
    run_admm(backward, dicts.copy(), cfg, 0.01, 5.0)
    run_admm(threaded, dicts.copy(), dataclasses.replace(cfg, workers=3), 0.01, 5.0)
    for a, b, c in zip(forward, backward[::-1], threaded):
        for name in ("z", "c", "t", "y"):
            np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-12, rtol=0)
            np.testing.assert_allclose(getattr(a, name), getattr(c, name), atol=1e-12, rtol=0)


def test_multiplier_change_bounded_after_convergence():
    states, dicts = _toy(14)
    cfg = LtdlConfig(max_outer_iters=60, dict_update_every=0, tol_residual=1e-4)
    warm_start(states, dicts, cfg.rho0)
    report = run_admm(states, dicts, cfg, 0.01, 5.0)
    assert report.converged
    last = report.records[-1]
    # ||Y_l+1 - Y_l|| = rho ||C - Z||
    bound = last.rho * cfg.tol_residual * max(np.linalg.norm(s.z) for s in states)
    assert last.rho * last.residual <= bound


def test_divergence_names_group_and_iteration():
    states, dicts = _toy(15)
    states[1].y[0, 0, 0] = np.nan
    with pytest.raises(SolverDivergedError, match="group 1 at iteration 1"):
        run_admm(states, dicts, LtdlConfig(max_outer_iters=3), 0.01, 5.0)


@pytest.mark.parametrize("workers", [1, 2])
@pytest.mark.parametrize("name", ["z", "c", "y"])
def test_divergence_in_any_block_names_the_group(name, workers):
    states, dicts = _toy(15, n_groups=3)
    getattr(states[2], name)[1, 1, 1] = np.inf
    with pytest.raises(SolverDivergedError, match="group 2 at iteration 1"):
        run_admm(states, dicts, LtdlConfig(max_outer_iters=2, workers=workers), 0.01, 5.0)


def test_zero_lambda_r_leaves_target_untouched():
    states, dicts = _toy(20)
    report = run_admm(states, dicts, LtdlConfig(max_outer_iters=3, tol_residual=1e-30), 0.01, 0.0)
    assert len(report.records) == 3
    for s in states:
        assert not s.t.any()
        assert s.z.any()


def test_callback_and_stop_flag():
    states, dicts = _toy(16)
    seen = []
    cfg = LtdlConfig(max_outer_iters=10, tol_residual=1e-30)
    report = run_admm(states, dicts, cfg, 0.01, 5.0, callback=lambda it, s, d: seen.append(it),
                      should_stop=lambda: len(seen) >= 3)
    assert seen == [1, 2, 3]
    assert report.interrupted
    assert not report.converged


def test_report_rendering():
    states, dicts = _toy(17)
    report = run_admm(states, dicts, LtdlConfig(max_outer_iters=2, tol_residual=1e-30), 0.01, 5.0)
    assert isinstance(report, SolverReport)
    assert len(report.csv_rows()) == 2
    assert report.csv_rows()[0][0] == 1
    assert report.lines()[1].startswith("iter   2")
    for r in report.records:
        assert all(np.isfinite(v) for v in (r.objective, r.residual, r.dz, r.dxhat, r.rho, r.seconds))


def test_learn_dictionaries_keeps_unit_atoms():
    states, dicts = _toy(18)
    groups = [s.x for s in states]
    cfg = LtdlConfig(max_outer_iters=3)
    out_states, learned, report = learn_dictionaries(groups, [s.ranks for s in states], cfg, 0.01, 5.0)
    np.testing.assert_allclose(np.linalg.norm(learned.d_a, axis=0), 1.0, atol=1e-8)
    np.testing.assert_allclose(np.linalg.norm(learned.d_e, axis=0), 1.0, atol=1e-8)
    assert all(reconstruct(s, learned).shape == s.x.shape for s in out_states)
    with pytest.raises(ValueError):
        learn_dictionaries(groups, [(2, 2, 2)], cfg, 0.01, 5.0)


def test_denoise_is_deterministic():
    cube = add_gaussian_noise(make_lowrank_cube(16, 16, 6, seed=1), 0.05, seed=2)
    cfg = LtdlConfig(max_outer_iters=2, noise_sigma=0.05, seed=4)
    a, dicts_a, _ = denoise(cube, cfg)
    b, dicts_b, _ = denoise(cube, cfg)
    assert a.shape == cube.shape
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(dicts_a.d_a, dicts_b.d_a)


def test_denoise_reports_phases_in_order():
    cube = add_gaussian_noise(make_lowrank_cube(16, 16, 6, seed=1), 0.05, seed=2)
    phases = []
    denoise(cube, LtdlConfig(max_outer_iters=1, noise_sigma=0.05), on_phase=phases.append)
    assert phases == ["grouping", "solving"]


def test_denoise_estimates_noise_when_not_given():
    cube = add_gaussian_noise(make_lowrank_cube(16, 16, 6, seed=3), 0.1, seed=3)
    _, _, report = denoise(cube, LtdlConfig(max_outer_iters=1))
    assert 0.05 < report.noise_sigma < 0.2
    assert report.lambda_s == pytest.approx(0.1 * report.noise_sigma)
    assert report.lambda_r == pytest.approx(500.0 * report.noise_sigma)


def test_zero_noise_is_near_identity():
    clean = make_lowrank_cube(32, 32, 8, seed=5)
    cfg = LtdlConfig(noise_sigma=0.0, lambda_s=0.0, lambda_r=0.0, rho0=1e-6)
    out, _, _ = denoise(clean, cfg)
    assert psnr(clean, out) >= 60.0


@pytest.mark.slow
def test_desk_scale_denoising():
    gains, sam_pairs = [], []
    for seed in range(3):
        clean = make_lowrank_cube(64, 64, 16, seed=seed)
        noisy = add_gaussian_noise(clean, 0.1, seed=seed + 10)
        out, _, _ = denoise(noisy, LtdlConfig(noise_sigma=0.1, seed=seed))
        gains.append(psnr(clean, out) - psnr(clean, noisy))
        sam_pairs.append((sam(clean, out), sam(clean, noisy)))
    assert np.mean(gains) >= 8.0
    assert np.mean([a for a, _ in sam_pairs]) < np.mean([b for _, b in sam_pairs])


@pytest.mark.parametrize("warm", [True, False])
def test_learn_dictionaries_warm_start_switch(warm):
    states, dicts = _toy(21)
    cfg = LtdlConfig(max_outer_iters=2, tol_residual=1e-30, warm_start=warm)
    out, learned, _ = learn_dictionaries([s.x for s in states], [s.ranks for s in states], cfg, 0.01, 5.0,
                                         dicts=dicts)
    manual = copy.deepcopy(states)
    for s in manual:
        assert not (s.z.any() or s.c.any() or s.y.any() or s.t.any())
    manual_dicts = dicts.copy()
    if warm:
        warm_start(manual, manual_dicts, cfg.rho0)
    run_admm(manual, manual_dicts, cfg, 0.01, 5.0)
    for a, b in zip(out, manual):
        np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(learned.d_a, manual_dicts.d_a)
