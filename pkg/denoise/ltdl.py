"""
ADMM solver for tensor dictionary learning with a nearly-low-rank penalty.

Each tensor group X^(k) carries a code Z^(k), its sparse copy C^(k), a
low-rank target T^(k) and a multiplier Y^(k). One outer iteration updates
T, Z and C for every group, then both dictionaries, then every Y, and
finally grows the penalty rho <- mu * rho.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from config.schema import LtdlConfig
from data.noise import estimate_noise_sigma
from denoise.dictionary import (DictionaryPair, init_dictionaries, low_rank_blend,
                                update_spatial_dictionary, update_spectral_dictionary)
from denoise.grouping import aggregate, cluster_blocks, extract_blocks, form_groups, with_estimate
from tensor.core import as_tensor, frobenius, mode_product, multi_mode_product
from tensor.lowrank import RankTriple, estimate_ranks, hooi, validate_ranks

log = logging.getLogger(__name__)


class SolverDivergedError(RuntimeError):
    """A group state picked up NaN or Inf values."""


@dataclass
class GroupState:
    x: np.ndarray
    z: np.ndarray
    c: np.ndarray
    t: np.ndarray
    y: np.ndarray
    ranks: RankTriple

    @classmethod
    def initial(cls, x: np.ndarray, ranks, n_spatial_atoms: int, n_spectral_atoms: int) -> "GroupState":
        """Zero code, auxiliary, target and multiplier for group `x`."""
        x = as_tensor(x, "group")
        ranks = validate_ranks(ranks, x.shape)
        code_shape = (n_spatial_atoms, n_spectral_atoms, x.shape[2])
        return cls(x=x, z=np.zeros(code_shape), c=np.zeros(code_shape), t=np.zeros(x.shape),
                   y=np.zeros(code_shape), ranks=ranks)


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    residual: float
    dz: float
    dxhat: float
    dict_objective: float
    rho: float
    seconds: float


@dataclass
class SolverReport:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    interrupted: bool = False
    lambda_s: float = 0.0
    lambda_r: float = 0.0
    noise_sigma: float = 0.0
    z_condition: float = 1.0

    CSV_HEADER = ("iter", "objective", "residual", "dz", "dxhat", "rho", "seconds")

    def csv_rows(self) -> list[tuple]:
        return [(r.iteration, r.objective, r.residual, r.dz, r.dxhat, r.rho, r.seconds)
                for r in self.records]

    def lines(self) -> list[str]:
        return [format_record(r) for r in self.records]


def format_record(r: IterationRecord) -> str:
    return (f"iter {r.iteration:3d}  objective {r.objective:.6e}  residual {r.residual:.3e}  "
            f"dz {r.dz:.3e}  dxhat {r.dxhat:.3e}  dict {r.dict_objective:.6e}  "
            f"rho {r.rho:.4g}  {r.seconds:.2f}s")


def reconstruct(state: GroupState, dicts: DictionaryPair) -> np.ndarray:
    """Z x_1 D^a x_2 D^e."""
    return mode_product(mode_product(state.z, dicts.d_a, 1), dicts.d_e, 2)


class ZSystem:
    """Shared solver for ((2 + 2 lambda_r) D^T D + rho I) with D = D^e (x) D^a.

    D^T D = (D^eT D^e) (x) (D^aT D^a), so the system diagonalises in the
    Kronecker product of the two small eigenbases and every solve is four
    mode products and an elementwise division.
    """

    def __init__(self, dicts: DictionaryPair, lambda_r: float, rho: float):
        if rho <= 0.0:
            raise ValueError(f"rho must be positive, got {rho}")
        wa, self.va = scipy.linalg.eigh(dicts.d_a.T @ dicts.d_a, check_finite=False)
        we, self.ve = scipy.linalg.eigh(dicts.d_e.T @ dicts.d_e, check_finite=False)
        gram = np.outer(np.clip(wa, 0.0, None), np.clip(we, 0.0, None))
        self.denom = (2.0 + 2.0 * lambda_r) * gram + rho
        self.condition = float(self.denom.max() / self.denom.min())
        self.dicts = dicts
        self.lambda_r = lambda_r
        self.rho = rho

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        w = multi_mode_product(rhs, (self.va, self.ve), (1, 2), transpose=True) / self.denom[:, :, None]
        return multi_mode_product(w, (self.va, self.ve), (1, 2))

    def rhs(self, state: GroupState) -> np.ndarray:
        data = 2.0 * state.x + 2.0 * self.lambda_r * state.t
        back = multi_mode_product(data, (self.dicts.d_a, self.dicts.d_e), (1, 2), transpose=True)
        return back + self.rho * state.c + state.y


def update_t(state: GroupState, dicts: DictionaryPair, hooi_max_iter: int = 50,
             hooi_tol: float = 1e-6) -> np.ndarray:
    """T <- HOOI(Z x_1 D^a x_2 D^e, ranks); the old T stays if it fits better."""
    recon = reconstruct(state, dicts)
    candidate = hooi(recon, state.ranks, max_iter=hooi_max_iter, tol=hooi_tol).reconstruct()
    if frobenius(recon - state.t) < frobenius(recon - candidate):
        return state.t
    state.t = candidate
    return candidate


def update_z(state: GroupState, dicts: DictionaryPair, rho: float, lambda_r: float,
             system: ZSystem | None = None) -> np.ndarray:
    """Closed-form code update.

    Z_(3) = ((2 X_(3) + 2 lambda_r T_(3)) D + rho C_(3) + Y_(3)) ((2 + 2 lambda_r) D^T D + rho I)^-1
    """
    system = system or ZSystem(dicts, lambda_r, rho)
    state.z = system.solve(system.rhs(state))
    return state.z


def soft_threshold(t, tau: float) -> np.ndarray:
    """Elementwise sign(m) * max(0, |m| - tau)."""
    if tau < 0.0:
        raise ValueError(f"threshold must be non-negative, got {tau}")
    t = np.asarray(t, dtype=np.float64)
    return np.sign(t) * np.maximum(np.abs(t) - tau, 0.0)


def update_c(state: GroupState, rho: float, lambda_s: float) -> np.ndarray:
    """C <- soft_{lambda_s / rho}(Z - Y / rho)."""
    state.c = soft_threshold(state.z - state.y / rho, lambda_s / rho)
    return state.c


def update_y(state: GroupState, rho: float) -> np.ndarray:
    """Y <- Y + rho (C - Z)."""
    state.y = state.y + rho * (state.c - state.z)
    return state.y


def objective(states: list[GroupState], dicts: DictionaryPair, lambda_s: float, lambda_r: float) -> float:
    """Sum over groups of ||X - Z x D||^2 + lambda_s ||Z||_1 + lambda_r ||Z x D - T||^2."""
    total = 0.0
    for s in states:
        recon = reconstruct(s, dicts)
        total += (frobenius(s.x - recon) ** 2 + lambda_s * float(np.abs(s.z).sum())
                  + lambda_r * frobenius(recon - s.t) ** 2)
    return total


def augmented_lagrangian(states: list[GroupState], dicts: DictionaryPair, lambda_s: float,
                         lambda_r: float, rho: float) -> float:
    """Augmented Lagrangian of the split problem with C = Z."""
    total = 0.0
    for s in states:
        recon = reconstruct(s, dicts)
        gap = s.c - s.z
        total += (frobenius(s.x - recon) ** 2 + lambda_s * float(np.abs(s.c).sum())
                  + float(np.sum(gap * s.y)) + 0.5 * rho * frobenius(gap) ** 2
                  + lambda_r * frobenius(recon - s.t) ** 2)
    return total


def warm_start(states: list[GroupState], dicts: DictionaryPair, rho: float) -> None:
    """Z <- ridge fit to X (the Z-update with lambda_r = 0 and C = Y = 0)."""
    system = ZSystem(dicts, 0.0, rho)
    for s in states:
        s.z = system.solve(system.rhs(s))


def _check_finite(state: GroupState, k: int, iteration: int) -> None:
    for name in ("z", "c", "t", "y"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise SolverDivergedError(f"non-finite {name.upper()} in group {k} at iteration {iteration}")


def _map_groups(fn: Callable, states: list[GroupState], workers: int) -> None:
    """Call fn(k, state) for every group, on a thread pool when workers > 1."""
    if workers > 1 and len(states) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fn, range(len(states)), states))
    else:
        for k, s in enumerate(states):
            fn(k, s)


def _guarded(step: Callable[[GroupState], None], iteration: int) -> Callable[[int, GroupState], None]:
    # NaN/Inf input or output of a group update becomes SolverDivergedError naming the group
    def run(k: int, s: GroupState) -> None:
        _check_finite(s, k, iteration)
        try:
            step(s)
        except ValueError as e:
            if "NaN or Inf" not in str(e):
                raise
            raise SolverDivergedError(f"non-finite values in group {k} at iteration {iteration}: {e}") from e
        _check_finite(s, k, iteration)
    return run


def run_admm(states: list[GroupState], dicts: DictionaryPair, cfg: LtdlConfig,
             lambda_s: float, lambda_r: float,
             callback: Callable[[int, list[GroupState], DictionaryPair], None] | None = None,
             should_stop: Callable[[], bool] | None = None) -> SolverReport:
    """Run the outer ADMM loop in place on `states` and `dicts`.

    Stops when both max_k ||C - Z|| / ||Z|| and max_k ||Z_l+1 - Z_l|| / ||Z_l+1||
    fall below `cfg.tol_residual`, after `cfg.max_outer_iters` iterations,
    or when `should_stop()` turns true.
    """
    report = SolverReport(lambda_s=lambda_s, lambda_r=lambda_r)
    rho = cfg.rho0
    xhat = [reconstruct(s, dicts) for s in states]

    for it in range(1, cfg.max_outer_iters + 1):
        start = time.perf_counter()
        system = ZSystem(dicts, lambda_r, rho)
        report.z_condition = system.condition
        previous_z = [s.z for s in states]

        def group_step(s: GroupState) -> None:
            # with lambda_r = 0 the target T enters neither the Z-update nor the objective
            if lambda_r > 0.0:
                update_t(s, dicts, cfg.hooi_max_iter, cfg.hooi_tol)
            update_z(s, dicts, rho, lambda_r, system)
            update_c(s, rho, lambda_s)

        _map_groups(_guarded(group_step, it), states, cfg.workers)

        dict_obj = float("nan")
        if cfg.dict_update_every and it % cfg.dict_update_every == 0:
            targets = [low_rank_blend(s.x, s.t, lambda_r) for s in states]
            codes = [s.z for s in states]
            dicts.d_a, _, _ = update_spatial_dictionary(targets, codes, dicts.d_a, dicts.d_e,
                                                        cfg.newton_iters, cfg.newton_tol)
            dicts.d_e, _, dict_obj = update_spectral_dictionary(targets, codes, dicts.d_a, dicts.d_e,
                                                                cfg.newton_iters, cfg.newton_tol)

        _map_groups(_guarded(lambda s: update_y(s, rho), it), states, cfg.workers)

        residual = max(frobenius(s.c - s.z) for s in states)
        rel_residual = max(_relative(frobenius(s.c - s.z), frobenius(s.z)) for s in states)
        dz = max(frobenius(s.z - z0) for s, z0 in zip(states, previous_z))
        rel_dz = max(_relative(frobenius(s.z - z0), frobenius(s.z)) for s, z0 in zip(states, previous_z))
        new_xhat = [reconstruct(s, dicts) for s in states]
        dxhat = max(frobenius(a - b) for a, b in zip(new_xhat, xhat))
        xhat = new_xhat

        record = IterationRecord(iteration=it, objective=objective(states, dicts, lambda_s, lambda_r),
                                 residual=residual, dz=dz, dxhat=dxhat, dict_objective=dict_obj,
                                 rho=rho, seconds=time.perf_counter() - start)
        report.records.append(record)
        log.info(format_record(record))
        if log.isEnabledFor(logging.DEBUG):
            log.debug("augmented Lagrangian %.6e", augmented_lagrangian(states, dicts, lambda_s, lambda_r, rho))
        if callback is not None:
            callback(it, states, dicts)

        if it > 1 and rel_residual < cfg.tol_residual and rel_dz < cfg.tol_residual:
            report.converged = True
            log.info("converged after %d iterations", it)
            break
        if should_stop is not None and should_stop():
            report.interrupted = True
            log.warning("stopping early after iteration %d", it)
            break
        rho = min(cfg.mu * rho, cfg.rho_max)
    return report


def _relative(num: float, den: float) -> float:
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den


def learn_dictionaries(groups: list[np.ndarray], ranks: list[RankTriple], cfg: LtdlConfig,
                       lambda_s: float, lambda_r: float, dicts: DictionaryPair | None = None,
                       callback: Callable | None = None,
                       should_stop: Callable[[], bool] | None = None) -> tuple[list[GroupState], DictionaryPair, SolverReport]:
    """Run the solver on ready-made tensor groups.

    Returns the final states, the learned dictionaries and the report.
    """
    if len(groups) != len(ranks):
        raise ValueError(f"{len(groups)} groups but {len(ranks)} rank triples")
    dicts = dicts.copy() if dicts is not None else init_dictionaries(groups, cfg.tau_a, cfg.tau_e, cfg.seed)
    states = [GroupState.initial(x, r, dicts.d_a.shape[1], dicts.d_e.shape[1]) for x, r in zip(groups, ranks)]
    if cfg.warm_start:
        warm_start(states, dicts, cfg.rho0)
    report = run_admm(states, dicts, cfg, lambda_s, lambda_r, callback=callback, should_stop=should_stop)
    return states, dicts, report


def denoise(msi, cfg: LtdlConfig, should_stop: Callable[[], bool] | None = None,
            on_phase: Callable[[str], None] | None = None) -> tuple[np.ndarray, DictionaryPair, SolverReport]:
    """Denoise an (L, W, H) cube.

    Builds the tensor groups, estimates their ranks, runs the ADMM solver,
    reconstructs every group as Z x_1 D^a x_2 D^e and averages the blocks
    back into a cube. Deterministic for a fixed `cfg.seed`. `on_phase` is
    called with "grouping" and then "solving" as the run moves on.
    """
    msi = as_tensor(msi, "msi")
    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else estimate_noise_sigma(msi)
    lambda_s, lambda_r = cfg.effective_lambdas(sigma)
    log.info("noise sigma %.4g, lambda_s %.4g, lambda_r %.4g", sigma, lambda_s, lambda_r)

    on_phase = on_phase or (lambda name: None)
    on_phase("grouping")
    grid = extract_blocks(msi, cfg.window_rows, cfg.window_cols, cfg.step_rows, cfg.step_cols)
    k = cfg.clusters_for(grid.size)
    labels = cluster_blocks(grid, k, seed=cfg.seed, max_iter=cfg.kmeans_max_iter)
    groups = form_groups(grid, labels, k)
    log.info("%d blocks in %d groups", grid.size, len(groups))

    ranks = [estimate_ranks(g.x, sigma, cfg.energy_frac) for g in groups]
    on_phase("solving")
    states, dicts, report = learn_dictionaries([g.x for g in groups], ranks, cfg, lambda_s, lambda_r,
                                               should_stop=should_stop)
    report.noise_sigma = sigma
    estimates = [with_estimate(g, reconstruct(s, dicts)) for g, s in zip(groups, states)]
    return aggregate(estimates, grid, msi.shape), dicts, report

