"""
Synthetic data: planted dictionary-recovery groups and low-rank test cubes.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from config.schema import LtdlConfig
from denoise.dictionary import DictionaryPair, normalize_columns
from tensor.core import mode_product, multi_mode_product

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthSpec:
    """Dictionary-recovery setup: two 10x12 dictionaries, 12x12x12 codes, 200 groups.

    Each code has `inner_width` active (spatial, spectral) atom pairs; their
    12-long slices form the columns of G (12 x factor_rank) @ F (factor_rank x inner_width),
    so every clean group has multilinear rank at most (6, 6, 2).
    """
    atom_dim: int = 10
    atoms: int = 12
    code_slices: int = 12
    sparsity: int = 6
    inner_width: int = 5
    factor_rank: int = 2
    groups: int = 200
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.atoms < self.atom_dim:
            raise ValueError("dictionaries must be overcomplete (atoms >= atom_dim)")
        if not 1 <= self.inner_width <= min(self.sparsity, self.atoms):
            raise ValueError(f"inner_width must be in [1, {min(self.sparsity, self.atoms)}], got {self.inner_width}")
        if self.factor_rank < 1 or self.groups < 1 or self.code_slices < 1:
            raise ValueError("factor_rank, groups and code_slices must be positive")
        if self.noise < 0:
            raise ValueError(f"noise must be non-negative, got {self.noise}")

    @property
    def ranks(self) -> tuple[int, int, int]:
        return (min(self.sparsity, self.atom_dim - 1), min(self.sparsity, self.atom_dim - 1),
                min(self.factor_rank, self.code_slices - 1) if self.code_slices > 1 else 1)


def random_code(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Sparse code with `inner_width` active slices along mode 3."""
    z = np.zeros((spec.atoms, spec.atoms, spec.code_slices))
    ia = rng.choice(spec.atoms, size=spec.inner_width, replace=False)
    ie = rng.choice(spec.atoms, size=spec.inner_width, replace=False)
    block = rng.standard_normal((spec.code_slices, spec.factor_rank)) @ rng.standard_normal((spec.factor_rank, spec.inner_width))
    for j in range(spec.inner_width):
        z[ia[j], ie[j], :] = block[:, j]
    return z


def generate_synthetic_with_codes(spec: SynthSpec) -> tuple[list[np.ndarray], DictionaryPair, list[np.ndarray]]:
    rng = np.random.default_rng(spec.seed)
    d_a = normalize_columns(rng.standard_normal((spec.atom_dim, spec.atoms)), rng)
    d_e = normalize_columns(rng.standard_normal((spec.atom_dim, spec.atoms)), rng)
    tau = spec.atoms / spec.atom_dim
    truth = DictionaryPair(d_a=d_a, d_e=d_e, tau_a=tau, tau_e=tau)
    codes = [random_code(spec, rng) for _ in range(spec.groups)]
    groups = []
    for z in codes:
        x = mode_product(mode_product(z, d_a, 1), d_e, 2)
        if spec.noise > 0:
            x = x + spec.noise * rng.standard_normal(x.shape)
        groups.append(x)
    return groups, truth, codes


def generate_synthetic(spec: SynthSpec) -> tuple[list[np.ndarray], DictionaryPair]:
    """Observed groups Z x_1 D^a x_2 D^e + N(0, noise^2) and the true dictionaries."""
    groups, truth, _ = generate_synthetic_with_codes(spec)
    return groups, truth


# code magnitudes are O(1), so the sparsity weight needs a floor well above nu
RECOVERY_LAMBDA_S_FLOOR = 0.3
RECOVERY_LAMBDA_S_PER_NOISE = 5.0
RECOVERY_RHO_MAX = 1.0


def recovery_config(spec: SynthSpec, iters: int, base: LtdlConfig | None = None) -> LtdlConfig:
    """Solver settings for a recovery trial.

    Unset weights become lambda_s = max(0.3, 5 nu) and lambda_r = 0. The
    penalty is capped at 1 so the codes keep tracking the dictionaries, and
    the residual test is disabled so every trial runs `iters` iterations.
    """
    tau = spec.atoms / spec.atom_dim
    base = base or LtdlConfig()
    lambda_s = base.lambda_s
    if lambda_s is None:
        lambda_s = max(RECOVERY_LAMBDA_S_FLOOR, RECOVERY_LAMBDA_S_PER_NOISE * spec.noise)
    lambda_r = base.lambda_r if base.lambda_r is not None else 0.0
    return dataclasses.replace(base, tau_a=tau, tau_e=tau, max_outer_iters=iters, noise_sigma=spec.noise,
                               seed=spec.seed, lambda_s=lambda_s, lambda_r=lambda_r,
                               rho_max=min(base.rho_max, RECOVERY_RHO_MAX),
                               rho0=min(base.rho0, RECOVERY_RHO_MAX), tol_residual=1e-300)


def run_recovery_trial(spec: SynthSpec, iters: int, base: LtdlConfig | None = None,
                       matching: str = "greedy",
                       should_stop: Callable[[], bool] | None = None) -> list[float]:
    """Success ratio of the learned dictionaries after each of `iters` iterations.

    With lambda_r = 0 every update separates along mode 3, so the groups
    are solved as one tensor stacked along that mode. A stopped run repeats
    its last ratio up to `iters` entries.
    """
    from denoise.ltdl import learn_dictionaries
    from metrics.recovery import dictionary_recovery_ratio

    groups, truth = generate_synthetic(spec)
    cfg = recovery_config(spec, iters, base)
    lambda_s, lambda_r = cfg.effective_lambdas(spec.noise)
    if lambda_r == 0.0:
        groups = [np.concatenate(groups, axis=2)]
    ratios: list[float] = []

    def track(it, states, dicts):
        ratios.append(dictionary_recovery_ratio(truth, dicts, matching=matching))

    learn_dictionaries(groups, [spec.ranks] * len(groups), cfg, lambda_s, lambda_r,
                       callback=track, should_stop=should_stop)
    if ratios:
        ratios += [ratios[-1]] * (iters - len(ratios))
    log.debug("trial seed %d noise %.3g final ratio %.3f", spec.seed, spec.noise, ratios[-1] if ratios else 0.0)
    return ratios


def _smooth_basis(n: int, r: int, rng: np.random.Generator) -> np.ndarray:
    x = np.linspace(0.0, 1.0, n)
    freqs = rng.uniform(0.0, 2.5, size=r)
    phases = rng.uniform(0.0, np.pi, size=r)
    return np.cos(np.pi * np.outer(x, freqs) + phases)


def make_lowrank_cube(rows: int = 64, cols: int = 64, bands: int = 16, ranks=(4, 4, 3),
                      texture: float = 0.05, seed: int = 0) -> np.ndarray:
    """Cube in [0.05, 0.95]: smooth Tucker structure of `ranks` plus a fine oriented texture."""
    rng = np.random.default_rng(seed)
    core = rng.uniform(0.0, 1.0, size=tuple(ranks))
    factors = [_smooth_basis(rows, ranks[0], rng), _smooth_basis(cols, ranks[1], rng),
               _smooth_basis(bands, ranks[2], rng)]
    low = multi_mode_product(core, factors, (1, 2, 3))

    i, j = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    fi, fj = rng.uniform(0.15, 0.35, size=2)
    pattern = np.sin(2.0 * np.pi * (fi * i + fj * j))
    spectrum = 0.5 + 0.5 * np.cos(np.linspace(0.0, np.pi, bands) + rng.uniform(0.0, np.pi))

    low = (low - low.min()) / max(low.max() - low.min(), 1e-12)
    cube = low + texture * pattern[:, :, None] * spectrum[None, None, :]
    lo, hi = cube.min(), cube.max()
    return 0.05 + 0.9 * (cube - lo) / max(hi - lo, 1e-12)
