"""
Tucker low-multilinear-rank machinery.

HOSVD initialisation, HOOI refinement, reconstruction, a noise-aware rank
estimator and the nearly-low-rank denoiser that alternates between a
Tucker approximation and a Frobenius-weighted blend with the data.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from tensor.core import as_tensor, frobenius, mode_product, unfold

log = logging.getLogger(__name__)

RankTriple = tuple[int, int, int]

HOOI_MAX_ITER = 50
HOOI_TOL = 1e-6
ENERGY_FRAC = 0.99


@dataclass
class TuckerFactors:
    """Core tensor and three orthonormal factor matrices."""
    core: np.ndarray
    factors: tuple[np.ndarray, np.ndarray, np.ndarray]
    fit_history: list[float] = field(default_factory=list)

    @property
    def ranks(self) -> RankTriple:
        return tuple(int(r) for r in self.core.shape)

    def reconstruct(self) -> np.ndarray:
        return tucker_reconstruct(self)


def validate_ranks(ranks, dims) -> RankTriple:
    """Check 1 <= R_n <= I_n for every mode and return the ranks as ints."""
    try:
        ranks = tuple(int(r) for r in ranks)
    except (TypeError, ValueError):
        raise ValueError(f"ranks must be three integers, got {ranks!r}")
    if len(ranks) != 3:
        raise ValueError(f"ranks must be three integers, got {ranks!r}")
    for n, (r, d) in enumerate(zip(ranks, dims), start=1):
        if r < 1:
            raise ValueError(f"rank of mode {n} must be positive, got {r}")
        if r > d:
            raise ValueError(f"rank {r} exceeds dimension {d} of mode {n}")
    return ranks


def leading_left_singular_vectors(m: np.ndarray, r: int) -> np.ndarray:
    """Top-`r` left singular vectors of `m` (orthonormal columns)."""
    if m.shape[0] == 1:
        return np.ones((1, 1))
    full = m.shape[1] < r
    u = scipy.linalg.svd(m, full_matrices=full, compute_uv=True,
                         check_finite=False, lapack_driver="gesvd")[0]
    return np.ascontiguousarray(u[:, :r])


def _project(t: np.ndarray, factors, skip: int | None = None) -> np.ndarray:
    """t x_m U_m^T for every mode m except `skip` (1-based)."""
    out = t
    for mode, u in enumerate(factors, start=1):
        if mode != skip:
            out = mode_product(out, u.T, mode)
    return out


def _fit(t: np.ndarray, factors: TuckerFactors, t_norm: float) -> float:
    if t_norm == 0.0:
        return 1.0
    return 1.0 - frobenius(t - tucker_reconstruct(factors)) / t_norm


def hosvd(t, ranks) -> TuckerFactors:
    """Truncated higher-order SVD.

    U_n holds the top-R_n left singular vectors of the mode-n unfolding and
    the core is t x_1 U1^T x_2 U2^T x_3 U3^T.
    """
    t = as_tensor(t)
    ranks = validate_ranks(ranks, t.shape)
    factors = tuple(leading_left_singular_vectors(unfold(t, n), r)
                    for n, r in zip((1, 2, 3), ranks))
    return TuckerFactors(core=_project(t, factors), factors=factors)


def hooi(t, ranks, max_iter: int = HOOI_MAX_ITER, tol: float = HOOI_TOL) -> TuckerFactors:
    """Higher-order orthogonal iteration started from the HOSVD.

    Each sweep replaces U_n by the top-R_n left singular vectors of the
    mode-n unfolding of t projected on the other factors. Stops when the
    fit 1 - ||t - approx|| / ||t|| changes by less than `tol` or after
    `max_iter` sweeps. The fit after the HOSVD and after every sweep is
    kept in `fit_history`.
    """
    t = as_tensor(t)
    ranks = validate_ranks(ranks, t.shape)
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    t_norm = frobenius(t)
    result = hosvd(t, ranks)
    result.fit_history.append(_fit(t, result, t_norm))
    if t_norm == 0.0:
        return result

    factors = list(result.factors)
    for it in range(max_iter):
        for n in (1, 2, 3):
            y = _project(t, factors, skip=n)
            factors[n - 1] = leading_left_singular_vectors(unfold(y, n), ranks[n - 1])
        current = TuckerFactors(core=_project(t, factors), factors=tuple(factors))
        fit = _fit(t, current, t_norm)
        previous = result.fit_history[-1]
        current.fit_history = result.fit_history + [fit]
        result = current
        if abs(fit - previous) < tol:
            log.debug("HOOI converged after %d sweeps (fit %.12f)", it + 1, fit)
            break
    return result


def tucker_reconstruct(f: TuckerFactors) -> np.ndarray:
    """core x_1 U1 x_2 U2 x_3 U3."""
    core = as_tensor(f.core, "core")
    if len(f.factors) != 3:
        raise ValueError(f"expected three factors, got {len(f.factors)}")
    out = core
    for mode, u in enumerate(f.factors, start=1):
        if u.shape[1] != core.shape[mode - 1]:
            raise ValueError(
                f"factor {mode} has {u.shape[1]} columns but the core has "
                f"{core.shape[mode - 1]} entries along mode {mode}"
            )
        out = mode_product(out, u, mode)
    return out


def estimate_ranks(t, noise_sigma: float = 0.0, energy_frac: float = ENERGY_FRAC) -> RankTriple:
    """Pick per-mode ranks from the unfolding spectra.

    The squared singular values of each unfolding are reduced by the noise
    floor noise_sigma^2 * (number of columns); R_n is the smallest r whose
    leading values hold `energy_frac` of what remains. Ranks are clamped to
    [1, I_n - 1] (1 when I_n == 1).
    """
    t = as_tensor(t)
    if not 0.0 < energy_frac <= 1.0:
        raise ValueError(f"energy_frac must be in (0, 1], got {energy_frac}")
    if noise_sigma < 0.0:
        raise ValueError(f"noise_sigma must be non-negative, got {noise_sigma}")

    ranks = []
    for n in (1, 2, 3):
        size = t.shape[n - 1]
        if size == 1:
            ranks.append(1)
            continue
        m = unfold(t, n)
        sv = scipy.linalg.svd(m, compute_uv=False, check_finite=False)
        energy = np.maximum(sv ** 2 - noise_sigma ** 2 * m.shape[1], 0.0)
        total = energy.sum()
        if total <= 0.0:
            r = 1
        else:
            cumulative = np.cumsum(energy)
            # relative slack keeps energy_frac == 1 from tripping on rounding
            r = int(np.searchsorted(cumulative, energy_frac * total * (1.0 - 1e-12))) + 1
        ranks.append(int(min(max(r, 1), size - 1)))
    return tuple(ranks)


def nearly_lowrank_objective(x: np.ndarray, x_hat: np.ndarray, target: np.ndarray, lambda_r: float) -> float:
    """||x - x_hat||^2 + lambda_r ||x_hat - target||^2."""
    return frobenius(x - x_hat) ** 2 + lambda_r * frobenius(x_hat - target) ** 2


def nearly_lowrank_denoise(x, lambda_r: float, ranks, iters: int = 10,
                           hooi_max_iter: int = HOOI_MAX_ITER, hooi_tol: float = HOOI_TOL,
                           history: list | None = None) -> np.ndarray:
    """Nearly-low-rank estimate of `x`.

    Alternates T <- HOOI(x_hat, ranks) and x_hat <- (x + lambda_r T) / (1 + lambda_r),
    starting from x_hat = x. When `history` is given, the objective after
    every outer iteration is appended to it.
    """
    x = as_tensor(x)
    if lambda_r <= 0.0:
        raise ValueError(f"lambda_r must be positive, got {lambda_r}")
    ranks = validate_ranks(ranks, x.shape)
    x_hat = x.copy()
    target = None
    for _ in range(max(int(iters), 1)):
        candidate = hooi(x_hat, ranks, max_iter=hooi_max_iter, tol=hooi_tol).reconstruct()
        # keep the previous target when the fresh HOOI result fits worse
        if target is None or frobenius(x_hat - candidate) <= frobenius(x_hat - target):
            target = candidate
        x_hat = (x + lambda_r * target) / (1.0 + lambda_r)
        if history is not None:
            history.append(nearly_lowrank_objective(x, x_hat, target, lambda_r))
    return x_hat
