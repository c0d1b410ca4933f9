"""
Shared spatial/spectral dictionaries with unit-norm atoms.

The update of either dictionary is the constrained least-squares problem

    min_D ||O - D A||_F^2   s.t.  ||D(:, r)||_2 = 1,

solved through its Lagrange dual: D = (O A^T)(A A^T + Gamma)^-1 with
Gamma = diag(gamma) >= 0 maximising the concave dual function. Only the
Gram matrices A A^T, O A^T and trace(O O^T) are needed, so the stacked
matrices are accumulated group by group and never materialised.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from tensor.core import mode_product, unfold

log = logging.getLogger(__name__)

RIDGE = 1e-10
NORM_TOL = 1e-8
POLISH_SWEEPS = 20


@dataclass
class DictionaryPair:
    d_a: np.ndarray
    d_e: np.ndarray
    tau_a: float
    tau_e: float

    def copy(self) -> "DictionaryPair":
        return DictionaryPair(self.d_a.copy(), self.d_e.copy(), self.tau_a, self.tau_e)

    def equivalent(self) -> np.ndarray:
        """The Kronecker dictionary D^e (x) D^a acting on mode-3 unfoldings."""
        return np.kron(self.d_e, self.d_a)


@dataclass
class DualVars:
    """Dual variables of one dictionary update plus solver flags."""
    gammas: np.ndarray
    converged: bool = True
    ridge_used: bool = False
    renormalized: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    polished: bool = False
    iterations: int = 0


@dataclass
class GramStats:
    """Sufficient statistics of a stacked least-squares problem."""
    aat: np.ndarray
    oat: np.ndarray
    oo: float

    def objective(self, d: np.ndarray) -> float:
        """||O - D A||_F^2 from the Gram matrices."""
        value = self.oo - 2.0 * np.sum(d * self.oat) + np.sum((d @ self.aat) * d)
        return float(max(value, 0.0))


def atom_count(rows: int, tau: float) -> int:
    """round(tau * rows) with halves rounded up."""
    return int(np.floor(tau * rows + 0.5))


def normalize_columns(d: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Scale columns to unit norm; zero columns become random unit vectors."""
    d = np.array(d, dtype=np.float64)
    norms = np.linalg.norm(d, axis=0)
    dead = norms < 1e-12
    if np.any(dead):
        rng = rng or np.random.default_rng(0)
        d[:, dead] = rng.standard_normal((d.shape[0], int(dead.sum())))
        norms[dead] = np.linalg.norm(d[:, dead], axis=0)
    return d / norms


def _sample_atoms(fibers: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Pick `count` distinct non-zero fibers (columns) as unit atoms."""
    rows = fibers.shape[0]
    norms = np.linalg.norm(fibers, axis=0)
    usable = np.flatnonzero(norms > 1e-12)
    picked = rng.choice(usable, size=min(count, usable.size), replace=False) if usable.size else []
    atoms = [fibers[:, i] / norms[i] for i in picked]
    out = np.empty((rows, count))
    filled = 0
    for atom in atoms:
        # duplicates (up to sign) carry no new direction
        if filled and np.max(np.abs(out[:, :filled].T @ atom)) > 1.0 - 1e-9:
            continue
        out[:, filled] = atom
        filled += 1
    if filled < count:
        out[:, filled:] = normalize_columns(rng.standard_normal((rows, count - filled)), rng)
    return out


def init_dictionaries(groups, tau_a: float, tau_e: float, seed: int = 0) -> DictionaryPair:
    """Initial dictionaries sampled from the data.

    Spatial atoms are random mode-1 fibers of the groups, spectral atoms
    random mode-2 fibers, each normalised; duplicate or zero fibers are
    replaced by random unit vectors. Deterministic for a given seed.
    """
    tensors = [g.x if hasattr(g, "x") else np.asarray(g) for g in groups]
    if not tensors:
        raise ValueError("at least one group is needed to initialise the dictionaries")
    if tau_a < 1.0 or tau_e < 1.0:
        raise ValueError("redundancy ratios must be at least 1")
    rng = np.random.default_rng(seed)
    spatial = np.concatenate([unfold(t, 1) for t in tensors], axis=1)
    spectral = np.concatenate([unfold(t, 2) for t in tensors], axis=1)
    d_a = _sample_atoms(spatial, atom_count(spatial.shape[0], tau_a), rng)
    d_e = _sample_atoms(spectral, atom_count(spectral.shape[0], tau_e), rng)
    return DictionaryPair(d_a=d_a, d_e=d_e, tau_a=tau_a, tau_e=tau_e)


class _Dual:
    """Negated Lagrange dual and its derivatives for gamma >= 0."""

    def __init__(self, stats: GramStats):
        self.stats = stats
        self.ridge_used = False

    def factor(self, gammas: np.ndarray):
        m = self.stats.aat + np.diag(gammas)
        try:
            return scipy.linalg.cho_factor(m, check_finite=False)
        except np.linalg.LinAlgError:
            self.ridge_used = True
            scale = max(float(np.max(np.diag(self.stats.aat))), 1.0)
            return scipy.linalg.cho_factor(m + RIDGE * scale * np.eye(m.shape[0]), check_finite=False)

    def primal(self, gammas: np.ndarray) -> np.ndarray:
        chol = self.factor(gammas)
        return scipy.linalg.cho_solve(chol, self.stats.oat.T, check_finite=False).T

    def value(self, gammas: np.ndarray) -> float:
        # -g(gamma) = trace(P M P^T) + sum(gamma) - trace(O O^T)
        d = self.primal(gammas)
        return float(np.sum(d * self.stats.oat) + gammas.sum() - self.stats.oo)

    def gradient(self, gammas: np.ndarray) -> np.ndarray:
        d = self.primal(gammas)
        return 1.0 - np.sum(d * d, axis=0)

    def hessian(self, gammas: np.ndarray) -> np.ndarray:
        chol = self.factor(gammas)
        inv = scipy.linalg.cho_solve(chol, np.eye(gammas.size), check_finite=False)
        d = self.stats.oat @ inv
        return 2.0 * (d.T @ d) * inv


def _projected_newton(dual: _Dual, gammas: np.ndarray, iters: int, tol: float) -> tuple[np.ndarray, bool, int]:
    for it in range(iters):
        grad = dual.gradient(gammas)
        # variables pinned at the bound whose gradient pushes them below zero
        active = (gammas <= 0.0) & (grad > 0.0)
        free = ~active
        proj_grad = np.where(active, 0.0, grad)
        if np.max(np.abs(proj_grad), initial=0.0) < tol:
            return gammas, True, it
        step = np.zeros_like(gammas)
        hess = dual.hessian(gammas)[np.ix_(free, free)]
        try:
            step[free] = scipy.linalg.solve(hess, grad[free], assume_a="pos", check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            step[free] = grad[free]
        current = dual.value(gammas)
        t = 1.0
        while t > 1e-12:
            trial = np.maximum(gammas - t * step, 0.0)
            if dual.value(trial) <= current - 1e-4 * np.dot(proj_grad, gammas - trial):
                break
            t *= 0.5
        else:
            return gammas, False, it
        gammas = trial
    grad = dual.gradient(gammas)
    proj_grad = np.where((gammas <= 0.0) & (grad > 0.0), 0.0, grad)
    return gammas, bool(np.max(np.abs(proj_grad), initial=0.0) < tol), iters


def solve_from_stats(stats: GramStats, newton_iters: int = 50, tol: float = 1e-9,
                     gammas0: np.ndarray | None = None) -> tuple[np.ndarray, DualVars]:
    """Unit-column least squares from accumulated Gram matrices."""
    p = stats.aat.shape[0]
    dual = _Dual(stats)
    if gammas0 is None:
        gammas0 = np.full(p, 0.1 * max(float(np.mean(np.diag(stats.aat))), 1e-12))
    gammas, converged, iterations = _projected_newton(dual, np.maximum(gammas0, 0.0), newton_iters, tol)
    if not converged:
        log.warning("Newton on the dictionary dual stalled after %d steps; switching to L-BFGS-B", iterations)
        res = scipy.optimize.minimize(dual.value, gammas, jac=dual.gradient, method="L-BFGS-B",
                                      bounds=[(0.0, None)] * p,
                                      options={"maxiter": 10 * max(newton_iters, 1), "gtol": tol})
        gammas = np.maximum(res.x, 0.0)
        converged = bool(res.success)
        if not converged:
            log.warning("dictionary dual did not converge: %s", res.message)
    d = dual.primal(gammas)
    norms = np.linalg.norm(d, axis=0)
    renormalized = np.abs(norms - 1.0) > NORM_TOL
    if np.any(renormalized):
        # inactive constraints (gamma = 0) leave short columns; unused atoms are zero
        d[:, renormalized] = normalize_columns(d[:, renormalized])
        d = polish_columns(stats, d)
    if dual.ridge_used:
        log.warning("dictionary Gram matrix was singular; added a %.0e ridge", RIDGE)
    return d, DualVars(gammas=gammas, converged=converged, ridge_used=dual.ridge_used,
                       renormalized=renormalized, iterations=iterations,
                       polished=bool(np.any(renormalized)))


def polish_columns(stats: GramStats, d: np.ndarray, sweeps: int = POLISH_SWEEPS,
                   tol: float = 1e-12) -> np.ndarray:
    """Exact one-column-at-a-time minimisation under the unit-norm constraint.

    With the other columns fixed, column r minimises ||R_r - d a_r||^2 over
    unit vectors by d = R_r a_r^T / ||R_r a_r^T||, so every step lowers the
    objective. Columns with no correlation (unused atoms) are left as they are.
    """
    d = d.copy()
    for _ in range(sweeps):
        change = 0.0
        for r in range(d.shape[1]):
            c = stats.oat[:, r] - d @ stats.aat[:, r] + d[:, r] * stats.aat[r, r]
            norm = np.linalg.norm(c)
            if norm <= 1e-12:
                continue
            new = c / norm
            change = max(change, float(np.max(np.abs(new - d[:, r]))))
            d[:, r] = new
        if change < tol:
            break
    return d


def solve_unit_column_ls(o: np.ndarray, a: np.ndarray, newton_iters: int = 50,
                         tol: float = 1e-9) -> tuple[np.ndarray, DualVars]:
    """Solve min ||O - D A||_F^2 subject to unit-norm columns of D.

    Args:
        o: (m, N) targets
        a: (p, N) codes

    Returns:
        (D, duals) with D of shape (m, p).
    """
    o = np.asarray(o, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if o.ndim != 2 or a.ndim != 2 or o.shape[1] != a.shape[1]:
        raise ValueError(f"O and A need the same number of columns, got {o.shape} and {a.shape}")
    stats = GramStats(aat=a @ a.T, oat=o @ a.T, oo=float(np.sum(o * o)))
    return solve_from_stats(stats, newton_iters, tol)


def low_rank_blend(x: np.ndarray, t: np.ndarray, lambda_r: float) -> np.ndarray:
    """O = (X + lambda_r T) / (1 + lambda_r)."""
    return (x + lambda_r * t) / (1.0 + lambda_r)


def accumulate_stats(targets, codes, other: np.ndarray, mode: int) -> GramStats:
    """Gram statistics for the mode-`mode` dictionary.

    For the spatial dictionary (mode 1) the codes are multiplied by the
    spectral dictionary along mode 2, and the other way round for mode 2.
    Groups are summed in order.
    """
    other_mode = 2 if mode == 1 else 1
    aat = oat = None
    oo = 0.0
    for o_k, z_k in zip(targets, codes):
        a_k = unfold(mode_product(z_k, other, other_mode), mode)
        o_k = unfold(o_k, mode)
        if aat is None:
            aat = np.zeros((a_k.shape[0], a_k.shape[0]))
            oat = np.zeros((o_k.shape[0], a_k.shape[0]))
        aat += a_k @ a_k.T
        oat += o_k @ a_k.T
        oo += float(np.sum(o_k * o_k))
    if aat is None:
        raise ValueError("no groups to update the dictionary from")
    return GramStats(aat=aat, oat=oat, oo=oo)


def _update(targets, codes, current: np.ndarray, other: np.ndarray, mode: int,
            newton_iters: int, tol: float) -> tuple[np.ndarray, DualVars, float]:
    stats = accumulate_stats(targets, codes, other, mode)
    d, duals = solve_from_stats(stats, newton_iters, tol)
    new_obj = stats.objective(d)
    old_obj = stats.objective(current)
    if new_obj > old_obj * (1.0 + 1e-12):
        # column sweeps from the current dictionary never raise the objective
        log.debug("mode-%d dual solution worse (%.6e > %.6e); polishing the current one",
                  mode, new_obj, old_obj)
        d = polish_columns(stats, current)
        new_obj = stats.objective(d)
        if new_obj > old_obj:
            return current.copy(), duals, old_obj
    return d, duals, new_obj


def update_spatial_dictionary(targets, codes, d_a: np.ndarray, d_e: np.ndarray,
                              newton_iters: int = 50, tol: float = 1e-9) -> tuple[np.ndarray, DualVars, float]:
    """New D^a from targets O^(k), codes Z^(k) and the spectral dictionary.

    Returns the dictionary, its dual variables and the stacked objective
    ||O - Z x_1 D^a x_2 D^e||^2 at the returned dictionary, which is never
    above the objective at `d_a`: a dual solution that would raise it is
    replaced by column sweeps started from `d_a`.
    """
    return _update(targets, codes, d_a, d_e, 1, newton_iters, tol)


def update_spectral_dictionary(targets, codes, d_a: np.ndarray, d_e: np.ndarray,
                               newton_iters: int = 50, tol: float = 1e-9) -> tuple[np.ndarray, DualVars, float]:
    """New D^e; the mirror image of `update_spatial_dictionary`."""
    return _update(targets, codes, d_e, d_a, 2, newton_iters, tol)
