"""
Hyperparameters of the LTDL denoiser.

Defaults follow the published experimental settings: 7x7 window, step 3,
rho0 = 0.01, mu = 1.3, tau = 1.5, lambda_s = 0.1 nu, lambda_r = 500 nu.
"""

import math
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Unknown configuration key or invalid value."""


@dataclass(frozen=True)
class LtdlConfig:
    lambda_s: float | None = None       # None -> 0.1 * noise_sigma
    lambda_r: float | None = None       # None -> 500 * noise_sigma
    rho0: float = 0.01
    mu: float = 1.3
    rho_max: float = 1e6
    max_outer_iters: int = 30
    tol_residual: float = 1e-4
    window_rows: int = 7
    window_cols: int = 7
    step_rows: int = 3
    step_cols: int = 3
    tau_a: float = 1.5
    tau_e: float = 1.5
    k_clusters: int | None = None       # None -> max(1, round(S / blocks_per_cluster))
    blocks_per_cluster: int = 50
    kmeans_max_iter: int = 100
    noise_sigma: float | None = None    # None -> estimated from the input
    energy_frac: float = 0.99
    hooi_max_iter: int = 50
    hooi_tol: float = 1e-6
    dict_update_every: int = 1          # 0 freezes the dictionaries
    warm_start: bool = True             # False starts ADMM from Z = C = Y = T = 0
    newton_iters: int = 50
    newton_tol: float = 1e-9
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            kind = _FIELD_KINDS[f.name]
            if kind is bool and not isinstance(value, bool):
                raise ConfigError(f"{f.name} must be true or false, got {value!r}")
            if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"{f.name} must be an integer, got {value!r}")
            if kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{f.name} must be a number, got {value!r}")
                object.__setattr__(self, f.name, float(value))
        self._check()

    def _check(self):
        positive = ("rho0", "rho_max", "tol_residual", "tau_a", "tau_e", "hooi_tol", "newton_tol",
                    "window_rows", "window_cols", "step_rows", "step_cols", "blocks_per_cluster",
                    "kmeans_max_iter", "max_outer_iters", "hooi_max_iter", "newton_iters", "workers")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lambda_s", "lambda_r", "noise_sigma"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
        if self.mu <= 1.0:
            raise ConfigError(f"mu must be greater than 1, got {self.mu}")
        if self.tau_a < 1.0 or self.tau_e < 1.0:
            raise ConfigError("redundancy ratios tau_a and tau_e must be at least 1")
        if not 0.0 < self.energy_frac <= 1.0:
            raise ConfigError(f"energy_frac must be in (0, 1], got {self.energy_frac}")
        if self.k_clusters is not None and self.k_clusters < 1:
            raise ConfigError(f"k_clusters must be positive, got {self.k_clusters}")
        if self.dict_update_every < 0:
            raise ConfigError(f"dict_update_every must be >= 0, got {self.dict_update_every}")

    def effective_lambdas(self, noise_sigma: float) -> tuple[float, float]:
        """(lambda_s, lambda_r), filling unset weights from the noise level."""
        lambda_s = self.lambda_s if self.lambda_s is not None else 0.1 * noise_sigma
        lambda_r = self.lambda_r if self.lambda_r is not None else 500.0 * noise_sigma
        return lambda_s, lambda_r

    def clusters_for(self, n_blocks: int) -> int:
        if self.k_clusters is not None:
            return min(self.k_clusters, n_blocks)
        return max(1, int(math.floor(n_blocks / self.blocks_per_cluster + 0.5)))


_FIELD_KINDS = {
    "lambda_s": float, "lambda_r": float, "rho0": float, "mu": float, "rho_max": float,
    "max_outer_iters": int, "tol_residual": float, "window_rows": int, "window_cols": int,
    "step_rows": int, "step_cols": int, "tau_a": float, "tau_e": float, "k_clusters": int,
    "blocks_per_cluster": int, "kmeans_max_iter": int, "noise_sigma": float,
    "energy_frac": float, "hooi_max_iter": int, "hooi_tol": float, "dict_update_every": int,
    "newton_iters": int, "newton_tol": float, "seed": int, "workers": int, "warm_start": bool,
}


def field_kind(name: str) -> type:
    """Declared scalar type (bool, int or float) of a config field."""
    try:
        return _FIELD_KINDS[name]
    except KeyError:
        raise ConfigError(f"unknown configuration key: {name}")
