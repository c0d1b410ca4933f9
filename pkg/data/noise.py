"""
Gaussian noise injection and a robust noise-level estimate.
"""

import logging

import numpy as np
import scipy.ndimage

from tensor.core import as_tensor

log = logging.getLogger(__name__)

# Normal MAD scale and the norm of the 4-neighbour Laplacian stencil
MAD_TO_SIGMA = 0.6745
LAPLACIAN_NORM = np.sqrt(20.0)


def add_gaussian_noise(msi, nu: float, seed: int = 0) -> np.ndarray:
    """Add i.i.d. N(0, nu^2) to every entry; values are not clamped."""
    msi = as_tensor(msi, "msi")
    if nu < 0.0 or not np.isfinite(nu):
        raise ValueError(f"noise level must be a non-negative number, got {nu}")
    if nu == 0.0:
        return msi.copy()
    rng = np.random.default_rng(seed)
    return msi + nu * rng.standard_normal(msi.shape)


def estimate_noise_sigma(msi) -> float:
    """Median over bands of MAD(Laplacian(band)) / 0.6745 / sqrt(20).

    Bands smaller than 3x3 carry no usable interior and are skipped; if no
    band qualifies the estimate is 0.
    """
    msi = as_tensor(msi, "msi")
    if msi.shape[0] < 3 or msi.shape[1] < 3:
        log.warning("cube %s too small for a noise estimate, assuming 0", msi.shape)
        return 0.0
    sigmas = []
    for b in range(msi.shape[2]):
        response = scipy.ndimage.laplace(msi[:, :, b], mode="reflect")[1:-1, 1:-1]
        mad = np.median(np.abs(response - np.median(response)))
        sigmas.append(mad / MAD_TO_SIGMA / LAPLACIAN_NORM)
    sigma = float(np.median(sigmas))
    log.debug("estimated noise sigma %.5g from %d bands", sigma, len(sigmas))
    return sigma
