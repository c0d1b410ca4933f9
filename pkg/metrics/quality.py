"""
PSNR, SSIM, SAM and ERGAS between a reference cube and a test cube.

All inputs are (L, W, H) cubes with values nominally in [0, 1].
"""

import logging
from dataclasses import dataclass

import numpy as np
from skimage.metrics import structural_similarity

from tensor.core import as_tensor
from utils.report import csv_text, format_table

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0


def _pair(ref, test) -> tuple[np.ndarray, np.ndarray]:
    ref = as_tensor(ref, "ref")
    test = as_tensor(test, "test")
    if ref.shape != test.shape:
        raise ValueError(f"reference {ref.shape} and test {test.shape} differ in shape")
    return ref, test


def psnr(ref, test) -> float:
    """10 log10(1 / MSE) over the whole cube, capped at 100 dB."""
    ref, test = _pair(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return float(min(10.0 * np.log10(DATA_RANGE ** 2 / mse), PSNR_CAP))


def _plane_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """SSIM from whole-plane statistics, for bands smaller than the window."""
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(), b.var()
    cov = np.mean((a - ma) * (b - mb))
    return float(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))


def ssim(ref, test) -> float:
    """Mean over bands of Gaussian-window SSIM (11x11, sigma 1.5)."""
    ref, test = _pair(ref, test)
    if np.array_equal(ref, test):
        return 1.0
    values = []
    for b in range(ref.shape[2]):
        a, t = ref[:, :, b], test[:, :, b]
        if min(a.shape) < SSIM_WINDOW:
            values.append(_plane_ssim(a, t))
            continue
        values.append(structural_similarity(a, t, data_range=DATA_RANGE, gaussian_weights=True,
                                            sigma=SSIM_SIGMA, use_sample_covariance=False,
                                            K1=SSIM_K1, K2=SSIM_K2))
    return float(np.mean(values))


def sam(ref, test, unit: str = "rad") -> float:
    """Mean spectral angle; pixels where either spectrum is zero are skipped."""
    if unit not in ("rad", "deg"):
        raise ValueError(f"unit must be 'rad' or 'deg', got {unit!r}")
    ref, test = _pair(ref, test)
    x = ref.reshape(-1, ref.shape[2])
    y = test.reshape(-1, test.shape[2])
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    keep = (nx > 0) & (ny > 0)
    skipped = int((~keep).sum())
    if skipped:
        log.warning("SAM skipped %d zero-norm spectra", skipped)
    if not np.any(keep):
        return 0.0
    u = x[keep] / nx[keep, None]
    v = y[keep] / ny[keep, None]
    # atan2 form stays accurate near 0 and pi
    angles = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=1), np.linalg.norm(u + v, axis=1))
    mean = float(np.mean(angles))
    return float(np.degrees(mean)) if unit == "deg" else mean


def ergas(ref, test, scale_ratio: float = 1.0) -> float:
    """100 * scale_ratio * sqrt(mean_b RMSE_b^2 / mean_b^2), bands with zero mean excluded."""
    ref, test = _pair(ref, test)
    means = ref.mean(axis=(0, 1))
    mse = np.mean((ref - test) ** 2, axis=(0, 1))
    keep = means != 0
    excluded = int((~keep).sum())
    if excluded:
        log.warning("ERGAS excluded %d zero-mean bands", excluded)
    if not np.any(keep):
        return 0.0
    return float(100.0 * scale_ratio * np.sqrt(np.mean(mse[keep] / means[keep] ** 2)))


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    sam: float
    ergas: float
    sam_unit: str = "rad"

    HEADER = ("PSNR", "SSIM", "SAM", "ERGAS")

    def row(self) -> tuple[float, float, float, float]:
        return (self.psnr, self.ssim, self.sam, self.ergas)

    def to_csv(self) -> str:
        return csv_text(self.HEADER, [self.row()])

    def to_table(self) -> str:
        return format_table(self.HEADER, [self.row()])


def evaluate(ref, test, sam_unit: str = "rad", scale_ratio: float = 1.0) -> MetricReport:
    return MetricReport(psnr=psnr(ref, test), ssim=ssim(ref, test), sam=sam(ref, test, sam_unit),
                        ergas=ergas(ref, test, scale_ratio), sam_unit=sam_unit)
