"""Distortion and spectral-fidelity metrics: PSNR, SSIM, SAM, ERGAS.

All metrics reject mismatched shapes; nothing is silently broadcast. SAM is
reported in radians. The ERGAS resolution ratio is a caller choice; for a
c x c filter array, 1/c treats demosaicing as c-fold per-band upsampling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import ShapeError, SpectralCube

logger = logging.getLogger(__name__)

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class MetricReport:
    psnr: float  # dB; +inf on an exact match
    ssim: float
    sam: float  # radians
    ergas: float

    def as_row(self) -> list[float]:
        return [self.psnr, self.ssim, self.sam, self.ergas]


def _check_shapes(xhat: SpectralCube, x: SpectralCube) -> None:
    if xhat.shape != x.shape:
        raise ShapeError(f"metric inputs differ: {xhat.shape} vs {x.shape}")


def psnr(xhat: SpectralCube, x: SpectralCube, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) over all entries; +inf when MSE is zero."""
    _check_shapes(xhat, x)
    diff = xhat.data.astype(np.float64) - x.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(xhat: SpectralCube, x: SpectralCube, peak: float = 1.0) -> float:
    """Mean structural similarity per band, 11x11 Gaussian window, sigma 1.5."""
    _check_shapes(xhat, x)
    if xhat.height < _SSIM_WINDOW or xhat.width < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    r = _SSIM_WINDOW // 2
    line = np.exp(-0.5 * (np.arange(-r, r + 1) / _SSIM_SIGMA) ** 2)
    win = np.outer(line, line)
    win /= win.sum()

    def blur(img):
        return ndimage.correlate(img, win, mode="reflect")

    total = 0.0
    for b in range(xhat.channels):
        a = xhat.data[b].astype(np.float64)
        g = x.data[b].astype(np.float64)
        mu_a = blur(a)
        mu_g = blur(g)
        var_a = blur(a * a) - mu_a * mu_a
        var_g = blur(g * g) - mu_g * mu_g
        cov = blur(a * g) - mu_a * mu_g
        num = (2 * mu_a * mu_g + c1) * (2 * cov + c2)
        den = (mu_a * mu_a + mu_g * mu_g + c1) * (var_a + var_g + c2)
        total += float(np.mean(num / den))
    return total / xhat.channels


def sam(xhat: SpectralCube, x: SpectralCube) -> float:
    """Mean per-pixel angle (radians) between predicted and true spectra.

    Pixels where either spectrum has near-zero norm are skipped.
    """
    _check_shapes(xhat, x)
    a = xhat.data.reshape(xhat.channels, -1).astype(np.float64)
    g = x.data.reshape(x.channels, -1).astype(np.float64)
    dot = np.sum(a * g, axis=0)
    na2 = np.sum(a * a, axis=0)
    ng2 = np.sum(g * g, axis=0)
    keep = (na2 > 1e-24) & (ng2 > 1e-24)  # spectra with norm < 1e-12 are skipped
    if not np.any(keep):
        raise ValueError("all pixels have degenerate spectra")
    # sqrt of the product (not product of sqrts): exactly parallel spectra then
    # yield cos = 1 bitwise, so the angle is 0 rather than ~sqrt(eps)
    cosang = np.clip(dot[keep] / np.sqrt(na2[keep] * ng2[keep]), -1.0, 1.0)
    return float(np.mean(np.arccos(cosang)))


def ergas(xhat: SpectralCube, x: SpectralCube, ratio: float = 0.25) -> float:
    """100 * ratio * sqrt(mean over bands of (RMSE_b / mean_b)^2).

    Bands whose ground-truth mean is zero are skipped with a warning and the
    average renormalized over the remaining bands.
    """
    _check_shapes(xhat, x)
    terms = []
    skipped = 0
    for b in range(x.channels):
        mu = float(np.mean(x.data[b].astype(np.float64)))
        if mu == 0.0:
            skipped += 1
            continue
        diff = xhat.data[b].astype(np.float64) - x.data[b].astype(np.float64)
        rmse = math.sqrt(float(np.mean(diff * diff)))
        terms.append((rmse / mu) ** 2)
    if skipped:
        logger.warning("ergas: skipped %d zero-mean band(s)", skipped)
    if not terms:
        raise ValueError("all bands have zero mean; ERGAS undefined")
    return 100.0 * ratio * math.sqrt(sum(terms) / len(terms))


def evaluate(xhat: SpectralCube, x: SpectralCube, peak: float = 1.0, ratio: float = 0.25) -> MetricReport:
    return MetricReport(
        psnr=psnr(xhat, x, peak),
        ssim=ssim(xhat, x, peak),
        sam=sam(xhat, x),
        ergas=ergas(xhat, x, ratio),
    )
