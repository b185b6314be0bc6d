"""Classical interpolation baselines built on normalized convolution.

All three methods share one primitive: per band, correlate the sparse sample
plane and its sampling mask with a nonnegative kernel and take the ratio.
Boundary handling is reflective ("symmetric") everywhere so borders are not
darkened by the missing-neighbor falloff.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import ndimage, signal

from .core import Mosaic, ShapeError, SpectralCube
from .msfa import MsfaPattern

logger = logging.getLogger(__name__)

_DEFAULT_KERNEL = {"bilinear": 5, "weighted_bilinear": 7, "gaussian": 9}


@dataclass(frozen=True)
class InterpConfig:
    """Kernel settings; None picks the per-method default (5 / 7 / 9)."""

    method: str = "gaussian"
    kernel_size: Optional[int] = None
    gaussian_sigma: Optional[float] = None  # default: period / 2

    def __post_init__(self):
        if self.method not in _DEFAULT_KERNEL:
            raise ValueError(f"unknown interpolation method: {self.method!r}")
        if self.kernel_size is not None and (self.kernel_size < 1 or self.kernel_size % 2 == 0):
            raise ValueError("kernel_size must be odd and positive")
        if self.gaussian_sigma is not None and not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be positive")


def tent_kernel(size: int) -> np.ndarray:
    """Separable triangle kernel of odd width `size` (unnormalized)."""
    if size < 1 or size % 2 == 0:
        raise ValueError("tent kernel size must be odd and positive")
    r = size // 2
    line = (r + 1 - np.abs(np.arange(-r, r + 1))).astype(np.float64)
    return np.outer(line, line)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError("gaussian kernel size must be odd and positive")
    r = size // 2
    line = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    return np.outer(line, line)


def sparse_band_split(y: Mosaic, pattern: MsfaPattern) -> tuple[SpectralCube, np.ndarray]:
    """Scatter the mosaic into per-band sample planes plus boolean sampling masks.

    Returns (cube of sparse samples, masks of shape (C, H, W)). The masks
    partition the pixel grid: each pixel is sampled by exactly one band.
    """
    h, w = y.height, y.width
    bmap = pattern.tiled(h, w)
    c = pattern.channels
    masks = np.zeros((c, h, w), dtype=bool)
    bands = np.arange(c)[:, None, None]
    np.equal(bmap[None, :, :], bands, out=masks)
    sparse = np.where(masks, y.data[None, :, :], np.float32(0.0)).astype(np.float32)
    return SpectralCube(h, w, c, sparse), masks


def _normalized_convolution(sparse: np.ndarray, masks: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or np.any(k < 0) or not k.sum() > 0:
        raise ValueError("kernel must be a nonneg normalizable 2-D array")
    num = np.stack([ndimage.correlate(b.astype(np.float64), k, mode="reflect") for b in sparse])
    den = np.stack([ndimage.correlate(m.astype(np.float64), k, mode="reflect") for m in masks])
    if den.min() <= 0:
        raise ValueError("kernel too small for pattern period")
    return (num / den).astype(np.float32)


def normalized_convolution_demosaic(y: Mosaic, pattern: MsfaPattern, kernel: np.ndarray) -> SpectralCube:
    """Per band: (kernel * samples) / (kernel * mask), reflective padding."""
    sparse, masks = sparse_band_split(y, pattern)
    out = _normalized_convolution(sparse.data, masks, kernel)
    return SpectralCube(y.height, y.width, pattern.channels, out)


def _resolve_kernel_size(cfg: InterpConfig, period: int) -> int:
    size = cfg.kernel_size if cfg.kernel_size is not None else _DEFAULT_KERNEL[cfg.method]
    min_size = 2 * period - 1
    if cfg.method == "bilinear" and size < min_size:
        logger.warning(
            "bilinear kernel %dx%d cannot reach all samples of a period-%d pattern; "
            "expanding to %dx%d", size, size, period, min_size, min_size,
        )
        size = min_size
    return size


def bilinear_demosaic(y: Mosaic, pattern: MsfaPattern, cfg: Optional[InterpConfig] = None) -> SpectralCube:
    cfg = cfg or InterpConfig(method="bilinear")
    if cfg.method != "bilinear":
        raise ValueError(f"config method is {cfg.method!r}, expected 'bilinear'")
    size = _resolve_kernel_size(cfg, pattern.period)
    return normalized_convolution_demosaic(y, pattern, tent_kernel(size))


def gaussian_demosaic(y: Mosaic, pattern: MsfaPattern, cfg: Optional[InterpConfig] = None) -> SpectralCube:
    cfg = cfg or InterpConfig(method="gaussian")
    if cfg.method != "gaussian":
        raise ValueError(f"config method is {cfg.method!r}, expected 'gaussian'")
    size = _resolve_kernel_size(cfg, pattern.period)
    sigma = cfg.gaussian_sigma if cfg.gaussian_sigma is not None else pattern.period / 2.0
    return normalized_convolution_demosaic(y, pattern, gaussian_kernel(size, sigma))


def weighted_bilinear_demosaic(y: Mosaic, pattern: MsfaPattern, cfg: Optional[InterpConfig] = None) -> SpectralCube:
    """Spectral-difference interpolation against a reference band.

    Steps, with the same tent kernel throughout (default 7x7):
      1. bilinear-interpolate every band; take the band sampled at the pattern
         origin as the reference estimate,
      2. at each band's sampled pixels, form the difference sample minus
         reference estimate,
      3. interpolate each difference plane by normalized convolution,
      4. band estimate = reference estimate + interpolated difference.
    """
    cfg = cfg or InterpConfig(method="weighted_bilinear")
    if cfg.method != "weighted_bilinear":
        raise ValueError(f"config method is {cfg.method!r}, expected 'weighted_bilinear'")
    size = _resolve_kernel_size(cfg, pattern.period)
    kernel = tent_kernel(size)

    sparse, masks = sparse_band_split(y, pattern)
    bands = _normalized_convolution(sparse.data, masks, kernel)
    ref_band = int(pattern.band_index[0, 0])
    ref_est = bands[ref_band]

    diffs = np.where(masks, y.data[None, :, :] - ref_est[None, :, :], np.float32(0.0))
    interp_diffs = _normalized_convolution(diffs.astype(np.float32), masks, kernel)
    out = ref_est[None, :, :] + interp_diffs
    return SpectralCube(y.height, y.width, pattern.channels, out.astype(np.float32))


def demosaic(y: Mosaic, pattern: MsfaPattern, cfg: InterpConfig) -> SpectralCube:
    """Dispatch on cfg.method."""
    fn = {
        "bilinear": bilinear_demosaic,
        "weighted_bilinear": weighted_bilinear_demosaic,
        "gaussian": gaussian_demosaic,
    }[cfg.method]
    return fn(y, pattern, cfg)


def normalized_convolution_operator(
    pattern: MsfaPattern, kernel: np.ndarray, height: int, width: int
) -> tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]:
    """The normalized-convolution demosaic as an explicit linear map with adjoint.

    With the sampling masks fixed, the interpolation is linear in the mosaic:
    x_b = corr_reflect(scatter_b(y), K) / D_b, with D_b = corr_reflect(mask_b, K)
    a constant. The adjoint reverses each factor: divide, adjoint-correlate
    (full convolution + fold of the reflective padding), gather. Used by the
    training graph, where gradients flow through the interpolated input.
    """
    k = np.asarray(kernel, dtype=np.float64)
    kh, kw = k.shape
    rh, rw = kh // 2, kw // 2
    bmap = pattern.tiled(height, width)
    c = pattern.channels
    masks = bmap[None, :, :] == np.arange(c)[:, None, None]
    den = np.stack([ndimage.correlate(m.astype(np.float64), k, mode="reflect") for m in masks])
    if den.min() <= 0:
        raise ValueError("kernel too small for pattern period")
    pad_idx = np.pad(
        np.arange(height * width).reshape(height, width),
        ((rh, rh), (rw, rw)),
        mode="symmetric",
    )

    # compute in float64 regardless of input dtype, cast at the boundary; this
    # keeps forward() bitwise-consistent with normalized_convolution_demosaic
    def forward(y: np.ndarray) -> np.ndarray:
        sparse = np.where(masks, y.astype(np.float64)[None, :, :], 0.0)
        num = np.stack([ndimage.correlate(b, k, mode="reflect") for b in sparse])
        return (num / den).astype(y.dtype)

    def adjoint(z: np.ndarray) -> np.ndarray:
        zd = z.astype(np.float64) / den
        out = np.zeros(height * width, dtype=np.float64)
        for b in range(c):
            full = signal.convolve2d(zd[b], k, mode="full")
            folded = np.zeros(height * width, dtype=np.float64)
            np.add.at(folded, pad_idx.ravel(), full.ravel())
            out += folded * masks[b].ravel()
        return out.reshape(height, width).astype(z.dtype)

    return forward, adjoint
