import numpy as np
import pytest

from msdemosaic.core import Mosaic, Rng, SpectralCube


@pytest.fixture
def rng():
    return Rng(20240817)


def random_cube(rng: Rng, height: int, width: int, channels: int, lo=0.0, hi=1.0) -> SpectralCube:
    data = rng.uniform(lo, hi, (channels, height, width)).astype(np.float32)
    return SpectralCube(height, width, channels, data)


def random_mosaic(rng: Rng, height: int, width: int, lo=0.0, hi=1.0) -> Mosaic:
    return Mosaic(height, width, rng.uniform(lo, hi, (height, width)).astype(np.float32))


def smooth_cube(rng: Rng, height: int, width: int, channels: int, sigma=4.0,
                lo=0.3, hi=0.9) -> SpectralCube:
    from scipy.ndimage import gaussian_filter

    data = np.stack([
        gaussian_filter(rng.standard_normal((height, width)), sigma, mode="reflect")
        for _ in range(channels)
    ])
    span = data.max() - data.min()
    if span < 1e-12:
        data = np.full_like(data, 0.5 * (lo + hi))
    else:
        data = lo + (hi - lo) * (data - data.min()) / span
    return SpectralCube(height, width, channels, data.astype(np.float32))
