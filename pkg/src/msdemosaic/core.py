"""Dense image containers and deterministic RNG shared by all modules.

Conventions used throughout the package:

* A spectral cube is stored planar (band-sequential): a float32 array of
  shape ``(C, H, W)``, band plane after band plane. Per-band convolutions
  dominate the workload, so the channel-major layout keeps each plane
  contiguous.
* Arithmetic runs in float32; reductions accumulate in float64.
* Containers are treated as immutable values once constructed. Operations
  are pure functions, so distinct images can be processed on distinct
  threads without locking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes do not match an operation's contract."""


def _as_plane(data, height: int, width: int, dtype) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.shape != (height, width):
        raise ShapeError(f"expected shape {(height, width)}, got {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclass
class SpectralCube:
    """H x W x C image, stored as a planar ``(C, H, W)`` float32 array."""

    height: int
    width: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.shape != (self.channels, self.height, self.width):
            raise ShapeError(
                f"cube data must have shape {(self.channels, self.height, self.width)}, "
                f"got {arr.shape}"
            )
        self.data = np.ascontiguousarray(arr)

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "SpectralCube":
        return cls(height, width, channels, np.zeros((channels, height, width), np.float32))

    @classmethod
    def from_array(cls, data) -> "SpectralCube":
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeError(f"expected (C, H, W) array, got ndim={arr.ndim}")
        c, h, w = arr.shape
        return cls(h, w, c, arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def get(self, h: int, w: int, c: int) -> float:
        return float(self.data[c, h, w])

    def set(self, h: int, w: int, c: int, value: float) -> None:
        """Construction-phase accessor; built cubes are immutable by convention."""
        self.data[c, h, w] = value

    def copy(self) -> "SpectralCube":
        return SpectralCube(self.height, self.width, self.channels, self.data.copy())

    def validate(self) -> "SpectralCube":
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cube contains non-finite values")
        return self


@dataclass
class Mosaic:
    """H x W single-channel sensor measurement."""

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        self.data = _as_plane(self.data, self.height, self.width, np.float32)

    @classmethod
    def zeros(cls, height: int, width: int) -> "Mosaic":
        return cls(height, width, np.zeros((height, width), np.float32))

    @classmethod
    def from_array(cls, data) -> "Mosaic":
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"expected (H, W) array, got ndim={arr.ndim}")
        return cls(arr.shape[0], arr.shape[1], arr)

    def copy(self) -> "Mosaic":
        return Mosaic(self.height, self.width, self.data.copy())

    def validate(self) -> "Mosaic":
        if not np.all(np.isfinite(self.data)):
            raise ValueError("mosaic contains non-finite values")
        return self


@dataclass
class ValidityMask:
    """Boolean per-pixel mask annotating an H x W image."""

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        self.data = _as_plane(self.data, self.height, self.width, bool)

    @classmethod
    def full(cls, height: int, width: int, value: bool = True) -> "ValidityMask":
        return cls(height, width, np.full((height, width), value, dtype=bool))

    @property
    def count(self) -> int:
        return int(self.data.sum())


class Rng:
    """Counter-based (Philox) random stream, splittable into independent substreams.

    Two Rngs built from the same seed and split keys produce identical draws.
    ``split(*keys)`` derives a child stream that is statistically independent
    of the parent and of siblings with different keys, which keeps training,
    sampling, and synthesis reproducible regardless of evaluation order.
    """

    def __init__(self, seed: int, _keys: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._keys = tuple(int(k) for k in _keys)
        seq = np.random.SeedSequence(self.seed, spawn_key=self._keys)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def split(self, *keys: int) -> "Rng":
        return Rng(self.seed, self._keys + tuple(keys))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def standard_normal(self, size=None, dtype=np.float64):
        return self._gen.standard_normal(size, dtype=dtype)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, keys={self._keys})"


ImageLike = Union[SpectralCube, Mosaic]


def cube_map_binary(
    a: SpectralCube,
    b: Union[SpectralCube, float],
    op: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> SpectralCube:
    """Elementwise combination of two cubes (or a cube and a scalar)."""
    if isinstance(b, SpectralCube):
        if a.shape != b.shape:
            raise ShapeError(f"cube shapes differ: {a.shape} vs {b.shape}")
        other = b.data
    else:
        other = np.float32(b)
    out = np.asarray(op(a.data, other), dtype=np.float32)
    return SpectralCube(a.height, a.width, a.channels, out)


def squared_norm(a: ImageLike) -> float:
    """Sum of squared entries, accumulated in float64."""
    flat = a.data.ravel()
    return float(np.dot(flat.astype(np.float64), flat.astype(np.float64)))
