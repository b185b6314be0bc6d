"""The linear mosaicing operator: per-pixel band selection, adjoint, null-space.

Each measurement row selects exactly one spatial-spectral sample, so the
operator's rows are distinct standard basis vectors. Consequences used all
over the package:

* ``apply(op, adjoint(op, y)) == y`` bitwise (selection then scatter),
* the pseudo-inverse equals the adjoint (no linear solve needed),
* the null-space projector is "zero the selected entries", exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Mosaic, ShapeError, SpectralCube


@dataclass(frozen=True)
class MsfaPattern:
    """Periodic c x c grid assigning one band index to each pixel position."""

    period: int
    band_index: np.ndarray  # (c, c) int array, entries in [0, period**2)

    def __post_init__(self):
        c = self.period
        if c < 1:
            raise ValueError("pattern period must be >= 1")
        grid = np.asarray(self.band_index, dtype=np.int64)
        if grid.shape != (c, c):
            raise ShapeError(f"band_index must be {(c, c)}, got {grid.shape}")
        if grid.min() < 0 or grid.max() >= c * c:
            raise ValueError(f"band indices must lie in [0, {c * c})")
        object.__setattr__(self, "band_index", grid)

    @property
    def channels(self) -> int:
        return self.period * self.period

    def tiled(self, height: int, width: int) -> np.ndarray:
        """Band index per pixel for an H x W sensor (modular tiling)."""
        rows = np.arange(height) % self.period
        cols = np.arange(width) % self.period
        return self.band_index[np.ix_(rows, cols)]


def build_sequential_pattern(c: int) -> MsfaPattern:
    """Row-major sequential pattern: band_index[i][j] = i*c + j."""
    if c < 1:
        raise ValueError("pattern period must be >= 1")
    return MsfaPattern(c, np.arange(c * c, dtype=np.int64).reshape(c, c))


def load_pattern(path) -> MsfaPattern:
    """Read a pattern config: the period c followed by c*c whitespace-separated indices."""
    tokens = Path(path).read_text().split()
    if not tokens:
        raise ValueError(f"empty pattern file: {path}")
    try:
        values = [int(t) for t in tokens]
    except ValueError as exc:
        raise ValueError(f"non-integer token in pattern file {path}") from exc
    c = values[0]
    if len(values) != 1 + c * c:
        raise ValueError(f"pattern file {path}: expected {c * c} indices, got {len(values) - 1}")
    return MsfaPattern(c, np.array(values[1:], dtype=np.int64).reshape(c, c))


def save_pattern(path, pattern: MsfaPattern) -> None:
    lines = [str(pattern.period)]
    for row in pattern.band_index:
        lines.append(" ".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class MosaicOperator:
    """Selection operator for a pattern tiled over an H x W sensor.

    H and W need not be multiples of the period; the pattern is tiled with
    modular indexing, matching sensors that crop arbitrarily.
    """

    pattern: MsfaPattern
    height: int
    width: int
    band_map: np.ndarray = field(init=False, repr=False)
    _flat_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("operator extent must be positive")
        bmap = self.pattern.tiled(self.height, self.width)
        hh, ww = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        flat = bmap * (self.height * self.width) + hh * self.width + ww
        object.__setattr__(self, "band_map", bmap)
        object.__setattr__(self, "_flat_index", flat.ravel())

    @property
    def channels(self) -> int:
        return self.pattern.channels


def apply(op: MosaicOperator, x: SpectralCube) -> Mosaic:
    """y[h, w] = x[h, w, band_index[h mod c, w mod c]]."""
    if (x.height, x.width) != (op.height, op.width):
        raise ShapeError(f"cube extent {(x.height, x.width)} != operator {(op.height, op.width)}")
    if x.channels != op.channels:
        raise ShapeError(f"cube has {x.channels} channels, operator expects {op.channels}")
    y = x.data.ravel()[op._flat_index].reshape(op.height, op.width)
    return Mosaic(op.height, op.width, y)


def adjoint(op: MosaicOperator, y: Mosaic) -> SpectralCube:
    """Scatter y into the selected band positions, zero elsewhere (equals A-dagger)."""
    if (y.height, y.width) != (op.height, op.width):
        raise ShapeError(f"mosaic extent {(y.height, y.width)} != operator {(op.height, op.width)}")
    out = np.zeros(op.channels * op.height * op.width, dtype=np.float32)
    out[op._flat_index] = y.data.ravel()
    return SpectralCube(op.height, op.width, op.channels, out.reshape(op.channels, op.height, op.width))


def nullspace_project(op: MosaicOperator, x: SpectralCube) -> SpectralCube:
    """v = x - adjoint(apply(x)): zero at every measured position, so A v = 0 exactly."""
    if (x.height, x.width) != (op.height, op.width) or x.channels != op.channels:
        raise ShapeError("cube shape inconsistent with operator")
    out = x.data.copy().ravel()
    out[op._flat_index] = 0.0
    return SpectralCube(op.height, op.width, op.channels, out.reshape(x.data.shape))
