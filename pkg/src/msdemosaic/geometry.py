"""Perspective transforms for a camera rotating about its center.

A rotation by Euler angles (theta_x, theta_y, theta_z) seen through a pinhole
camera with intrinsics K acts on pixel coordinates as the homography
K Rz Ry Rx K^-1. Warping is done by inverse mapping with bilinear sampling;
pixels whose source falls outside the input rectangle are flagged invalid
rather than zero-filled, so downstream losses can ignore them.

Pixel convention: homogeneous points are (x, y, 1) = (column, row, 1), with
pixel centers on the integer grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Rng, ShapeError, SpectralCube, ValidityMask

_DEGENERATE_W = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics: focal length (pixels), principal point, pixel aspect fy/fx."""

    focal: float
    principal_point: tuple[float, float]  # (cx, cy) in pixels
    pixel_aspect: float = 1.0

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal length must be positive")

    def matrix(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array(
            [
                [self.focal, 0.0, cx],
                [0.0, self.focal * self.pixel_aspect, cy],
                [0.0, 0.0, 1.0],
            ]
        )


def default_intrinsics(height: int, width: int) -> Intrinsics:
    """focal = image width (about 53 deg horizontal FOV), principal point = center."""
    return Intrinsics(float(width), ((width - 1) / 2.0, (height - 1) / 2.0))


@dataclass(frozen=True)
class EulerAngles:
    theta_x: float
    theta_y: float
    theta_z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.theta_x, self.theta_y, self.theta_z)):
            raise ValueError("angles must be finite")


@dataclass(frozen=True)
class Homography:
    """3x3 invertible projective map, normalized so matrix[2,2] == 1 when nonzero."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ShapeError(f"homography matrix must be 3x3, got {m.shape}")
        if abs(m[2, 2]) > _DEGENERATE_W:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


@dataclass(frozen=True)
class TransformSamplerConfig:
    """Half-widths (radians) of the uniform angle ranges, plus camera intrinsics."""

    range_x: float
    range_y: float
    range_z: float
    intrinsics: Intrinsics

    def __post_init__(self):
        if min(self.range_x, self.range_y, self.range_z) < 0:
            raise ValueError("angle ranges must be >= 0")


def _rot_x(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def homography_from_angles(k: Intrinsics, angles: EulerAngles) -> Homography:
    """K Rz Ry Rx K^-1, right-handed rotations, Rx applied first."""
    km = k.matrix()
    rot = _rot_z(angles.theta_z) @ _rot_y(angles.theta_y) @ _rot_x(angles.theta_x)
    return Homography(km @ rot @ np.linalg.inv(km))


def sample_angles(rng: Rng, cfg: TransformSamplerConfig) -> EulerAngles:
    """Uniform draw from [-range, +range] per axis."""
    tx = float(rng.uniform(-cfg.range_x, cfg.range_x)) if cfg.range_x > 0 else 0.0
    ty = float(rng.uniform(-cfg.range_y, cfg.range_y)) if cfg.range_y > 0 else 0.0
    tz = float(rng.uniform(-cfg.range_z, cfg.range_z)) if cfg.range_z > 0 else 0.0
    return EulerAngles(tx, ty, tz)


def sample_transform(rng: Rng, cfg: TransformSamplerConfig) -> Homography:
    return homography_from_angles(cfg.intrinsics, sample_angles(rng, cfg))


def invert(h: Homography) -> Homography:
    return Homography(np.linalg.inv(h.matrix))


@dataclass(frozen=True)
class WarpPlan:
    """Precomputed inverse-warp sampling layout for one (H, W, homography) triple.

    The plan is the linear part of the warp: per output pixel, the four
    source-neighbor flat indices and their bilinear weights, plus the validity
    mask. It is reused by the autodiff graph, whose backward pass scatters
    gradients with the same indices and weights.
    """

    height: int
    width: int
    idx00: np.ndarray
    idx01: np.ndarray
    idx10: np.ndarray
    idx11: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    w00: np.ndarray
    w01: np.ndarray
    w10: np.ndarray
    w11: np.ndarray
    mask: np.ndarray  # (H, W) bool

    def apply_planes(self, planes: np.ndarray) -> np.ndarray:
        """Sample each (H, W) plane of a (C, H, W) array; invalid pixels are 0.

        Nested lerps rather than a 4-weight sum so constants survive bitwise.
        """
        c = planes.shape[0]
        flat = planes.reshape(c, -1)
        v00 = flat[:, self.idx00]
        v01 = flat[:, self.idx01]
        v10 = flat[:, self.idx10]
        v11 = flat[:, self.idx11]
        top = v00 + self.fx * (v01 - v00)
        bot = v10 + self.fx * (v11 - v10)
        out = (top + self.fy * (bot - top)).reshape(planes.shape)
        out *= self.mask[None, :, :]
        return out.astype(planes.dtype, copy=False)

    def scatter_adjoint(self, grad: np.ndarray) -> np.ndarray:
        """Adjoint of apply_planes: scatter-add output gradients to source pixels."""
        c = grad.shape[0]
        g = (grad * self.mask[None, :, :]).reshape(c, -1)
        out = np.zeros((c, self.height * self.width), dtype=grad.dtype)
        for pair in ((self.idx00, self.w00), (self.idx01, self.w01),
                     (self.idx10, self.w10), (self.idx11, self.w11)):
            idx, w = pair
            np.add.at(out, (slice(None), idx), g * w)
        return out.reshape(grad.shape)


def build_warp_plan(height: int, width: int, h: Homography) -> WarpPlan:
    hinv = np.linalg.inv(h.matrix)
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(height * width)])
    src = hinv @ pts
    wcoord = src[2]
    ok = wcoord > _DEGENERATE_W
    safe_w = np.where(ok, wcoord, 1.0)
    sx = src[0] / safe_w
    sy = src[1] / safe_w

    inside = ok & (sx >= 0.0) & (sx <= width - 1) & (sy >= 0.0) & (sy <= height - 1)
    sx = np.where(inside, sx, 0.0)
    sy = np.where(inside, sy, 0.0)

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    # keep all four neighbors in-bounds when the source sits exactly on the far edge
    x0 = np.minimum(x0, width - 2) if width > 1 else np.zeros_like(x0)
    y0 = np.minimum(y0, height - 2) if height > 1 else np.zeros_like(y0)
    fx = sx - x0
    fy = sy - y0
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)

    return WarpPlan(
        height=height,
        width=width,
        idx00=y0 * width + x0,
        idx01=y0 * width + x1,
        idx10=y1 * width + x0,
        idx11=y1 * width + x1,
        fx=fx,
        fy=fy,
        w00=(1 - fy) * (1 - fx),
        w01=(1 - fy) * fx,
        w10=fy * (1 - fx),
        w11=fy * fx,
        mask=inside.reshape(height, width),
    )


def warp(x: SpectralCube, h: Homography) -> tuple[SpectralCube, ValidityMask]:
    """Inverse-warp all bands of x by h with bilinear sampling.

    Returns the warped cube (0 at invalid pixels) and the validity mask.
    """
    plan = build_warp_plan(x.height, x.width, h)
    out = plan.apply_planes(x.data)
    return (
        SpectralCube(x.height, x.width, x.channels, out),
        ValidityMask(x.height, x.width, plan.mask),
    )
