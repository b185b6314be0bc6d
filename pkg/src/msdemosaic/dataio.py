"""Cube container format, mosaic simulation, synthetic scenes, false-RGB export.

Cube file layout (little-endian throughout):

    offset  size  field
    0       4     magic "MSIC"
    4       4     version, u32 = 1
    8       4     height, u32
    12      4     width, u32
    16      4     channels, u32
    20      4     dtype tag, u32 = 1 (float32)
    24      -     payload: channels * height * width float32 values,
                  planar band-sequential (band 0 plane first, row-major)

Mosaics are stored in the same container with channels = 1.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from . import msfa
from .core import Mosaic, Rng, ShapeError, SpectralCube
from .msfa import MsfaPattern

_MAGIC = b"MSIC"
_HEADER = struct.Struct("<4s5I")
_DTYPE_FLOAT32 = 1


class CubeFormatError(ValueError):
    """Malformed cube file: bad magic, truncated payload, or dtype mismatch."""


def write_cube(path, x: SpectralCube) -> None:
    payload = np.ascontiguousarray(x.data, dtype="<f4").tobytes()
    header = _HEADER.pack(_MAGIC, 1, x.height, x.width, x.channels, _DTYPE_FLOAT32)
    Path(path).write_bytes(header + payload)


def write_mosaic(path, y: Mosaic) -> None:
    write_cube(path, SpectralCube(y.height, y.width, 1, y.data[None, :, :]))


def _read_header(raw: bytes, path) -> tuple[int, int, int]:
    if len(raw) < _HEADER.size:
        raise CubeFormatError(f"{path}: file shorter than header")
    magic, version, h, w, c, tag = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise CubeFormatError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise CubeFormatError(f"{path}: unsupported version {version}")
    if tag != _DTYPE_FLOAT32:
        raise CubeFormatError(f"{path}: dtype mismatch (tag {tag}, expected {_DTYPE_FLOAT32})")
    return h, w, c


def probe_cube(path) -> tuple[int, int, int]:
    """Read (H, W, C) from the header without touching the payload."""
    with open(path, "rb") as fh:
        return _read_header(fh.read(_HEADER.size), path)


def read_cube(path) -> SpectralCube:
    raw = Path(path).read_bytes()
    h, w, c = _read_header(raw, path)
    expected = 4 * h * w * c
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise CubeFormatError(f"{path}: truncated payload ({len(payload)} bytes, expected {expected})")
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    return SpectralCube(h, w, c, data.copy())


def read_mosaic(path) -> Mosaic:
    cube = read_cube(path)
    if cube.channels != 1:
        raise CubeFormatError(f"{path}: expected a single-channel mosaic, got {cube.channels} channels")
    return Mosaic(cube.height, cube.width, cube.data[0])


@dataclass(frozen=True)
class SimulationConfig:
    pattern: MsfaPattern
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")


def simulate_mosaic(x: SpectralCube, cfg: SimulationConfig, rng: Optional[Rng] = None) -> Mosaic:
    """Selection plus optional additive Gaussian noise."""
    op = msfa.MosaicOperator(cfg.pattern, x.height, x.width)
    y = msfa.apply(op, x)
    if cfg.noise_sigma == 0.0:
        return y
    if rng is None:
        raise ValueError("noise_sigma > 0 requires an Rng")
    noise = rng.standard_normal((x.height, x.width)) * cfg.noise_sigma
    return Mosaic(x.height, x.width, (y.data.astype(np.float64) + noise).astype(np.float32))


@dataclass(frozen=True)
class SynthConfig:
    """Piecewise-smooth scene generator settings (desk-scale dataset stand-in)."""

    count: int = 25
    height: int = 64
    width: int = 64
    channels: int = 16
    smoothness: float = 8.0          # spatial low-pass scale, pixels
    n_shapes: int = 6                # geometric primitives per scene
    spectra_smoothness: float = 4.0  # band-axis low-pass scale
    seed: int = 0

    def __post_init__(self):
        if min(self.count, self.height, self.width, self.channels) < 1:
            raise ValueError("count and dimensions must be positive")
        if self.smoothness <= 0 or self.spectra_smoothness <= 0:
            raise ValueError("smoothness scales must be positive")
        if self.n_shapes < 0:
            raise ValueError("n_shapes must be >= 0")


def _smooth_field(rng: Rng, height: int, width: int, scale: float) -> np.ndarray:
    """Spline-upsampled coarse noise: O(1) values at any scale, constant in the limit."""
    gh = max(2, int(np.ceil(height / scale)) + 1)
    gw = max(2, int(np.ceil(width / scale)) + 1)
    coarse = rng.standard_normal((gh + 3, gw + 3))
    hh, ww = np.meshgrid(np.arange(height) / scale, np.arange(width) / scale, indexing="ij")
    return ndimage.map_coordinates(coarse, [hh.ravel(), ww.ravel()], order=3, mode="mirror").reshape(height, width)


def _smooth_spectrum(rng: Rng, channels: int, scale: float) -> np.ndarray:
    gc = max(2, int(np.ceil(channels / scale)) + 1)
    coarse = rng.standard_normal(gc + 3)
    return ndimage.map_coordinates(coarse, [np.arange(channels) / scale], order=3, mode="mirror")


def _ellipse_mask(rng: Rng, height: int, width: int) -> np.ndarray:
    cy = rng.uniform(0.15 * height, 0.85 * height)
    cx = rng.uniform(0.15 * width, 0.85 * width)
    ry = rng.uniform(0.08 * height, 0.3 * height)
    rx = rng.uniform(0.08 * width, 0.3 * width)
    ang = rng.uniform(0, np.pi)
    hh, ww = np.meshgrid(np.arange(height) - cy, np.arange(width) - cx, indexing="ij")
    u = np.cos(ang) * ww + np.sin(ang) * hh
    v = -np.sin(ang) * ww + np.cos(ang) * hh
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _polygon_mask(rng: Rng, height: int, width: int) -> np.ndarray:
    n = int(rng.integers(3, 6))
    cy = rng.uniform(0.2 * height, 0.8 * height)
    cx = rng.uniform(0.2 * width, 0.8 * width)
    radius = rng.uniform(0.1, 0.35) * min(height, width)
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    vy = cy + radius * np.sin(angles)
    vx = cx + radius * np.cos(angles)
    hh, ww = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    mask = np.ones((height, width), dtype=bool)
    for i in range(n):
        j = (i + 1) % n
        ey, ex = vy[j] - vy[i], vx[j] - vx[i]
        cross = ex * (hh - vy[i]) - ey * (ww - vx[i])
        mask &= cross >= 0
    return mask


def synth_scene(cfg: SynthConfig, rng: Rng) -> SpectralCube:
    """Low-pass background plus flat-spectrum shapes, clipped to [0, 1].

    Region spectra vary smoothly along the band axis, so adjacent band planes
    stay strongly correlated, mimicking real multispectral content.
    """
    h, w, c = cfg.height, cfg.width, cfg.channels
    base = 0.5 + 0.12 * _smooth_spectrum(rng.split(0), c, cfg.spectra_smoothness)
    f1 = _smooth_field(rng.split(1), h, w, cfg.smoothness)
    f2 = _smooth_field(rng.split(2), h, w, cfg.smoothness)
    s1 = _smooth_spectrum(rng.split(3), c, cfg.spectra_smoothness)
    s2 = _smooth_spectrum(rng.split(4), c, cfg.spectra_smoothness)
    scene = (
        base[:, None, None]
        + 0.12 * s1[:, None, None] * f1[None, :, :]
        + 0.08 * s2[:, None, None] * f2[None, :, :]
    )

    for i in range(cfg.n_shapes):
        srng = rng.split(10 + i)
        mask = _ellipse_mask(srng.split(0), h, w) if i % 2 == 0 else _polygon_mask(srng.split(0), h, w)
        if not mask.any():
            continue
        spectrum = 0.5 + 0.2 * _smooth_spectrum(srng.split(1), c, cfg.spectra_smoothness)
        texture = 0.05 * float(srng.uniform(-1, 1)) * f1[mask]
        scene[:, mask] = spectrum[:, None] + texture[None, :]

    return SpectralCube(h, w, c, np.clip(scene, 0.0, 1.0).astype(np.float32))


def synth_dataset(cfg: SynthConfig) -> list[SpectralCube]:
    """count scenes from independent per-scene substreams of the config seed."""
    root = Rng(cfg.seed)
    return [synth_scene(cfg, root.split(100 + i)) for i in range(cfg.count)]


def false_rgb(
    x: SpectralCube,
    bands: Optional[Sequence[int]] = None,
    average: bool = False,
    scaling: str = "fixed",
    path=None,
) -> np.ndarray:
    """Collapse a cube to an 8-bit RGB image; optionally write it as PNG.

    bands: triplet of band indices mapped to (R, G, B). Default: long, middle,
    short band (C-1, C//2, 0). With average=True, bands are averaged in thirds
    instead. scaling: "fixed" clips [0, 1]; "minmax" rescales to the full range.
    """
    c = x.channels
    if average:
        thirds = np.array_split(np.arange(c), 3) if c >= 3 else [np.arange(c)] * 3
        channels = [x.data[idx].mean(axis=0) for idx in thirds]
    else:
        if bands is None:
            bands = (c - 1, c // 2, 0)
        if len(bands) != 3:
            raise ValueError("bands must be a triplet")
        for b in bands:
            if not 0 <= b < c:
                raise ValueError(f"band index {b} out of range [0, {c})")
        channels = [x.data[b] for b in bands]
    img = np.stack(channels, axis=-1).astype(np.float64)
    if scaling == "minmax":
        lo, hi = float(img.min()), float(img.max())
        img = np.full_like(img, 0.5) if hi - lo < 1e-12 else (img - lo) / (hi - lo)
    elif scaling == "fixed":
        img = np.clip(img, 0.0, 1.0)
    else:
        raise ValueError(f"unknown scaling mode: {scaling!r}")
    out = np.round(img * 255.0).astype(np.uint8)
    if path is not None:
        Image.fromarray(out, mode="RGB").save(Path(path), format="PNG")
    return out


def cube_from_band_images(paths: Sequence) -> SpectralCube:
    """Stack per-band grayscale images (one file per band) into a cube.

    Integer images are scaled by their dtype range; float images are taken as-is.
    """
    if not paths:
        raise ValueError("no band images given")
    planes = []
    for p in paths:
        arr = np.asarray(Image.open(p).convert("I;16") if str(p).lower().endswith((".tif", ".tiff"))
                         else Image.open(p).convert("L"))
        arr = arr.astype(np.float32)
        if arr.max() > 1.0:
            arr /= 65535.0 if arr.max() > 255 else 255.0
        planes.append(arr)
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise ShapeError(f"band images disagree on shape: {sorted(shapes)}")
    data = np.stack(planes)
    return SpectralCube(data.shape[1], data.shape[2], data.shape[0], data)


def write_manifest(path, meta: dict, items: list[dict]) -> None:
    doc = dict(meta)
    doc["items"] = items
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> tuple[dict, list[dict]]:
    doc = json.loads(Path(path).read_text())
    items = doc.pop("items", [])
    return doc, items
