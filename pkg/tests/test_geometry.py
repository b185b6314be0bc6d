import math

import numpy as np
import pytest

from msdemosaic.core import Rng, SpectralCube
from msdemosaic.geometry import (
    EulerAngles, Homography, Intrinsics, TransformSamplerConfig, build_warp_plan,
    default_intrinsics, homography_from_angles, invert, sample_angles,
    sample_transform, warp,
)
from msdemosaic.metrics import psnr

from .conftest import smooth_cube

K16 = Intrinsics(16.0, (8.0, 8.0))


def _rot(axis, t):
    c, s = math.cos(t), math.sin(t)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], float)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], float)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], float)


class TestHomographyFromAngles:
    def test_identity_at_zero_angles(self):
        h = homography_from_angles(K16, EulerAngles(0, 0, 0))
        assert np.max(np.abs(h.matrix - np.eye(3))) <= 1e-12

    def test_roll_composition_law(self):
        a, b = 0.3, -0.8
        ha = homography_from_angles(K16, EulerAngles(0, 0, a))
        hb = homography_from_angles(K16, EulerAngles(0, 0, b))
        hab = homography_from_angles(K16, EulerAngles(0, 0, a + b))
        prod = ha.matrix @ hb.matrix
        prod /= prod[2, 2]
        assert np.max(np.abs(prod - hab.matrix)) <= 1e-10

    def test_quarter_roll_pixel_mapping(self):
        # independent 3x3 multiply oracle: (8+u, 8+v) -> (8-v, 8+u)
        h = homography_from_angles(K16, EulerAngles(0, 0, math.pi / 2))
        for (u, v) in [(3.0, 2.0), (-1.5, 4.0), (0.0, -5.0)]:
            p = h.matrix @ np.array([8 + u, 8 + v, 1.0])
            p /= p[2]
            assert abs(p[0] - (8 - v)) <= 1e-9
            assert abs(p[1] - (8 + u)) <= 1e-9

    def test_matches_explicit_matrix_product(self):
        ang = EulerAngles(0.05, -0.08, 0.6)
        km = K16.matrix()
        oracle = km @ _rot("z", 0.6) @ _rot("y", -0.08) @ _rot("x", 0.05) @ np.linalg.inv(km)
        oracle /= oracle[2, 2]
        h = homography_from_angles(K16, ang)
        assert np.max(np.abs(h.matrix - oracle)) <= 1e-12


class TestSampler:
    def _cfg(self, rx=0.0, ry=0.0, rz=0.0):
        return TransformSamplerConfig(rx, ry, rz, K16)

    def test_zero_ranges_give_identity(self, rng):
        h = sample_transform(rng, self._cfg())
        assert np.max(np.abs(h.matrix - np.eye(3))) <= 1e-12

    def test_fixed_seed_reproduces(self):
        cfg = self._cfg(0.1, 0.1, math.pi)
        h1 = sample_transform(Rng(5), cfg)
        h2 = sample_transform(Rng(5), cfg)
        assert np.array_equal(h1.matrix, h2.matrix)

    def test_roll_angle_mean_near_zero(self, rng):
        cfg = self._cfg(0.0, 0.0, math.pi)
        draws = np.array([sample_angles(rng.split(i), cfg).theta_z for i in range(10_000)])
        se = (2 * math.pi / math.sqrt(12.0)) / math.sqrt(10_000)
        assert abs(draws.mean()) <= 3 * se
        assert draws.min() >= -math.pi and draws.max() <= math.pi

    def test_negative_range_rejected(self):
        with pytest.raises(ValueError):
            TransformSamplerConfig(-0.1, 0, 0, K16)


class TestInvert:
    def test_identity(self):
        h = invert(Homography.identity())
        assert np.max(np.abs(h.matrix - np.eye(3))) <= 1e-12

    def test_reversed_negated_angles_oracle(self):
        ang = EulerAngles(0.07, -0.04, 1.1)
        h = homography_from_angles(K16, ang)
        km = K16.matrix()
        oracle = km @ _rot("x", -0.07) @ _rot("y", 0.04) @ _rot("z", -1.1) @ np.linalg.inv(km)
        oracle /= oracle[2, 2]
        assert np.max(np.abs(invert(h).matrix - oracle)) <= 1e-9

    def test_double_inversion(self):
        h = homography_from_angles(K16, EulerAngles(0.02, 0.06, -0.9))
        assert np.max(np.abs(invert(invert(h)).matrix - h.matrix)) <= 1e-9

    def test_product_with_inverse_is_identity(self):
        h = homography_from_angles(K16, EulerAngles(0.02, 0.06, -0.9))
        prod = h.matrix @ invert(h).matrix
        prod /= prod[2, 2]
        assert np.max(np.abs(prod - np.eye(3))) <= 1e-9

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            Homography(np.array([[1.0, 0, 0], [2.0, 0, 0], [0, 0, 1.0]]))


class TestWarp:
    def test_identity_exact(self, rng):
        cube = smooth_cube(rng, 8, 9, 4)
        out, mask = warp(cube, Homography.identity())
        assert np.array_equal(out.data, cube.data)
        assert mask.data.all()

    def test_integer_translation_matches_array_shift(self, rng):
        cube = smooth_cube(rng, 10, 12, 3)
        dx, dy = 3, 2  # output (x,y) sources from (x-dx, y-dy)
        h = Homography(np.array([[1.0, 0, dx], [0, 1.0, dy], [0, 0, 1.0]]))
        out, mask = warp(cube, h)
        assert mask.data[dy:, dx:].all()
        assert not mask.data[:dy, :].any() and not mask.data[:, :dx].any()
        expected = cube.data[:, : 10 - dy, : 12 - dx]
        np.testing.assert_array_equal(out.data[:, dy:, dx:], expected)

    def test_round_trip_psnr(self, rng):
        cube = smooth_cube(rng, 64, 64, 3, sigma=5.0)
        k = default_intrinsics(64, 64)
        ang = EulerAngles(math.radians(3.0), math.radians(-4.0), math.radians(2.0))
        h = homography_from_angles(k, ang)
        fwd, m1 = warp(cube, h)
        back, m2 = warp(fwd, invert(h))
        m1_back, _ = warp(
            SpectralCube(64, 64, 1, m1.data[None].astype(np.float32)), invert(h)
        )
        region = m2.data & (m1_back.data[0] > 0.999)
        assert region.sum() > 1000
        a = SpectralCube(64, 64, 3, np.where(region, back.data, 0).astype(np.float32))
        b = SpectralCube(64, 64, 3, np.where(region, cube.data, 0).astype(np.float32))
        assert psnr(a, b) >= 40.0

    def test_constant_preserved_exactly_on_valid_region(self):
        cube = SpectralCube(32, 32, 2, np.full((2, 32, 32), 0.625, np.float32))
        h = homography_from_angles(default_intrinsics(32, 32),
                                   EulerAngles(0.05, -0.03, 0.7))
        out, mask = warp(cube, h)
        assert np.all(out.data[:, mask.data] == np.float32(0.625))

    def test_mask_soundness_all_neighbors_inside(self):
        h = homography_from_angles(default_intrinsics(16, 16), EulerAngles(0.08, 0.02, 0.4))
        plan = build_warp_plan(16, 16, h)
        valid = plan.mask.ravel()
        for idx in (plan.idx00, plan.idx01, plan.idx10, plan.idx11):
            assert np.all(idx[valid] >= 0) and np.all(idx[valid] < 16 * 16)
        # corner indices of each valid pixel span a real 2x2 cell
        assert np.all(plan.idx11[valid] - plan.idx00[valid] == 16 + 1)

    def test_degenerate_dehomogenization_marks_invalid(self):
        # third row sends the far column to w = 0
        m = np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0 / 15.0, 0, 1.0]])
        h = Homography(np.linalg.inv(m))  # inverse warp uses h^-1 = m
        cube = SpectralCube(8, 16, 1, np.ones((1, 8, 16), np.float32))
        out, mask = warp(cube, h)
        assert not mask.data[:, 15].any()
        assert np.all(np.isfinite(out.data))


class TestGroupClosure:
    def test_product_is_conjugated_rotation(self, rng):
        k = default_intrinsics(48, 48)
        cfg = TransformSamplerConfig(0.1, 0.1, math.pi, k)
        km = k.matrix()
        for i in range(10):
            h1 = sample_transform(rng.split(2 * i), cfg)
            h2 = sample_transform(rng.split(2 * i + 1), cfg)
            prod = h1.matrix @ h2.matrix
            m = np.linalg.inv(km) @ prod @ km
            scale = np.linalg.det(m) ** (1.0 / 3.0)
            r = m / scale
            assert np.max(np.abs(r @ r.T - np.eye(3))) <= 1e-8
