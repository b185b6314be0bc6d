import numpy as np
import pytest

from msdemosaic.core import Mosaic, Rng, ShapeError, SpectralCube
from msdemosaic.msfa import (
    MosaicOperator, MsfaPattern, adjoint, apply, build_sequential_pattern,
    load_pattern, nullspace_project, save_pattern,
)

from .conftest import random_cube, random_mosaic


class TestPattern:
    def test_sequential_c1(self):
        assert build_sequential_pattern(1).band_index.tolist() == [[0]]

    def test_sequential_c2(self):
        assert build_sequential_pattern(2).band_index.tolist() == [[0, 1], [2, 3]]

    def test_sequential_c4(self):
        pat = build_sequential_pattern(4)
        assert pat.channels == 16
        assert pat.band_index.tolist() == np.arange(16).reshape(4, 4).tolist()

    def test_zero_period_rejected(self):
        with pytest.raises(ValueError):
            build_sequential_pattern(0)

    def test_arbitrary_pattern_allowed(self):
        pat = MsfaPattern(2, np.array([[0, 0], [1, 2]]))
        assert pat.channels == 4

    def test_out_of_range_index_rejected(self):
        with pytest.raises(ValueError):
            MsfaPattern(2, np.array([[0, 1], [2, 4]]))

    def test_file_round_trip(self, tmp_path):
        pat = MsfaPattern(2, np.array([[3, 1], [2, 0]]))
        path = tmp_path / "pattern.txt"
        save_pattern(path, pat)
        again = load_pattern(path)
        assert again.period == 2
        assert np.array_equal(again.band_index, pat.band_index)

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 0 1 2")
        with pytest.raises(ValueError):
            load_pattern(path)


class TestApply:
    def test_constant_cube(self, rng):
        op = MosaicOperator(build_sequential_pattern(2), 6, 6)
        cube = SpectralCube(6, 6, 4, np.full((4, 6, 6), 0.7, np.float32))
        assert np.all(apply(op, cube).data == np.float32(0.7))

    def test_band_identity_selection(self):
        pat = build_sequential_pattern(2)
        op = MosaicOperator(pat, 5, 4)
        cube = SpectralCube(5, 4, 4, np.arange(4, dtype=np.float32)[:, None, None]
                            * np.ones((4, 5, 4), np.float32))
        y = apply(op, cube)
        for h in range(5):
            for w in range(4):
                assert y.data[h, w] == pat.band_index[h % 2, w % 2]

    def test_each_entry_selected_and_contraction(self, rng):
        pat = build_sequential_pattern(3)
        op = MosaicOperator(pat, 7, 8)
        x = random_cube(rng, 7, 8, 9, lo=-1, hi=1)
        y = apply(op, x)
        # enumeration oracle: every measurement equals the selected cube entry
        for h in range(7):
            for w in range(8):
                b = pat.band_index[h % 3, w % 3]
                assert y.data[h, w] == x.data[b, h, w]
        assert np.linalg.norm(y.data) <= np.linalg.norm(x.data) + 1e-6

    def test_channel_mismatch(self, rng):
        op = MosaicOperator(build_sequential_pattern(2), 4, 4)
        with pytest.raises(ShapeError):
            apply(op, random_cube(rng, 4, 4, 3))


class TestAdjoint:
    def test_apply_adjoint_is_identity(self, rng):
        op = MosaicOperator(build_sequential_pattern(2), 5, 7)
        y = random_mosaic(rng, 5, 7)
        assert np.array_equal(apply(op, adjoint(op, y)).data, y.data)

    def test_dot_product_identity(self, rng):
        for trial in range(100):
            c = int(rng.integers(1, 5))
            h = int(rng.integers(c, 17))
            w = int(rng.integers(c, 17))
            op = MosaicOperator(build_sequential_pattern(c), h, w)
            x = random_cube(rng, h, w, c * c, lo=-1, hi=1)
            y = random_mosaic(rng, h, w, lo=-1, hi=1)
            lhs = float(np.vdot(apply(op, x).data.astype(np.float64),
                                y.data.astype(np.float64)))
            rhs = float(np.vdot(x.data.astype(np.float64),
                                adjoint(op, y).data.astype(np.float64)))
            assert lhs == pytest.approx(rhs, rel=1e-5)

    def test_adjoint_of_constant_has_hw_nonzeros(self):
        op = MosaicOperator(build_sequential_pattern(2), 6, 5)
        cube = adjoint(op, Mosaic(6, 5, np.full((6, 5), 2.0, np.float32)))
        assert int(np.count_nonzero(cube.data)) == 6 * 5


class TestNullspace:
    def test_projects_to_zero_mosaic(self, rng):
        op = MosaicOperator(build_sequential_pattern(3), 8, 7)
        v = nullspace_project(op, random_cube(rng, 8, 7, 9))
        assert np.all(apply(op, v).data == 0)

    def test_range_of_adjoint_projects_to_zero_cube(self, rng):
        op = MosaicOperator(build_sequential_pattern(2), 5, 5)
        x = adjoint(op, random_mosaic(rng, 5, 5))
        assert np.all(nullspace_project(op, x).data == 0)

    def test_nonzero_count_on_dense_cube(self, rng):
        op = MosaicOperator(build_sequential_pattern(2), 4, 4)
        x = random_cube(rng, 4, 4, 4, lo=0.1, hi=1.0)  # strictly positive, no accidental zeros
        v = nullspace_project(op, x)
        assert int(np.count_nonzero(v.data)) == 4 * 4 * (4 - 1)


def _cyclic_shift_cube(x: SpectralCube, dh: int, dw: int) -> SpectralCube:
    return SpectralCube(x.height, x.width, x.channels, np.roll(x.data, (dh, dw), axis=(1, 2)))


def _cyclic_shift_mosaic(y: Mosaic, dh: int, dw: int) -> Mosaic:
    return Mosaic(y.height, y.width, np.roll(y.data, (dh, dw), axis=(0, 1)))


class TestShiftEquivariance:
    def test_period_multiples_commute_exactly(self, rng):
        c = 2
        op = MosaicOperator(build_sequential_pattern(c), 8, 8)
        for trial in range(20):
            x = random_cube(rng, 8, 8, 4)
            for mult in (c, 2 * c):
                lhs = apply(op, _cyclic_shift_cube(x, mult, mult)).data
                rhs = _cyclic_shift_mosaic(apply(op, x), mult, mult).data
                assert np.array_equal(lhs, rhs)

    def test_one_pixel_shift_counterexample(self, rng):
        op = MosaicOperator(build_sequential_pattern(2), 8, 8)
        found = False
        for trial in range(10):
            x = random_cube(rng, 8, 8, 4)
            lhs = apply(op, _cyclic_shift_cube(x, 1, 0)).data
            rhs = _cyclic_shift_mosaic(apply(op, x), 1, 0).data
            if not np.array_equal(lhs, rhs):
                found = True
                break
        assert found, "mosaicing appeared equivariant to a 1-pixel shift"


class TestNonMultipleExtent:
    def test_tiling_handles_ragged_sizes(self, rng):
        pat = build_sequential_pattern(4)
        op = MosaicOperator(pat, 9, 11)
        x = random_cube(rng, 9, 11, 16)
        y = apply(op, x)
        assert y.data.shape == (9, 11)
        assert np.array_equal(apply(op, adjoint(op, y)).data, y.data)
