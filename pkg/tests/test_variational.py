import numpy as np
import pytest

from msdemosaic.core import Mosaic, SpectralCube
from msdemosaic.msfa import MosaicOperator, apply, build_sequential_pattern
from msdemosaic.variational import TvConfig, tv_demosaic, tv_objective, tv_prox, tv_seminorm

from .conftest import random_cube, random_mosaic, smooth_cube

PAT2 = build_sequential_pattern(2)


class TestSeminorm:
    def test_constant_is_zero(self):
        assert tv_seminorm(SpectralCube(4, 4, 2, np.full((2, 4, 4), 0.3, np.float32))) == 0.0

    def test_hand_count(self):
        cube = SpectralCube(2, 2, 1, np.array([[[0.0, 1.0], [0.0, 1.0]]], np.float32))
        # two horizontal unit differences, no vertical ones
        assert tv_seminorm(cube) == pytest.approx(2.0, abs=1e-12)

    def test_against_naive_loop(self, rng):
        cube = random_cube(rng, 6, 5, 3, lo=-1, hi=1)
        acc = 0.0
        for c in range(3):
            for h in range(6):
                for w in range(5):
                    if h + 1 < 6:
                        acc += abs(float(cube.data[c, h + 1, w]) - float(cube.data[c, h, w]))
                    if w + 1 < 5:
                        acc += abs(float(cube.data[c, h, w + 1]) - float(cube.data[c, h, w]))
        assert tv_seminorm(cube) == pytest.approx(acc, rel=1e-6)


class TestProx:
    def test_zero_weight_is_identity(self, rng):
        x = random_cube(rng, 6, 6, 2)
        out = tv_prox(x, 0.0)
        assert np.array_equal(out.data, x.data)

    def test_constant_unchanged(self):
        x = SpectralCube(5, 5, 1, np.full((1, 5, 5), 0.7, np.float32))
        out = tv_prox(x, 0.5, inner_iters=50)
        np.testing.assert_allclose(out.data, 0.7, atol=1e-6)

    def test_two_sample_step_shrinks_by_twice_weight(self):
        # analytic prox of a 1-D step [a, b]: each side moves by w, the jump
        # shrinks by exactly 2w while the plateaus do not merge
        a, b, w = 0.2, 0.8, 0.05
        x = SpectralCube(1, 2, 1, np.array([[[a, b]]], np.float32))
        out = tv_prox(x, w, inner_iters=200)
        assert out.data[0, 0, 0] == pytest.approx(a + w, abs=1e-3)
        assert out.data[0, 0, 1] == pytest.approx(b - w, abs=1e-3)

    def test_plateau_step_analytic(self):
        # plateaus of length n move by w/n toward each other
        n, a, b, w = 4, 0.1, 0.9, 0.08
        signal = np.array([a] * n + [b] * n, np.float32).reshape(1, 1, 2 * n)
        out = tv_prox(SpectralCube(1, 2 * n, 1, signal), w, inner_iters=400)
        np.testing.assert_allclose(out.data[0, 0, :n], a + w / n, atol=1e-3)
        np.testing.assert_allclose(out.data[0, 0, n:], b - w / n, atol=1e-3)

    def test_band_order_independence(self, rng):
        x = random_cube(rng, 8, 8, 3)
        joint = tv_prox(x, 0.1, inner_iters=30)
        for b in range(3):
            single = tv_prox(SpectralCube(8, 8, 1, x.data[b:b + 1]), 0.1, inner_iters=30)
            np.testing.assert_array_equal(joint.data[b], single.data[0])


class TestDemosaic:
    def test_constant_scene_converges_to_constant(self):
        cube = SpectralCube(12, 12, 4, np.full((4, 12, 12), 0.5, np.float32))
        op = MosaicOperator(PAT2, 12, 12)
        y = apply(op, cube)
        out, trace = tv_demosaic(y, op, TvConfig(lam=0.05, outer_iters=200, tol=1e-12),
                                 return_trace=True)
        np.testing.assert_allclose(out.data, 0.5, atol=1e-3)
        assert trace[-1] <= 1e-3

    def test_lambda_zero_reaches_measurement_consistency(self, rng):
        op = MosaicOperator(PAT2, 12, 12)
        y = random_mosaic(rng, 12, 12)
        out = tv_demosaic(y, op, TvConfig(lam=0.0, outer_iters=5))
        mse = float(np.mean((apply(op, out).data - y.data) ** 2))
        assert mse <= 1e-6

    def test_monotone_objective_descent(self, rng):
        violations = []
        for trial in range(20):
            h = int(rng.integers(8, 17))
            w = int(rng.integers(8, 17))
            cube = smooth_cube(rng.split(trial), h, w, 4, sigma=1.5)
            op = MosaicOperator(PAT2, h, w)
            y = apply(op, cube)
            _, trace = tv_demosaic(
                y, op, TvConfig(lam=0.05, step=1.0, outer_iters=30, prox_inner_iters=20),
                return_trace=True)
            diffs = np.diff(np.asarray(trace))
            violations.append(float(diffs.max(initial=-np.inf)))
        assert max(violations) <= 1e-8

    def test_step_validation(self):
        with pytest.raises(ValueError):
            TvConfig(step=1.5)
        with pytest.raises(ValueError):
            TvConfig(lam=-0.1)

    def test_objective_helper_matches_trace(self, rng):
        op = MosaicOperator(PAT2, 10, 10)
        cube = smooth_cube(rng, 10, 10, 4, sigma=1.5)
        y = apply(op, cube)
        cfg = TvConfig(lam=0.03, outer_iters=10)
        out, trace = tv_demosaic(y, op, cfg, return_trace=True)
        assert tv_objective(out, y, op, cfg.lam) == pytest.approx(trace[-1], rel=1e-5)
