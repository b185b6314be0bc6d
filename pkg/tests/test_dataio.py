import hashlib
import struct

import numpy as np
import pytest
from PIL import Image

from msdemosaic.core import Mosaic, Rng, SpectralCube
from msdemosaic.dataio import (
    CubeFormatError, SimulationConfig, SynthConfig, cube_from_band_images,
    false_rgb, probe_cube, read_cube, read_manifest, read_mosaic, simulate_mosaic,
    synth_dataset, synth_scene, write_cube, write_manifest, write_mosaic,
)
from msdemosaic.msfa import MosaicOperator, apply, build_sequential_pattern

from .conftest import random_cube

PAT2 = build_sequential_pattern(2)

# frozen digest of a seeded scene written through the cube format; guards both
# the file layout and the determinism of the generator
GOLDEN_SHA256 = "4ab8a0a13960fc20fe5a3ec6e6a016f95fe67b74777d703b2846ea2143235d9a"


class TestCubeFormat:
    def test_round_trip_bitwise(self, rng, tmp_path):
        cube = random_cube(rng, 7, 9, 5)
        path = tmp_path / "cube.msic"
        write_cube(path, cube)
        again = read_cube(path)
        assert again.shape == cube.shape
        assert np.array_equal(again.data, cube.data)

    def test_header_probe_reads_no_payload(self, rng, tmp_path):
        cube = random_cube(rng, 6, 4, 3)
        path = tmp_path / "cube.msic"
        write_cube(path, cube)
        assert probe_cube(path) == (6, 4, 3)
        # probe must also work when the payload is unreadable garbage
        raw = path.read_bytes()
        path.write_bytes(raw[:24] + b"\xff" * 4)
        assert probe_cube(path) == (6, 4, 3)

    def test_truncated_payload(self, rng, tmp_path):
        cube = random_cube(rng, 5, 5, 2)
        path = tmp_path / "cube.msic"
        write_cube(path, cube)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CubeFormatError, match="truncated payload"):
            read_cube(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.msic"
        path.write_bytes(b"XSIC" + b"\0" * 40)
        with pytest.raises(CubeFormatError, match="bad magic"):
            read_cube(path)

    def test_dtype_mismatch(self, rng, tmp_path):
        cube = random_cube(rng, 3, 3, 1)
        path = tmp_path / "cube.msic"
        write_cube(path, cube)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<I", raw, 20, 7)  # unknown dtype tag
        path.write_bytes(bytes(raw))
        with pytest.raises(CubeFormatError, match="dtype mismatch"):
            read_cube(path)

    def test_mosaic_round_trip(self, rng, tmp_path):
        y = Mosaic(4, 6, rng.uniform(0, 1, (4, 6)).astype(np.float32))
        path = tmp_path / "y.msic"
        write_mosaic(path, y)
        again = read_mosaic(path)
        assert np.array_equal(again.data, y.data)

    def test_read_mosaic_rejects_multichannel(self, rng, tmp_path):
        path = tmp_path / "cube.msic"
        write_cube(path, random_cube(rng, 4, 4, 3))
        with pytest.raises(CubeFormatError, match="single-channel"):
            read_mosaic(path)


class TestSimulateMosaic:
    def test_noiseless_equals_apply_exactly(self, rng):
        cube = random_cube(rng, 8, 8, 4)
        op = MosaicOperator(PAT2, 8, 8)
        y = simulate_mosaic(cube, SimulationConfig(PAT2, 0.0))
        assert np.array_equal(y.data, apply(op, cube).data)

    def test_noise_variance(self):
        cube = SpectralCube(1000, 1000, 1, np.zeros((1, 1000, 1000), np.float32))
        pat1 = build_sequential_pattern(1)
        y = simulate_mosaic(cube, SimulationConfig(pat1, 0.1), Rng(7))
        var = float(np.var(y.data.astype(np.float64)))
        assert 0.0097 <= var <= 0.0103

    def test_fixed_seed_reproducible(self, rng):
        cube = random_cube(rng, 16, 16, 4)
        cfg = SimulationConfig(PAT2, 0.05)
        y1 = simulate_mosaic(cube, cfg, Rng(3))
        y2 = simulate_mosaic(cube, cfg, Rng(3))
        assert np.array_equal(y1.data, y2.data)

    def test_noise_requires_rng(self, rng):
        with pytest.raises(ValueError, match="requires an Rng"):
            simulate_mosaic(random_cube(rng, 4, 4, 4), SimulationConfig(PAT2, 0.1))


class TestSynthScene:
    def test_values_in_unit_range_and_finite(self):
        cfg = SynthConfig(count=1, height=32, width=32, channels=8, seed=1)
        scene = synth_scene(cfg, Rng(1))
        assert np.all(np.isfinite(scene.data))
        assert scene.data.min() >= 0.0 and scene.data.max() <= 1.0

    def test_flat_limit(self):
        cfg = SynthConfig(count=1, height=24, width=24, channels=4,
                          smoothness=1e6, n_shapes=0, spectra_smoothness=4, seed=2)
        scene = synth_scene(cfg, Rng(2))
        spatial_span = (scene.data.max(axis=(1, 2)) - scene.data.min(axis=(1, 2))).max()
        assert spatial_span <= 1e-4

    def test_adjacent_band_correlation(self):
        cfg = SynthConfig(count=6, height=48, width=48, channels=16, seed=5)
        corrs = []
        for scene in synth_dataset(cfg):
            flat = scene.data.reshape(16, -1).astype(np.float64)
            for b in range(15):
                corrs.append(np.corrcoef(flat[b], flat[b + 1])[0, 1])
        assert float(np.mean(corrs)) >= 0.9

    def test_determinism(self):
        cfg = SynthConfig(count=2, height=16, width=16, channels=4, seed=9)
        a = synth_dataset(cfg)
        b = synth_dataset(cfg)
        for s1, s2 in zip(a, b):
            assert np.array_equal(s1.data, s2.data)

    def test_golden_file_stability(self, tmp_path):
        cfg = SynthConfig(count=1, height=32, width=32, channels=8,
                          smoothness=6.0, n_shapes=4, spectra_smoothness=3.0, seed=1234)
        scene = synth_scene(cfg, Rng(1234).split(100))
        path = tmp_path / "golden.msic"
        write_cube(path, scene)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        assert digest == GOLDEN_SHA256


class TestFalseRgb:
    def test_identity_mapping_for_three_bands(self, rng):
        cube = random_cube(rng, 6, 6, 3)
        out = false_rgb(cube, bands=(0, 1, 2), scaling="fixed")
        expected = np.round(np.clip(np.stack(
            [cube.data[0], cube.data[1], cube.data[2]], axis=-1), 0, 1) * 255).astype(np.uint8)
        assert np.array_equal(out, expected)

    def test_constant_cube_is_uniform_gray(self, tmp_path):
        cube = SpectralCube(5, 5, 4, np.full((4, 5, 5), 0.5, np.float32))
        path = tmp_path / "gray.png"
        out = false_rgb(cube, scaling="fixed", path=path)
        assert np.unique(out).size == 1
        loaded = np.asarray(Image.open(path))
        assert np.array_equal(loaded, out)

    def test_deterministic_bytes(self, rng, tmp_path):
        cube = random_cube(rng, 8, 8, 6)
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        false_rgb(cube, path=p1)
        false_rgb(cube, path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_invalid_band_index(self, rng):
        with pytest.raises(ValueError, match="out of range"):
            false_rgb(random_cube(rng, 4, 4, 3), bands=(0, 1, 5))

    def test_minmax_scaling_degenerate(self):
        cube = SpectralCube(4, 4, 3, np.full((3, 4, 4), 0.25, np.float32))
        out = false_rgb(cube, bands=(0, 1, 2), scaling="minmax")
        assert np.unique(out).size == 1


class TestBandImport:
    def test_stack_band_images(self, tmp_path):
        arrs = []
        for b in range(3):
            arr = (np.arange(12, dtype=np.uint8).reshape(3, 4) * (b + 1)) % 256
            Image.fromarray(arr, mode="L").save(tmp_path / f"band_{b}.png")
            arrs.append(arr.astype(np.float32) / 255.0)
        cube = cube_from_band_images(sorted(tmp_path.glob("*.png")))
        assert cube.shape == (3, 4, 3)
        for b in range(3):
            np.testing.assert_allclose(cube.data[b], arrs[b], atol=1e-6)


class TestManifest:
    def test_round_trip(self, tmp_path):
        meta = {"seed": 3, "bands": 4}
        items = [{"name": "a", "cube": "a.msic", "split": "train"}]
        path = tmp_path / "manifest.json"
        write_manifest(path, meta, items)
        meta2, items2 = read_manifest(path)
        assert meta2["seed"] == 3 and meta2["bands"] == 4
        assert items2 == items
