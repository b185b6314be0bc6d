"""Variant sweep: equivariance-term weight and sampler ranges (not shipped)."""
import math
import time
import numpy as np
from msdemosaic import core, msfa, geometry, interp, losses, autodiff, dataio, metrics

pat = msfa.build_sequential_pattern(4)
cfg = dataio.SynthConfig(count=25, height=64, width=64, channels=16,
                         smoothness=8, n_shapes=6, spectra_smoothness=4, seed=11)
scenes = dataio.synth_dataset(cfg)
train_scenes, test_scenes = scenes[:20], scenes[20:]
op = msfa.MosaicOperator(pat, 64, 64)
sim = dataio.SimulationConfig(pat, 0.0)
train_items = [losses.TrainItem(f"t{i}", dataio.simulate_mosaic(s, sim), s)
               for i, s in enumerate(train_scenes)]
test_pairs = [(dataio.simulate_mosaic(s, sim), s) for s in test_scenes]

def test_psnr(params):
    f = losses.Reconstructor(params, pat)
    return float(np.mean([metrics.psnr(f(y), gt) for y, gt in test_pairs]))

def run(name, kind, alpha, sampler=None, epochs=40, lr=1e-3, hidden=32, depth=4):
    params = autodiff.ReconstructorParams.create(16, hidden=hidden, depth=depth,
                                                 rng=core.Rng(123).split(1))
    state = autodiff.OptimState.create(params)
    lcfg = losses.LossConfig(kind=kind, alpha=alpha, sampler=sampler)
    t0 = time.time()
    for cs in range(0, epochs, 20):
        chunk = min(20, epochs - cs)
        tcfg = losses.TrainConfig(epochs=cs + chunk, learning_rate=lr, seed=99, start_epoch=cs)
        params, logs = losses.train(train_items, op, lcfg, tcfg, params, state)
        print(f"  {name} ep {cs+chunk:3d}: loss {logs[-1].mean_loss:.3e} "
              f"PSNR {test_psnr(params):.3f} ({time.time()-t0:.0f}s)", flush=True)
    return params

roll30 = geometry.TransformSamplerConfig(
    math.radians(5), math.radians(5), math.radians(30), geometry.default_intrinsics(64, 64))

run("ei a=1.6 roll180", "ei_perspective", 1.6)
run("ei a=1.6 roll30", "ei_perspective", 1.6, sampler=roll30)
run("ei a=4.8 roll180", "ei_perspective", 4.8)
