"""Definitive check of the acceptance-test ablation config (not shipped)."""
import time
import numpy as np
from msdemosaic import core, msfa, interp, losses, autodiff, dataio, metrics

t_start = time.time()
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

gauss = float(np.mean([metrics.psnr(interp.gaussian_demosaic(y, pat), gt)
                       for y, gt in test_pairs]))
print(f"gaussian baseline: {gauss:.3f} dB", flush=True)

EPOCHS, LR = 120, 1e-3

def run(kind):
    params = autodiff.ReconstructorParams.create(16, hidden=32, depth=4,
                                                 rng=core.Rng(123).split(1))
    state = autodiff.OptimState.create(params)
    lcfg = losses.LossConfig(kind=kind, alpha=0.1)
    t0 = time.time()
    for cs in range(0, EPOCHS, 20):
        chunk = min(20, EPOCHS - cs)
        tcfg = losses.TrainConfig(epochs=cs + chunk, learning_rate=LR, seed=99, start_epoch=cs)
        params, logs = losses.train(train_items, op, lcfg, tcfg, params, state)
        print(f"  {kind} ep {cs+chunk:3d}: loss {logs[-1].mean_loss:.3e} "
              f"PSNR {test_psnr(params):.3f} ({time.time()-t0:.0f}s)", flush=True)
    return test_psnr(params)

res = {}
for kind in ("mc", "supervised", "ei_perspective"):
    res[kind] = run(kind)

print(f"\ngauss {gauss:.3f} | mc {res['mc']:.3f} | ei {res['ei_perspective']:.3f} "
      f"| sup {res['supervised']:.3f}")
print(f"margins: ei-gauss {res['ei_perspective']-gauss:.3f}, "
      f"ei-mc {res['ei_perspective']-res['mc']:.3f}, "
      f"sup-ei {res['supervised']-res['ei_perspective']:.3f}")
print(f"total {time.time()-t_start:.0f}s")
