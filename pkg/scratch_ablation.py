"""Prototype of the desk-scale ablation to pick lr/arch/epochs (not shipped)."""
import time
import numpy as np
from msdemosaic import core, msfa, geometry, interp, losses, autodiff, dataio, metrics

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
    vals = [metrics.psnr(f(y), gt) for y, gt in test_pairs]
    return float(np.mean(vals))

# gaussian baseline
gauss = float(np.mean([metrics.psnr(interp.gaussian_demosaic(y, pat), gt) for y, gt in test_pairs]))
print(f"gaussian baseline test PSNR: {gauss:.3f} dB", flush=True)

EPOCHS = 40
LR = 1e-3
HIDDEN, DEPTH = 32, 4

def run(kind, alpha=0.1, epochs=EPOCHS, lr=LR):
    params = autodiff.ReconstructorParams.create(16, hidden=HIDDEN, depth=DEPTH,
                                                 rng=core.Rng(123).split(1))
    state = autodiff.OptimState.create(params)
    lcfg = losses.LossConfig(kind=kind, alpha=alpha)
    t0 = time.time()
    for chunk_start in range(0, epochs, 10):
        chunk = min(10, epochs - chunk_start)
        tcfg = losses.TrainConfig(epochs=chunk_start + chunk, learning_rate=lr,
                                  seed=99, start_epoch=chunk_start)
        params, logs = losses.train(train_items, op, lcfg, tcfg, params, state)
        print(f"  {kind} epoch {chunk_start+chunk:3d}: loss {logs[-1].mean_loss:.3e} "
              f"test PSNR {test_psnr(params):.3f} ({time.time()-t0:.0f}s)", flush=True)
    return params

for kind in ("mc", "supervised", "ei_perspective"):
    print(kind, flush=True)
    p = run(kind)
    print(f"{kind}: final test PSNR {test_psnr(p):.3f}", flush=True)

print(f"total {time.time()-t_start:.0f}s")
