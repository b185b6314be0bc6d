"""Command-line entry point tying synthesis, simulation, demosaicing, training,
and evaluation into reproducible experiments.

Subcommands: synth | mosaic | demosaic | train | eval | export-rgb | import-bands.
Angles are given in degrees on the command line and converted to radians
internally. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import os

# PEFD_THREADS caps worker pools; BLAS reads these before numpy first loads,
# which for the console script is during the imports just below.
_threads = os.environ.get("PEFD_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import autodiff, dataio, geometry, interp, losses, metrics, msfa, report, variational
from .core import Mosaic, Rng, SpectralCube

logger = logging.getLogger(__name__)

_LOSS_BY_FLAG = {"mc": "mc", "ei": "ei_perspective", "ei-shift": "ei_shift", "sup": "supervised"}


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def _load_pattern(args, manifest_meta=None, manifest_dir=None) -> msfa.MsfaPattern:
    if getattr(args, "pattern", None):
        return msfa.load_pattern(args.pattern)
    if manifest_meta and manifest_meta.get("pattern") and manifest_dir is not None:
        return msfa.load_pattern(_resolve(manifest_dir, manifest_meta["pattern"]))
    return msfa.build_sequential_pattern(args.period)


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = dataio.SynthConfig(
        count=args.count, height=args.height, width=args.width, channels=args.bands,
        smoothness=args.smoothness, n_shapes=args.shapes,
        spectra_smoothness=args.spectra_smoothness, seed=args.seed,
    )
    n_train = int(round(args.count * args.train_frac))
    items = []
    for i, cube in enumerate(dataio.synth_dataset(cfg)):
        name = f"scene_{i:03d}"
        dataio.write_cube(out / f"{name}.msic", cube)
        items.append({
            "name": name,
            "cube": f"{name}.msic",
            "split": "train" if i < n_train else "test",
        })
    meta = {
        "seed": args.seed, "height": args.height, "width": args.width,
        "bands": args.bands, "smoothness": args.smoothness, "n_shapes": args.shapes,
        "spectra_smoothness": args.spectra_smoothness,
    }
    dataio.write_manifest(out / "manifest.json", meta, items)
    print(f"wrote {len(items)} cubes + manifest to {out}")
    return 0


def cmd_mosaic(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pattern = _load_pattern(args)
    msfa.save_pattern(out / "pattern.txt", pattern)
    sim = dataio.SimulationConfig(pattern, args.noise_sigma)
    rng = Rng(args.seed)

    if args.manifest:
        mdir = Path(args.manifest).parent
        meta, items = dataio.read_manifest(args.manifest)
        for i, item in enumerate(items):
            cube = dataio.read_cube(_resolve(mdir, item["cube"]))
            y = dataio.simulate_mosaic(cube, sim, rng.split(i))
            mosaic_name = f"{item['name']}.mosaic.msic"
            dataio.write_mosaic(out / mosaic_name, y)
            item["mosaic"] = mosaic_name
            if not (out / item["cube"]).exists() and _resolve(mdir, item["cube"]).exists():
                item["cube"] = str(_resolve(mdir, item["cube"]).resolve())
        meta.update({"pattern": "pattern.txt", "noise_sigma": args.noise_sigma,
                     "mosaic_seed": args.seed})
        dataio.write_manifest(out / "manifest.json", meta, items)
        print(f"wrote {len(items)} mosaics + manifest to {out}")
    else:
        if not args.inputs:
            raise ValueError("either --manifest or input cube files are required")
        for i, path in enumerate(args.inputs):
            cube = dataio.read_cube(path)
            y = dataio.simulate_mosaic(cube, sim, rng.split(i))
            dataio.write_mosaic(out / f"{Path(path).stem}.mosaic.msic", y)
        print(f"wrote {len(args.inputs)} mosaics to {out}")
    return 0


def _recon_name(path: Path) -> str:
    stem = path.stem
    return stem[:-7] if stem.endswith(".mosaic") else stem


def cmd_demosaic(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pattern = _load_pattern(args)

    model = None
    if args.method == "model":
        if not args.checkpoint:
            raise ValueError("--method model requires --checkpoint")
        model = autodiff.load_checkpoint(args.checkpoint)
        if model.channels != pattern.channels:
            raise ValueError(
                f"checkpoint expects {model.channels} bands, pattern has {pattern.channels}"
            )

    for path in args.inputs:
        y = dataio.read_mosaic(path)
        if args.method in ("bilinear", "wbilinear", "gaussian"):
            method = {"wbilinear": "weighted_bilinear"}.get(args.method, args.method)
            cfg = interp.InterpConfig(method=method, kernel_size=args.kernel_size,
                                      gaussian_sigma=args.sigma)
            cube = interp.demosaic(y, pattern, cfg)
        elif args.method == "tv":
            op = msfa.MosaicOperator(pattern, y.height, y.width)
            cfg = variational.TvConfig(lam=args.lam, step=args.tv_step,
                                       outer_iters=args.iters, tol=args.tol)
            cube = variational.tv_demosaic(y, op, cfg)
        else:  # model
            f = losses.Reconstructor(model, pattern)
            cube = f(y)
        dataio.write_cube(out / f"{_recon_name(Path(path))}.msic", cube)
    print(f"wrote {len(args.inputs)} reconstructions to {out}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mdir = Path(args.manifest).parent
    meta, items = dataio.read_manifest(args.manifest)
    pattern = _load_pattern(args, meta, mdir)

    kind = _LOSS_BY_FLAG[args.loss]
    train_items = []
    sim = dataio.SimulationConfig(pattern, 0.0)
    for item in items:
        if item.get("split", "train") != "train":
            continue
        gt = dataio.read_cube(_resolve(mdir, item["cube"])) if item.get("cube") else None
        if item.get("mosaic"):
            y = dataio.read_mosaic(_resolve(mdir, item["mosaic"]))
        elif gt is not None:
            y = dataio.simulate_mosaic(gt, sim)
        else:
            raise ValueError(f"item {item.get('name')} has neither a mosaic nor a cube")
        train_items.append(losses.TrainItem(item.get("name", "?"), y,
                                            gt if kind == "supervised" else gt))
    if not train_items:
        raise ValueError("manifest has no training items")

    if args.resume:
        params = autodiff.load_checkpoint(args.resume)
        state, start_epoch = autodiff.load_optim_state(str(args.resume) + ".opt.npz")
    else:
        params = autodiff.ReconstructorParams.create(
            pattern.channels, hidden=args.hidden, depth=args.depth, kernel=args.kernel,
            rng=Rng(args.seed).split(7),
        )
        state, start_epoch = autodiff.OptimState.create(params), 0
    if start_epoch >= args.epochs:
        raise ValueError(f"resume epoch {start_epoch} >= requested epochs {args.epochs}")

    h, w = train_items[0].mosaic.height, train_items[0].mosaic.width
    sampler = geometry.TransformSamplerConfig(
        math.radians(args.pan_range), math.radians(args.tilt_range),
        math.radians(args.roll_range),
        geometry.Intrinsics(args.focal if args.focal else float(w),
                            ((w - 1) / 2.0, (h - 1) / 2.0)),
    )
    loss_cfg = losses.LossConfig(kind=kind, alpha=args.alpha, sampler=sampler,
                                 shift_max=args.shift_max)
    train_cfg = losses.TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                                   seed=args.seed, start_epoch=start_epoch)
    op = msfa.MosaicOperator(pattern, h, w)
    params, logs = losses.train(train_items, op, loss_cfg, train_cfg, params, state)

    ckpt = out / "model.pefd"
    autodiff.save_checkpoint(ckpt, params)
    autodiff.save_optim_state(str(ckpt) + ".opt.npz", state, args.epochs)
    log_path = out / "loss_log.csv"
    if args.resume and log_path.exists():
        prior = [line for line in log_path.read_text().splitlines()[1:] if line]
        kept = [line for line in prior if int(line.split(",")[0]) < start_epoch]
        all_rows = "\n".join(["epoch,mean_loss,wall_seconds"] + kept) + "\n"
        log_path.write_text(all_rows)
        with open(log_path, "a") as fh:
            for e in logs:
                fh.write(f"{e.epoch},{e.mean_loss:.10g},{e.wall_seconds:.4f}\n")
    else:
        losses.write_loss_log(log_path, logs)
    try:
        report.save_loss_curve(logs, out / "loss_curve.png", title=f"{args.loss} loss")
    except Exception as exc:  # figures are best-effort companions to the CSV
        logger.warning("could not render loss curve: %s", exc)
    print(f"trained {args.epochs - start_epoch} epoch(s); checkpoint at {ckpt}")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    mdir = Path(args.manifest).parent
    meta, items = dataio.read_manifest(args.manifest)
    wanted = [it for it in items if args.split == "all" or it.get("split") == args.split]
    if not wanted:
        raise ValueError(f"no items with split={args.split!r} in manifest")

    methods = []
    for spec_arg in args.recon:
        if "=" not in spec_arg:
            raise ValueError(f"--recon expects NAME=DIR, got {spec_arg!r}")
        name, d = spec_arg.split("=", 1)
        methods.append((name, Path(d)))

    rows = []
    errors = []
    panels: dict[str, list[tuple[str, SpectralCube]]] = {}
    for name, recon_dir in methods:
        reports = []
        for item in wanted:
            gt = dataio.read_cube(_resolve(mdir, item["cube"]))
            recon_path = recon_dir / f"{item['name']}.msic"
            if not recon_path.exists():
                errors.append(f"{name}: missing {recon_path}")
                continue
            try:
                recon = dataio.read_cube(recon_path)
                reports.append(metrics.evaluate(recon, gt, peak=args.peak, ratio=args.ratio))
            except (ValueError, OSError) as exc:
                errors.append(f"{name}: {recon_path}: {exc}")
                continue
            panels.setdefault(item["name"], []).append((name, recon))
        if reports:
            rows.append((name, metrics.MetricReport(
                psnr=float(np.mean([r.psnr for r in reports])),
                ssim=float(np.mean([r.ssim for r in reports])),
                sam=float(np.mean([r.sam for r in reports])),
                ergas=float(np.mean([r.ergas for r in reports])),
            )))

    header = f"{'method':<16}{'PSNR':>10}{'SSIM':>10}{'SAM':>10}{'ERGAS':>10}"
    print(header)
    print("-" * len(header))
    for name, rep in rows:
        print(f"{name:<16}{rep.psnr:>10.3f}{rep.ssim:>10.4f}{rep.sam:>10.4f}{rep.ergas:>10.3f}")

    if out:
        csv_path = out / "metrics.csv"
        with open(csv_path, "w") as fh:
            fh.write("method,psnr_db,ssim,sam_rad,ergas\n")
            for name, rep in rows:
                fh.write(f"{name},{rep.psnr:.6g},{rep.ssim:.6g},{rep.sam:.6g},{rep.ergas:.6g}\n")
        if rows:
            report.save_metric_bars(rows, out / "metrics.png")
        if args.figures:
            for item in wanted[: args.max_panels]:
                entries = panels.get(item["name"])
                if not entries:
                    continue
                gt = dataio.read_cube(_resolve(mdir, item["cube"]))
                report.save_reconstruction_panel(
                    entries, out / f"panel_{item['name']}.png", gt=gt
                )

    if errors:
        print("errors:", file=sys.stderr)
        for e in errors:
            print(f"  {e}", file=sys.stderr)
        return 1
    return 0


def cmd_export_rgb(args) -> int:
    cube = dataio.read_cube(args.input)
    bands = None
    if args.bands:
        bands = tuple(int(b) for b in args.bands.split(","))
    dataio.false_rgb(cube, bands=bands, average=args.average, scaling=args.scaling,
                     path=args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_import_bands(args) -> int:
    paths = sorted(Path(args.input_dir).glob(f"*.{args.ext}"))
    if not paths:
        raise ValueError(f"no *.{args.ext} files in {args.input_dir}")
    cube = dataio.cube_from_band_images(paths)
    dataio.write_cube(args.out, cube)
    print(f"stacked {len(paths)} bands into {args.out}")
    return 0


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msdemosaic",
                                description="Multispectral demosaicing experiments")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic cube dataset + manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=_positive_int, default=25)
    sp.add_argument("--height", type=_positive_int, default=64)
    sp.add_argument("--width", type=_positive_int, default=64)
    sp.add_argument("--bands", type=_positive_int, default=16)
    sp.add_argument("--shapes", type=int, default=6)
    sp.add_argument("--smoothness", type=float, default=8.0)
    sp.add_argument("--spectra-smoothness", type=float, default=4.0)
    sp.add_argument("--train-frac", type=float, default=0.8)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_synth)

    mp = sub.add_parser("mosaic", help="simulate mosaics for cubes or a manifest")
    mp.add_argument("inputs", nargs="*", help="cube files (alternative to --manifest)")
    mp.add_argument("--manifest")
    mp.add_argument("--out", required=True)
    mp.add_argument("--pattern", help="pattern config file")
    mp.add_argument("--period", type=_positive_int, default=4,
                    help="sequential pattern period when --pattern is absent")
    mp.add_argument("--noise-sigma", type=float, default=0.0)
    mp.add_argument("--seed", type=int, default=0)
    mp.set_defaults(fn=cmd_mosaic)

    dp = sub.add_parser("demosaic", help="reconstruct cubes from mosaic files")
    dp.add_argument("inputs", nargs="+", help="mosaic cube files")
    dp.add_argument("--method", required=True,
                    choices=["bilinear", "wbilinear", "gaussian", "tv", "model"])
    dp.add_argument("--out", required=True)
    dp.add_argument("--pattern")
    dp.add_argument("--period", type=_positive_int, default=4)
    dp.add_argument("--checkpoint")
    dp.add_argument("--kernel-size", type=int, default=None)
    dp.add_argument("--sigma", type=float, default=None)
    dp.add_argument("--lambda", dest="lam", type=float, default=0.05)
    dp.add_argument("--iters", type=_positive_int, default=300)
    dp.add_argument("--tv-step", type=float, default=1.0)
    dp.add_argument("--tol", type=float, default=1e-6)
    dp.set_defaults(fn=cmd_demosaic)

    tp = sub.add_parser("train", help="train the reconstructor on manifest mosaics")
    tp.add_argument("--manifest", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--loss", choices=sorted(_LOSS_BY_FLAG), default="ei")
    tp.add_argument("--alpha", type=float, default=0.1)
    tp.add_argument("--epochs", type=_positive_int, default=200)
    tp.add_argument("--lr", type=float, default=1e-5)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--pattern")
    tp.add_argument("--period", type=_positive_int, default=4)
    tp.add_argument("--pan-range", type=float, default=5.0, help="degrees")
    tp.add_argument("--tilt-range", type=float, default=5.0, help="degrees")
    tp.add_argument("--roll-range", type=float, default=180.0, help="degrees")
    tp.add_argument("--focal", type=float, default=None, help="pixels")
    tp.add_argument("--shift-max", type=int, default=3)
    tp.add_argument("--hidden", type=_positive_int, default=48)
    tp.add_argument("--depth", type=_positive_int, default=6)
    tp.add_argument("--kernel", type=_positive_int, default=3)
    tp.add_argument("--resume", help="checkpoint to continue from")
    tp.set_defaults(fn=cmd_train)

    ep = sub.add_parser("eval", help="score reconstructions against manifest ground truth")
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--recon", action="append", required=True, metavar="NAME=DIR")
    ep.add_argument("--split", choices=["train", "test", "all"], default="test")
    ep.add_argument("--out", help="directory for metrics.csv and figures")
    ep.add_argument("--ratio", type=float, default=0.25, help="ERGAS resolution ratio")
    ep.add_argument("--peak", type=float, default=1.0)
    ep.add_argument("--figures", action="store_true",
                    help="also render per-scene comparison panels")
    ep.add_argument("--max-panels", type=int, default=3)
    ep.set_defaults(fn=cmd_eval)

    xp = sub.add_parser("export-rgb", help="false-RGB PNG from a cube file")
    xp.add_argument("--input", required=True)
    xp.add_argument("--out", required=True)
    xp.add_argument("--bands", help="comma-separated triplet, e.g. 15,8,0")
    xp.add_argument("--average", action="store_true", help="average bands in thirds")
    xp.add_argument("--scaling", choices=["fixed", "minmax"], default="fixed")
    xp.set_defaults(fn=cmd_export_rgb)

    ip = sub.add_parser("import-bands", help="stack per-band images into a cube file")
    ip.add_argument("--input-dir", required=True)
    ip.add_argument("--out", required=True)
    ip.add_argument("--ext", default="png")
    ip.set_defaults(fn=cmd_import_bands)

    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
