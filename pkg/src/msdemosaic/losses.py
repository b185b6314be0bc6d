"""Self-supervised and supervised demosaicing losses, plus the training loop.

The measurement-consistency (MC) loss alone is blind to the operator's
null-space: adding any null-space component to a reconstruction leaves it
bitwise unchanged. The equivariance losses expose null-space information by
demanding that reconstruction commutes with a transform group the operator is
NOT equivariant to: perspective warps (rich) or sub-period cyclic shifts
(ablation). Losses are mean-reduced so the equivariance weight is comparable
across image sizes.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import autodiff, geometry, interp, msfa
from .autodiff import ReconstructorParams, OptimState, Tape, Var, backward
from .core import Mosaic, Rng, ShapeError, SpectralCube
from .geometry import Homography, TransformSamplerConfig
from .msfa import MosaicOperator

logger = logging.getLogger(__name__)

LOSS_KINDS = ("mc", "ei_perspective", "ei_shift", "supervised")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "ei_perspective"
    alpha: float = 0.1
    sampler: Optional[TransformSamplerConfig] = None  # defaults per image size
    shift_max: int = 3

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind: {self.kind!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.shift_max < 1:
            raise ValueError("shift_max must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-5
    seed: int = 0
    start_epoch: int = 0  # resume point; per-step RNG streams are keyed by epoch

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0 <= self.start_epoch <= self.epochs:
            raise ValueError("start_epoch must lie in [0, epochs]")


@dataclass
class TrainItem:
    name: str
    mosaic: Mosaic
    gt: Optional[SpectralCube] = None


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    mean_loss: float
    wall_seconds: float


def default_sampler(height: int, width: int) -> TransformSamplerConfig:
    """Pan/tilt +-5 degrees, roll +-180 degrees, focal = image width."""
    return TransformSamplerConfig(
        math.radians(5.0), math.radians(5.0), math.pi,
        geometry.default_intrinsics(height, width),
    )


class Reconstructor:
    """Mosaic -> cube closure: Gaussian-interpolated init, then the residual net.

    Calling with a tape records the full graph, including the interpolation,
    so gradients reach the parameters through both the network and its input.
    """

    def __init__(self, params: ReconstructorParams, pattern: msfa.MsfaPattern,
                 interp_cfg: Optional[interp.InterpConfig] = None):
        if pattern.channels != params.channels:
            raise ShapeError(
                f"pattern has {pattern.channels} bands, model expects {params.channels}"
            )
        self.params = params
        self.pattern = pattern
        cfg = interp_cfg or interp.InterpConfig(method="gaussian")
        size = cfg.kernel_size if cfg.kernel_size is not None else 9
        sigma = cfg.gaussian_sigma if cfg.gaussian_sigma is not None else pattern.period / 2.0
        self.kernel = interp.gaussian_kernel(size, sigma)
        self._ops: dict[tuple[int, int], tuple[Callable, Callable]] = {}

    def _operator(self, height: int, width: int) -> tuple[Callable, Callable]:
        key = (height, width)
        if key not in self._ops:
            self._ops[key] = interp.normalized_convolution_operator(
                self.pattern, self.kernel, height, width
            )
        return self._ops[key]

    def initial_cube(self, y: Mosaic) -> SpectralCube:
        fwd, _ = self._operator(y.height, y.width)
        return SpectralCube(y.height, y.width, self.pattern.channels, fwd(y.data))

    def __call__(self, y: Union[Mosaic, Var], tape: Optional[Tape] = None):
        if tape is None:
            if not isinstance(y, Mosaic):
                raise TypeError("inference path expects a Mosaic")
            return autodiff.forward(self.params, self.initial_cube(y))
        if isinstance(y, Mosaic):
            h, w = y.height, y.width
            yvar = autodiff.constant(y.data)
        else:
            yvar = y
            h, w = y.value.shape
        fwd, adj = self._operator(h, w)
        init = autodiff.apply_linear(tape, yvar, fwd, adj)
        return autodiff.forward_graph(tape, self.params, init)


def mc_loss(xhat: SpectralCube, y: Mosaic, op: MosaicOperator) -> float:
    """Mean squared measurement residual, ||A xhat - y||^2 / (H W)."""
    r = msfa.apply(op, xhat).data - y.data
    flat = r.ravel().astype(np.float64)
    return float(np.dot(flat, flat) / r.size)


def supervised_loss(xhat: SpectralCube, x_gt: SpectralCube) -> float:
    """Mean squared error over all H W C entries."""
    if xhat.shape != x_gt.shape:
        raise ShapeError(f"shapes differ: {xhat.shape} vs {x_gt.shape}")
    r = (xhat.data - x_gt.data).ravel().astype(np.float64)
    return float(np.dot(r, r) / r.size)


def _mc_graph(tape: Tape, f, y: Mosaic, op: MosaicOperator) -> Var:
    x1 = f(y, tape)
    return autodiff.mse(tape, autodiff.apply_mosaic(tape, x1, op), y.data)


def ei_loss(
    f, y: Mosaic, op: MosaicOperator, g: Homography, alpha: float = 0.1
) -> tuple[float, Tape]:
    """MC(f(y), y) + alpha * masked equivariance residual under the warp g.

    x1 = f(y); x2 = warp(x1) with validity mask m; y2 = A x2; x3 = f(y2);
    the equivariance term is the mean of (x2 - x3)^2 over m. Gradients flow
    through both reconstructor evaluations and through the warp of x1.
    """
    tape = Tape()
    x1 = f(y, tape)
    plan = geometry.build_warp_plan(y.height, y.width, g)
    if not plan.mask.any():
        raise ValueError("transform leaves no valid pixels")
    x2 = autodiff.warp_cube(tape, x1, plan)
    y2 = autodiff.apply_mosaic(tape, x2, op)
    x3 = f(y2, tape)
    eq = autodiff.masked_mse(tape, x2, x3, plan.mask)
    mc = autodiff.mse(tape, autodiff.apply_mosaic(tape, x1, op), y.data)
    total = autodiff.add(tape, mc, autodiff.scale(tape, eq, alpha))
    return float(total.value), tape


def shift_ei_loss(
    f, y: Mosaic, op: MosaicOperator, shift: tuple[int, int], alpha: float = 0.1
) -> tuple[float, Tape]:
    """Same structure as ei_loss with a cyclic shift transform (no mask needed)."""
    dh, dw = shift
    c = op.pattern.period
    if dh % c == 0 and dw % c == 0:
        logger.warning(
            "shift (%d, %d) is a multiple of the pattern period %d on both axes; "
            "mosaicing is equivariant to it, so the term is uninformative", dh, dw, c,
        )
    tape = Tape()
    x1 = f(y, tape)
    x2 = autodiff.cyclic_shift(tape, x1, dh, dw)
    y2 = autodiff.apply_mosaic(tape, x2, op)
    x3 = f(y2, tape)
    eq = autodiff.masked_mse(tape, x2, x3, np.ones((y.height, y.width), dtype=bool))
    mc = autodiff.mse(tape, autodiff.apply_mosaic(tape, x1, op), y.data)
    total = autodiff.add(tape, mc, autodiff.scale(tape, eq, alpha))
    return float(total.value), tape


def _supervised_graph(tape: Tape, f, y: Mosaic, gt: SpectralCube) -> Var:
    x1 = f(y, tape)
    return autodiff.mse(tape, x1, gt.data)


def _sample_shift(rng: Rng, shift_max: int, period: int) -> tuple[int, int]:
    for _ in range(128):
        dh = int(rng.integers(-shift_max, shift_max + 1))
        dw = int(rng.integers(-shift_max, shift_max + 1))
        if dh % period != 0 or dw % period != 0:
            return dh, dw
    raise RuntimeError("could not sample an informative shift; increase shift_max")


def train(
    dataset: Sequence[TrainItem],
    op: MosaicOperator,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    params: ReconstructorParams,
    optim_state: Optional[OptimState] = None,
) -> tuple[ReconstructorParams, list[EpochLog]]:
    """Iterate epochs x images: interpolate, sample a transform, step the optimizer.

    One transform is sampled per training step from a counter-based stream
    keyed by (seed, epoch, item index), so runs are reproducible and training
    can resume at an epoch boundary with identical results.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    for item in dataset:
        if (item.mosaic.height, item.mosaic.width) != (op.height, op.width):
            raise ShapeError(f"item {item.name}: mosaic shape does not match operator")
        if loss_cfg.kind == "supervised" and item.gt is None:
            raise ValueError(f"item {item.name}: supervised training requires ground truth")

    f = Reconstructor(params, op.pattern)
    state = optim_state if optim_state is not None else OptimState.create(params)
    sampler = loss_cfg.sampler or default_sampler(op.height, op.width)
    root = Rng(train_cfg.seed)
    logs: list[EpochLog] = []

    for epoch in range(train_cfg.start_epoch, train_cfg.epochs):
        t0 = time.perf_counter()
        losses = []
        for i, item in enumerate(dataset):
            step_rng = root.split(epoch, i)
            if loss_cfg.kind == "mc":
                tape = Tape()
                value = float(_mc_graph(tape, f, item.mosaic, op).value)
            elif loss_cfg.kind == "supervised":
                tape = Tape()
                value = float(_supervised_graph(tape, f, item.mosaic, item.gt).value)
            elif loss_cfg.kind == "ei_perspective":
                g = geometry.sample_transform(step_rng, sampler)
                value, tape = ei_loss(f, item.mosaic, op, g, loss_cfg.alpha)
            else:  # ei_shift
                shift = _sample_shift(step_rng, loss_cfg.shift_max, op.pattern.period)
                value, tape = shift_ei_loss(f, item.mosaic, op, shift, loss_cfg.alpha)
            if not math.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch}, item {item.name!r}; aborting"
                )
            grads = backward(tape)
            autodiff.optimizer_step(params, grads, state, train_cfg.learning_rate)
            losses.append(value)
        logs.append(EpochLog(epoch, float(np.mean(losses)), time.perf_counter() - t0))
    return params, logs


def write_loss_log(path, logs: Sequence[EpochLog]) -> None:
    lines = ["epoch,mean_loss,wall_seconds"]
    lines += [f"{e.epoch},{e.mean_loss:.10g},{e.wall_seconds:.4f}" for e in logs]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
