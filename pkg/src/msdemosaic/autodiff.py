"""Tape-based reverse-mode differentiation for the convolutional reconstructor.

The engine covers exactly the operations the demosaicing losses need: padded
convolutions, a smooth pointwise nonlinearity, residual adds, the mosaic
selection, bilinear warping, cyclic shifts, fixed linear operators with an
explicit adjoint, and (masked) squared-error reductions. Values follow the
input dtype (float32 in training, float64 under the finite-difference
oracle); reductions accumulate in float64.

The reconstructor itself is residual: output = init + net(init), with the
final layer zero-initialized so an untrained model reproduces its
interpolated initialization exactly.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Rng, ShapeError, SpectralCube
from .geometry import WarpPlan
from .msfa import MosaicOperator, adjoint as _mosaic_adjoint

logger = logging.getLogger(__name__)

_CKPT_MAGIC = b"PEFDW1"
_ACTIVATIONS = {"silu": 1}
_ACTIVATION_BY_CODE = {v: k for k, v in _ACTIVATIONS.items()}


class Var:
    """A value in the computation graph; gradients are tracked by identity."""

    __slots__ = ("value",)

    def __init__(self, value: np.ndarray):
        self.value = value


class Tape:
    """Recorded forward pass. One backward visit per node; consumed afterwards."""

    def __init__(self):
        self.nodes: list[tuple[Var, Callable]] = []
        self.param_vars: list[Var] = []
        self._registered: dict[int, list[Var]] = {}
        self.consumed = False

    def record(self, value: np.ndarray, backfn: Callable) -> Var:
        out = Var(value)
        self.nodes.append((out, backfn))
        return out

    def register_params(self, params: "ReconstructorParams") -> list[Var]:
        """Wrap parameter arrays as graph leaves (memoized per params object).

        Repeated reconstructor calls on the same tape share the leaves, so
        gradients from every call accumulate into one slot per array.
        """
        key = id(params)
        if key not in self._registered:
            pvars = [Var(a) for pair in zip(params.weights, params.biases) for a in pair]
            self._registered[key] = pvars
            self.param_vars.extend(pvars)
        return self._registered[key]


def backward(tape: Tape, loss_gradient_seed: float = 1.0) -> list[np.ndarray]:
    """Reverse sweep from the last recorded node; returns per-parameter gradients.

    Gradient order matches Tape.register_params: weight, bias, weight, bias, ...
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")
    if not tape.nodes:
        raise RuntimeError("backward called without a recorded forward pass")
    grads: dict[int, np.ndarray] = {}

    def accumulate(var: Var, contrib: np.ndarray) -> None:
        key = id(var)
        if key in grads:
            grads[key] = grads[key] + contrib
        else:
            grads[key] = contrib

    last_out = tape.nodes[-1][0]
    grads[id(last_out)] = np.asarray(loss_gradient_seed, dtype=np.float64)
    for out, backfn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        backfn(g, accumulate)
    tape.consumed = True
    return [
        grads.get(id(v), np.zeros_like(v.value)).astype(v.value.dtype, copy=False)
        for v in tape.param_vars
    ]


# ---------------------------------------------------------------------------
# operations


def constant(value: np.ndarray) -> Var:
    return Var(np.asarray(value))


def _conv_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded same-size convolution via im2col; returns (output, patches)."""
    cout, cin, k, _ = w.shape
    if x.shape[0] != cin:
        raise ShapeError(f"conv input has {x.shape[0]} channels, weights expect {cin}")
    r = k // 2
    h, wd = x.shape[1], x.shape[2]
    xp = np.pad(x, ((0, 0), (r, r), (r, r)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (cin, h, wd, k, k)
    patches = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(h * wd, cin * k * k)
    out = patches @ w.reshape(cout, cin * k * k).T + b
    return out.T.reshape(cout, h, wd), patches


def conv2d(tape: Tape, x: Var, w: Var, b: Var) -> Var:
    out, patches = _conv_same(x.value, w.value, b.value)
    cout, cin, k, _ = w.value.shape
    h, wd = x.value.shape[1], x.value.shape[2]
    r = k // 2

    def backfn(g, accumulate):
        gm = g.reshape(cout, h * wd).T  # (hw, cout)
        accumulate(b, gm.sum(axis=0))
        accumulate(w, (patches.T @ gm).T.reshape(cout, cin, k, k))
        dpatch = gm @ w.value.reshape(cout, cin * k * k)  # (hw, cin*k*k)
        dp = dpatch.reshape(h, wd, cin, k, k).transpose(2, 3, 4, 0, 1)
        gx_pad = np.zeros((cin, h + 2 * r, wd + 2 * r), dtype=dp.dtype)
        for u in range(k):
            for v in range(k):
                gx_pad[:, u:u + h, v:v + wd] += dp[:, u, v]
        accumulate(x, gx_pad[:, r:r + h, r:r + wd])

    return tape.record(out, backfn)


def silu(tape: Tape, x: Var) -> Var:
    sig = 1.0 / (1.0 + np.exp(-x.value))
    out = x.value * sig

    def backfn(g, accumulate):
        accumulate(x, g * (sig * (1.0 + x.value * (1.0 - sig))))

    return tape.record(out, backfn)


def add(tape: Tape, a: Var, b: Var) -> Var:
    def backfn(g, accumulate):
        accumulate(a, g)
        accumulate(b, g)

    return tape.record(a.value + b.value, backfn)


def scale(tape: Tape, a: Var, s: float) -> Var:
    def backfn(g, accumulate):
        accumulate(a, g * s)

    return tape.record(a.value * s, backfn)


def add_scalars(tape: Tape, a: Var, b: Var) -> Var:
    return add(tape, a, b)


def apply_mosaic(tape: Tape, x: Var, op: MosaicOperator) -> Var:
    value = x.value.reshape(-1)[op._flat_index].reshape(op.height, op.width)

    def backfn(g, accumulate):
        gx = np.zeros(op.channels * op.height * op.width, dtype=g.dtype)
        gx[op._flat_index] = g.ravel()
        accumulate(x, gx.reshape(op.channels, op.height, op.width))

    return tape.record(value, backfn)


def warp_cube(tape: Tape, x: Var, plan: WarpPlan) -> Var:
    def backfn(g, accumulate):
        accumulate(x, plan.scatter_adjoint(np.ascontiguousarray(g)))

    return tape.record(plan.apply_planes(x.value), backfn)


def cyclic_shift(tape: Tape, x: Var, dh: int, dw: int) -> Var:
    def backfn(g, accumulate):
        accumulate(x, np.roll(g, (-dh, -dw), axis=(1, 2)))

    return tape.record(np.roll(x.value, (dh, dw), axis=(1, 2)), backfn)


def apply_linear(
    tape: Tape,
    x: Var,
    forward_fn: Callable[[np.ndarray], np.ndarray],
    adjoint_fn: Callable[[np.ndarray], np.ndarray],
) -> Var:
    """A fixed linear operator with an explicit adjoint for the backward pass."""

    def backfn(g, accumulate):
        accumulate(x, adjoint_fn(g))

    return tape.record(forward_fn(x.value), backfn)


def mse(tape: Tape, a: Var, target) -> Var:
    """Mean squared error over all entries; target may be a Var or a constant array."""
    tvar = target if isinstance(target, Var) else None
    tval = target.value if isinstance(target, Var) else np.asarray(target)
    if a.value.shape != tval.shape:
        raise ShapeError(f"mse shapes differ: {a.value.shape} vs {tval.shape}")
    diff = a.value - tval
    n = diff.size
    value = np.asarray(np.dot(diff.ravel().astype(np.float64), diff.ravel().astype(np.float64)) / n)

    def backfn(g, accumulate):
        common = (2.0 * float(g) / n) * diff
        accumulate(a, common.astype(a.value.dtype, copy=False))
        if tvar is not None:
            accumulate(tvar, (-common).astype(tvar.value.dtype, copy=False))

    return tape.record(value, backfn)


def masked_mse(tape: Tape, a: Var, b: Var, mask: np.ndarray) -> Var:
    """Channel-summed squared error per pixel, averaged over mask-valid pixels.

    The divisor is the valid PIXEL count, not pixels x channels: this keeps the
    weighting of a multichannel residual against a single-channel one
    independent of the band count, matching the sum-form loss it replaces.
    """
    if a.value.shape != b.value.shape:
        raise ShapeError(f"masked_mse shapes differ: {a.value.shape} vs {b.value.shape}")
    m = mask[None, :, :] if mask.ndim == 2 else mask
    n = int(mask.sum()) if mask.ndim == 2 else int(m.sum())
    if n == 0:
        raise ValueError("transform leaves no valid pixels")
    diff = (a.value - b.value) * m
    value = np.asarray(np.dot(diff.ravel().astype(np.float64), diff.ravel().astype(np.float64)) / n)

    def backfn(g, accumulate):
        common = (2.0 * float(g) / n) * diff
        accumulate(a, common.astype(a.value.dtype, copy=False))
        accumulate(b, (-common).astype(b.value.dtype, copy=False))

    return tape.record(value, backfn)


# ---------------------------------------------------------------------------
# reconstructor network


@dataclass(frozen=True)
class LayerSpec:
    kernel: int
    in_ch: int
    out_ch: int

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("conv kernels must be odd")
        if self.in_ch < 1 or self.out_ch < 1:
            raise ValueError("channel counts must be positive")


@dataclass
class ReconstructorParams:
    """Convolution weights (out, in, k, k) and biases, plus the layer spec list."""

    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "silu"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("at least one layer required")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation: {self.activation!r}")
        if len(self.weights) != len(self.layers) or len(self.biases) != len(self.layers):
            raise ValueError("weights/biases must match the layer spec list")
        for i, spec in enumerate(self.layers):
            expected = (spec.out_ch, spec.in_ch, spec.kernel, spec.kernel)
            if self.weights[i].shape != expected:
                raise ShapeError(f"layer {i}: weight shape {self.weights[i].shape} != {expected}")
            if self.biases[i].shape != (spec.out_ch,):
                raise ShapeError(f"layer {i}: bias shape {self.biases[i].shape} != {(spec.out_ch,)}")
            if i > 0 and spec.in_ch != self.layers[i - 1].out_ch:
                raise ValueError(f"layer {i} input channels do not chain")
        if self.layers[0].in_ch != self.layers[-1].out_ch:
            raise ValueError("first input and last output channel counts must match (residual)")

    @property
    def channels(self) -> int:
        return self.layers[0].in_ch

    @classmethod
    def create(
        cls,
        channels: int,
        hidden: int = 48,
        depth: int = 6,
        kernel: int = 3,
        rng: Optional[Rng] = None,
        activation: str = "silu",
    ) -> "ReconstructorParams":
        """Scaled uniform fan-in init for hidden layers, zeros for the last layer."""
        rng = rng or Rng(0)
        chain = [channels] + [hidden] * (depth - 1) + [channels]
        layers, weights, biases = [], [], []
        for i in range(depth):
            spec = LayerSpec(kernel, chain[i], chain[i + 1])
            layers.append(spec)
            if i == depth - 1:
                w = np.zeros((spec.out_ch, spec.in_ch, kernel, kernel), np.float32)
            else:
                limit = float(np.sqrt(1.0 / (spec.in_ch * kernel * kernel)))
                w = rng.uniform(-limit, limit, (spec.out_ch, spec.in_ch, kernel, kernel)).astype(np.float32)
            weights.append(w)
            biases.append(np.zeros(spec.out_ch, np.float32))
        return cls(layers, weights, biases, activation)

    def copy(self) -> "ReconstructorParams":
        return ReconstructorParams(
            list(self.layers), [w.copy() for w in self.weights],
            [b.copy() for b in self.biases], self.activation,
        )

    def astype(self, dtype) -> "ReconstructorParams":
        return ReconstructorParams(
            list(self.layers), [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases], self.activation,
        )

    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def _silu_plain(x: np.ndarray) -> np.ndarray:
    # same expression as the silu op so both paths agree bitwise
    sig = 1.0 / (1.0 + np.exp(-x))
    return x * sig


def forward(params: ReconstructorParams, init: SpectralCube) -> SpectralCube:
    """Inference pass: init + net(init)."""
    if init.channels != params.channels:
        raise ShapeError(f"cube has {init.channels} channels, model expects {params.channels}")
    h = init.data
    for i in range(len(params.layers)):
        h, _ = _conv_same(h, params.weights[i], params.biases[i])
        if i < len(params.layers) - 1:
            h = _silu_plain(h)
    return SpectralCube(init.height, init.width, init.channels, (init.data + h).astype(np.float32))


def forward_graph(tape: Tape, params: ReconstructorParams, x: Var) -> Var:
    """Training pass on the tape; parameter leaves are shared across calls."""
    pvars = tape.register_params(params)
    h = x
    for i in range(len(params.layers)):
        h = conv2d(tape, h, pvars[2 * i], pvars[2 * i + 1])
        if i < len(params.layers) - 1:
            h = silu(tape, h)
    return add(tape, x, h)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def create(cls, params: ReconstructorParams) -> "OptimState":
        arrays = [a for pair in zip(params.weights, params.biases) for a in pair]
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def optimizer_step(
    params: ReconstructorParams,
    grads: Sequence[np.ndarray],
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ReconstructorParams, OptimState]:
    """Bias-corrected adaptive-moment update, applied in place.

    Non-finite gradients reject the whole step (parameters, moments and the
    step counter stay untouched) and log a warning.
    """
    arrays = [a for pair in zip(params.weights, params.biases) for a in pair]
    if len(grads) != len(arrays):
        raise ShapeError(f"got {len(grads)} gradients for {len(arrays)} parameter arrays")
    if any(not np.all(np.isfinite(g)) for g in grads):
        logger.warning("optimizer_step: non-finite gradient, step rejected")
        return params, state
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        g = g.astype(a.dtype, copy=False)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        a -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoint I/O
#
# Layout (little-endian):
#   magic "PEFDW1" (6 bytes)
#   u32 layer count, u32 activation code (1 = silu)
#   per layer: u32 kernel, u32 in_ch, u32 out_ch
#   per layer: weights float32 (out, in, k, k) C-order, then bias float32 (out,)


def save_checkpoint(path, params: ReconstructorParams) -> None:
    parts = [_CKPT_MAGIC, struct.pack("<II", len(params.layers), _ACTIVATIONS[params.activation])]
    for spec in params.layers:
        parts.append(struct.pack("<III", spec.kernel, spec.in_ch, spec.out_ch))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> ReconstructorParams:
    raw = Path(path).read_bytes()
    if len(raw) < 6 + 8 or raw[:6] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint (bad magic)")
    n_layers, act_code = struct.unpack_from("<II", raw, 6)
    if act_code not in _ACTIVATION_BY_CODE:
        raise ValueError(f"{path}: unknown activation code {act_code}")
    offset = 6 + 8
    specs = []
    for _ in range(n_layers):
        k, cin, cout = struct.unpack_from("<III", raw, offset)
        offset += 12
        specs.append(LayerSpec(k, cin, cout))
    weights, biases = [], []
    for spec in specs:
        for shape in ((spec.out_ch, spec.in_ch, spec.kernel, spec.kernel), (spec.out_ch,)):
            count = int(np.prod(shape))
            end = offset + 4 * count
            if end > len(raw):
                raise ValueError(f"{path}: truncated checkpoint payload")
            arr = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy()
            offset += 4 * count
            (weights if len(shape) == 4 else biases).append(arr)
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after checkpoint payload")
    return ReconstructorParams(specs, weights, biases, _ACTIVATION_BY_CODE[act_code])


def save_optim_state(path, state: OptimState, epoch: int) -> None:
    arrays = {f"m_{i}": a for i, a in enumerate(state.m)}
    arrays.update({f"v_{i}": a for i, a in enumerate(state.v)})
    np.savez(path, step=state.step, epoch=epoch, count=len(state.m), **arrays)


def load_optim_state(path) -> tuple[OptimState, int]:
    with np.load(path) as data:
        count = int(data["count"])
        state = OptimState(
            [data[f"m_{i}"] for i in range(count)],
            [data[f"v_{i}"] for i in range(count)],
            int(data["step"]),
        )
        return state, int(data["epoch"])
