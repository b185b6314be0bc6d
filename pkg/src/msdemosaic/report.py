"""Matplotlib rendering for evaluation tables, loss curves, and comparisons.

Figures are written to files next to the CSV outputs; no interactive backend
is ever required.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import SpectralCube
from .dataio import false_rgb
from .losses import EpochLog
from .metrics import MetricReport

_METRIC_INFO = (
    ("psnr", "PSNR (dB)", True),
    ("ssim", "SSIM", True),
    ("sam", "SAM (rad)", False),
    ("ergas", "ERGAS", False),
)


def save_metric_bars(rows: Sequence[tuple[str, MetricReport]], path) -> None:
    """One bar panel per metric; infinite PSNR bars are annotated instead of drawn."""
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.2))
    names = [name for name, _ in rows]
    for ax, (attr, label, higher_better) in zip(axes, _METRIC_INFO):
        values = [getattr(rep, attr) for _, rep in rows]
        finite = [v if math.isfinite(v) else np.nan for v in values]
        bars = ax.bar(range(len(names)), finite, color="#4878cf")
        for i, v in enumerate(values):
            if not math.isfinite(v):
                ax.text(i, 0, "inf", ha="center", va="bottom", fontsize=9)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        arrow = "↑" if higher_better else "↓"
        ax.set_title(f"{label} {arrow}", fontsize=10)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)


def save_loss_curve(logs: Sequence[EpochLog], path, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([e.epoch for e in logs], [e.mean_loss for e in logs], lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)


def save_reconstruction_panel(
    named_cubes: Sequence[tuple[str, SpectralCube]],
    path,
    gt: Optional[SpectralCube] = None,
    bands: Optional[Sequence[int]] = None,
) -> None:
    """Side-by-side false-RGB views of reconstructions (plus GT when given)."""
    entries = list(named_cubes)
    if gt is not None:
        entries.append(("GT", gt))
    n = len(entries)
    fig, axes = plt.subplots(1, n, figsize=(2.4 * n, 2.8))
    if n == 1:
        axes = [axes]
    for ax, (name, cube) in zip(axes, entries):
        ax.imshow(false_rgb(cube, bands=bands))
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)
