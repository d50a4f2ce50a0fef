"""Report figures: accuracy-vs-threshold curves and top-down trajectory views.

Figures are built on the Agg backend without pyplot state and saved with
fixed metadata, so the same inputs give byte-identical PNG files.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .geometry import Trajectory
from .metrics import PoseErrorSample, Which, accuracy_at

_METADATA = {"Software": None}


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=100, metadata=_METADATA)


def accuracy_curves(samples: Sequence[PoseErrorSample], max_threshold: int = 30):
    """RRA and RTA (percent) at integer thresholds ``1..max_threshold``."""
    taus = np.arange(1, max_threshold + 1)
    rra = np.array([accuracy_at(samples, t, Which.ROTATION) for t in taus])
    has_trans = any(not s.degenerate for s in samples)
    rta = np.array([accuracy_at(samples, t, Which.TRANSLATION) for t in taus]) if has_trans else None
    return taus, rra, rta


def plot_accuracy(samples: Sequence[PoseErrorSample], path, max_threshold: int = 30, title: str = "") -> None:
    taus, rra, rta = accuracy_curves(samples, max_threshold)
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot(111)
    ax.plot(taus, rra, marker="o", ms=3, label="RRA")
    if rta is not None:
        ax.plot(taus, rta, marker="s", ms=3, label="RTA")
        ax.fill_between(taus, np.minimum(rra, rta), alpha=0.15, label="min (mAA area)")
    ax.set_xlabel("threshold (deg)")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(-2, 102)
    ax.set_xlim(1, max_threshold)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_trajectories(trajectories: Mapping[str, Trajectory], path, title: str = "") -> None:
    """Top-down (x, z) view of camera centres with short viewing-direction ticks."""
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot(111)
    for label, traj in trajectories.items():
        c = traj.centers
        ax.plot(c[:, 0], c[:, 2], marker="o", ms=3, label=label)
        span = max(float(np.ptp(c[:, [0, 2]], axis=0).max()), 1e-6)
        look = traj.rotations[:, 2, :]  # optical axis in first-camera coordinates
        ax.quiver(c[:, 0], c[:, 2], look[:, 0], look[:, 2], angles="xy", scale_units="xy",
                  scale=1.0 / (0.08 * span), width=0.003, alpha=0.6)
    ax.set_xlabel("x")
    ax.set_ylabel("z")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(alpha=0.3)
    ax.legend(loc="best")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
