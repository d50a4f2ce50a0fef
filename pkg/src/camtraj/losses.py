"""Training-objective formulas and temporal regularizers, evaluated on supplied arrays.

Nothing here runs a network: the reconstruction loss takes predicted and
ground-truth point maps, the generation loss takes the true and predicted
noise tensors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometryError, InputError
from .geometry import ConfidenceMap, PointMap


@dataclass(frozen=True)
class RecLossConfig:
    """``alpha`` weights the ``-log C`` confidence regularizer, ``lam`` weights
    the reconstruction loss inside the total loss."""

    alpha: float = 0.2
    lam: float = 1.0
    reduction: str = "sum"
    scale_mode: str = "frame"

    def __post_init__(self):
        if not (self.alpha >= 0 and self.lam >= 0):
            raise InputError("alpha and lam must be nonnegative")
        if self.reduction not in ("sum", "mean"):
            raise InputError(f"unknown reduction {self.reduction!r}")
        if self.scale_mode not in ("frame", "pooled"):
            raise InputError(f"unknown scale_mode {self.scale_mode!r}")


@dataclass
class LossBreakdown:
    total: float
    data_term: float
    confidence_term: float
    per_frame: list[float]
    skipped_frames: list[int] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class NoiseTensor:
    values: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        shape = tuple(int(s) for s in self.shape)
        if math.prod(shape) != v.size:
            raise InputError(f"shape {shape} does not match {v.size} values")
        if not np.all(np.isfinite(v)):
            raise InputError("noise tensor contains non-finite values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_array(cls, a) -> "NoiseTensor":
        a = np.asarray(a, dtype=float)
        return cls(a.reshape(-1), a.shape)


def _mean_norm(points: np.ndarray) -> float:
    if len(points) == 0:
        raise InputError("normalization scale needs at least one valid point")
    s = float(np.linalg.norm(points, axis=-1).mean())
    if s <= 0.0:
        raise DegenerateGeometryError("all valid points are at the origin")
    return s


def normalization_scale(pm: PointMap, mask=None) -> float:
    """Mean Euclidean norm of the valid points (optionally restricted to ``mask``)."""
    valid = pm.valid if mask is None else (pm.valid & mask)
    return _mean_norm(pm.points[valid])


def rec_loss(
    pred: Sequence[tuple[PointMap, ConfidenceMap]],
    gt: Sequence[PointMap],
    cfg: RecLossConfig = RecLossConfig(),
) -> LossBreakdown:
    """Confidence-weighted, scale-normalised point-map regression loss.

    For each frame, both maps are divided by their mean point norm over the
    pixels valid in both, and the loss accumulates
    ``C * ||X/s - Xgt/sgt|| - alpha * log C`` over those pixels. Frames with
    no common valid pixel are skipped: their ``per_frame`` entry is NaN and
    their index is listed in ``skipped_frames``.
    """
    if len(pred) != len(gt):
        raise InputError(f"{len(pred)} predicted frames but {len(gt)} ground-truth frames")

    masks = []
    for (pm, conf), g in zip(pred, gt):
        if pm.shape != g.shape or conf.shape != pm.shape:
            raise InputError("predicted, ground-truth and confidence maps must share dimensions")
        masks.append(pm.valid & g.valid)

    if cfg.scale_mode == "pooled":
        used = [m.any() for m in masks]
        if not any(used):
            raise InputError("no frame has overlapping valid pixels")
        s_pred = _mean_norm(np.concatenate([p[0].points[m] for p, m in zip(pred, masks)]))
        s_gt = _mean_norm(np.concatenate([g.points[m] for g, m in zip(gt, masks)]))

    data = conf_term = 0.0
    n_pix = 0
    per_frame: list[float] = []
    skipped: list[int] = []
    for k, ((pm, conf), g, m) in enumerate(zip(pred, gt, masks)):
        if not m.any():
            per_frame.append(float("nan"))
            skipped.append(k)
            continue
        x, xg, c = pm.points[m], g.points[m], conf.values[m]
        if cfg.scale_mode == "frame":
            s, sg = _mean_norm(x), _mean_norm(xg)
        else:
            s, sg = s_pred, s_gt
        dist = np.linalg.norm(x / s - xg / sg, axis=-1)
        d = float(np.sum(c * dist))
        r = float(-cfg.alpha * np.sum(np.log(c)))
        data += d
        conf_term += r
        n_pix += int(m.sum())
        per_frame.append(d + r)

    if cfg.reduction == "mean" and n_pix:
        data /= n_pix
        conf_term /= n_pix
        per_frame = [v / n_pix for v in per_frame]
    return LossBreakdown(data + conf_term, data, conf_term, per_frame, skipped)


def gen_loss(eps, eps_pred) -> float:
    """Squared L2 distance between the added and the predicted noise."""
    if not isinstance(eps, NoiseTensor):
        eps = NoiseTensor.from_array(eps)
    if not isinstance(eps_pred, NoiseTensor):
        eps_pred = NoiseTensor.from_array(eps_pred)
    if eps.shape != eps_pred.shape:
        raise InputError(f"noise shapes differ: {eps.shape} vs {eps_pred.shape}")
    diff = eps.values - eps_pred.values
    return float(diff @ diff)


def total_loss(gen: float, rec: float, cfg: RecLossConfig = RecLossConfig()) -> float:
    if not (math.isfinite(gen) and math.isfinite(rec)):
        raise InputError("loss terms must be finite")
    return gen + cfg.lam * rec


# ---------------------------------------------------------------------------
# temporal regularizers


def focal_smoothness(focals) -> float:
    """Sum of squared differences between consecutive focal lengths."""
    l = np.asarray(focals, dtype=float).reshape(-1)
    if l.size < 2:
        warnings.warn("focal_smoothness needs at least 2 frames; returning 0", stacklevel=2)
        return 0.0
    d = np.diff(l)
    return float(d @ d)


def focal_smoothness_grad(focals) -> np.ndarray:
    l = np.asarray(focals, dtype=float).reshape(-1)
    g = np.zeros_like(l)
    if l.size < 2:
        return g
    d = l[:-1] - l[1:]
    g[:-1] += 2 * d
    g[1:] -= 2 * d
    return g


def _velocities(t):
    # v_f = t_f - t_{f+1}
    return t[:-1] - t[1:]


def translation_smoothness(translations) -> float:
    """Static-position term plus constant-velocity term over consecutive frames."""
    t = np.asarray(translations, dtype=float).reshape(-1, 3)
    if len(t) < 2:
        raise InputError("translation_smoothness needs at least 2 frames")
    v = _velocities(t)
    a = v[:-1] - v[1:]
    return float(np.sum(v * v) + np.sum(a * a))


def translation_smoothness_grad(translations) -> np.ndarray:
    """Gradient with respect to every ``t_f``, shape ``(F, 3)``."""
    t = np.asarray(translations, dtype=float).reshape(-1, 3)
    if len(t) < 2:
        raise InputError("translation_smoothness needs at least 2 frames")
    g = np.zeros_like(t)
    v = _velocities(t)
    g[:-1] += 2 * v
    g[1:] -= 2 * v
    if len(t) >= 3:
        a = v[:-1] - v[1:]  # t_f - 2 t_{f+1} + t_{f+2}
        g[:-2] += 2 * a
        g[1:-1] -= 4 * a
        g[2:] += 2 * a
    return g


def velocity_jitter(translations) -> float:
    """Mean norm of consecutive velocity differences."""
    t = np.asarray(translations, dtype=float).reshape(-1, 3)
    if len(t) < 3:
        return 0.0
    v = _velocities(t)
    return float(np.linalg.norm(v[:-1] - v[1:], axis=-1).mean())
