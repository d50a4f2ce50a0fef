"""Pose accuracy metrics and the warped-feature consistency score."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .geometry import Intrinsics, PointMap, Trajectory, relative_rotation_angle

DEGENERATE_NORM = 1e-9
COLUMNS = ("Rot.", "Trans.", "RRA@5", "RTA@5", "mAA@30")


class Mode(enum.Enum):
    ALL_PAIRS = "all"
    FIRST_FRAME_PAIRS = "star"


class Which(enum.Enum):
    ROTATION = "rotation"
    TRANSLATION = "translation"


def translation_angle(t, t_gt) -> float:
    """Angle in degrees between two translation directions.

    Returns NaN when either vector is shorter than 1e-9 (direction undefined).
    Computed as ``atan2(|t x t_gt|, t . t_gt)``, which equals
    ``arccos(t . t_gt / (|t| |t_gt|))`` without its loss of precision near 0.
    """
    t = np.asarray(t, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if np.linalg.norm(t) < DEGENERATE_NORM or np.linalg.norm(t_gt) < DEGENERATE_NORM:
        return float("nan")
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(t, t_gt)), t @ t_gt)))


@dataclass(frozen=True)
class PoseErrorSample:
    i: int
    j: int
    rotation_error: float
    translation_error: float  # NaN when degenerate
    degenerate: bool


def _pairs(n, mode):
    if mode is Mode.ALL_PAIRS:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    return [(0, j) for j in range(1, n)]


def pairwise_errors(est: Trajectory, gt: Trajectory, mode: Mode | str = Mode.ALL_PAIRS) -> list[PoseErrorSample]:
    """Relative-pose errors for every evaluated camera pair ``(i, j)``, ``i < j``.

    The relative pose takes camera ``i`` to camera ``j``:
    ``R_ij = R_j R_i^T`` and ``t_ij = t_j - R_ij t_i``.
    """
    mode = Mode(mode)
    if len(est) != len(gt):
        raise InputError(f"trajectories have {len(est)} and {len(gt)} frames")
    out = []
    for i, j in _pairs(len(est), mode):
        rel = []
        for traj in (est, gt):
            pi, pj = traj.poses[i], traj.poses[j]
            R = pj.rotation @ pi.rotation.T
            rel.append((R, pj.translation - R @ pi.translation))
        rot = relative_rotation_angle(rel[0][0], rel[1][0])
        tr = translation_angle(rel[0][1], rel[1][1])
        out.append(PoseErrorSample(i, j, rot, tr, math.isnan(tr)))
    return out


def _errors(samples: Sequence[PoseErrorSample], which: Which) -> np.ndarray:
    if which is Which.ROTATION:
        return np.array([s.rotation_error for s in samples], dtype=float)
    return np.array([s.translation_error for s in samples if not s.degenerate], dtype=float)


def accuracy_at(samples: Sequence[PoseErrorSample], threshold: float, which: Which | str) -> float:
    """Percentage of (non-degenerate) samples with error strictly below ``threshold``."""
    which = Which(which)
    if not threshold > 0:
        raise InputError("threshold must be positive")
    err = _errors(samples, which)
    if err.size == 0:
        raise InputError(f"no usable {which.value} samples")
    return 100.0 * float(np.count_nonzero(err < threshold)) / err.size


def maa_30(samples: Sequence[PoseErrorSample], max_threshold: int = 30) -> float:
    """Mean over integer thresholds 1..30 of ``min(RRA@t, RTA@t)``."""
    rot = _errors(samples, Which.ROTATION)
    tr = _errors(samples, Which.TRANSLATION)
    if rot.size == 0 or tr.size == 0:
        raise InputError("mAA needs at least one non-degenerate sample")
    taus = np.arange(1, max_threshold + 1, dtype=float)
    rra = 100.0 * np.count_nonzero(rot[None, :] < taus[:, None], axis=1) / rot.size
    rta = 100.0 * np.count_nonzero(tr[None, :] < taus[:, None], axis=1) / tr.size
    return float(np.mean(np.minimum(rra, rta)))


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class MetricReport:
    rotation_error: float
    translation_error: float
    rra5: float
    rta5: float
    maa30: float
    count: int
    degenerate: int

    def values(self) -> tuple[float, ...]:
        return (self.rotation_error, self.translation_error, self.rra5, self.rta5, self.maa30)

    def to_text(self, precision: int = 2) -> str:
        cells = [f"{v:.{precision}f}" for v in self.values()]
        widths = [max(len(c), len(h)) for c, h in zip(cells, COLUMNS)]
        head = "  ".join(h.rjust(w) for h, w in zip(COLUMNS, widths))
        row = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return f"{head}\n{row}\n"

    def to_csv(self, precision: int = 2) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerow([f"{v:.{precision}f}" for v in self.values()])
        return buf.getvalue()

    @staticmethod
    def parse_csv(text: str) -> dict[str, float]:
        rows = list(csv.reader(io.StringIO(text)))
        return {k: float(v) for k, v in zip(rows[0], rows[1])}


def metric_report(samples: Sequence[PoseErrorSample], threshold: float = 5.0) -> MetricReport:
    """Summarise pose-error samples; undefined translation statistics are NaN."""
    if not samples:
        raise InputError("no samples to report")
    nan = float("nan")
    rot = _errors(samples, Which.ROTATION)
    tr = _errors(samples, Which.TRANSLATION)
    return MetricReport(
        rotation_error=float(rot.mean()),
        translation_error=float(tr.mean()) if tr.size else nan,
        rra5=accuracy_at(samples, threshold, Which.ROTATION),
        rta5=accuracy_at(samples, threshold, Which.TRANSLATION) if tr.size else nan,
        maa30=maa_30(samples) if tr.size else nan,
        count=len(samples),
        degenerate=len(samples) - int(tr.size),
    )


# ---------------------------------------------------------------------------
# warped-feature consistency


@dataclass
class ConsistencyResult:
    per_frame: list[float]  # NaN for skipped frames; index 0 is the reference
    mean: float
    skipped: list[int]
    visible: list[int]

    @property
    def error(self) -> float:
        return 1.0 - self.mean


def _unit(feat):
    n = np.linalg.norm(feat, axis=-1, keepdims=True)
    return feat / np.maximum(n, 1e-12)


def warp_consistency(
    features: Sequence[np.ndarray],
    pointmaps: Sequence[PointMap],
    poses: Trajectory | None,
    K: Intrinsics,
    resample: str = "bilinear",
    depth_tol: float = 0.01,
) -> ConsistencyResult:
    """Visibility-weighted cosine similarity of each frame's features warped into frame 0.

    ``pointmaps[f]`` carries frame-``f`` pixels in the camera frame named by
    its ``frame`` field; maps not already in frame 0 are moved there with
    ``poses``. Points are splatted into the first view (nearest pixel, or
    bilinear weights). A splat is visible when it is in bounds, in front of
    the camera, and within ``depth_tol`` relative depth of the first view's
    own depth (or of the nearest splat when frame 0 has no depth there).
    """
    if resample not in ("bilinear", "nearest"):
        raise InputError(f"unknown resampling {resample!r}")
    if len(features) != len(pointmaps):
        raise InputError("features and point maps must align")
    H, W = K.height, K.width
    feats = [np.asarray(f, dtype=float) for f in features]
    for f in feats:
        if f.ndim != 3 or f.shape[:2] != (H, W) or f.shape[2] < 1:
            raise InputError("feature grids must be HxWxD with the intrinsics' dimensions")
        if not np.all(np.isfinite(f)):
            raise InputError("feature grid contains non-finite values")
    ref_feat = _unit(feats[0]).reshape(H * W, -1)

    def to_first(pm: PointMap) -> np.ndarray:
        if pm.frame == 0:
            return pm.points
        if poses is None:
            raise InputError("poses are required for point maps outside frame 0")
        return poses.poses[pm.frame].inverse().apply(pm.points)

    p0 = to_first(pointmaps[0])
    ref_depth = np.where(pointmaps[0].valid & (p0[..., 2] > 0), p0[..., 2], np.inf).reshape(-1)

    per_frame = [1.0]
    skipped, visible_counts = [], [int(np.isfinite(ref_depth).sum())]
    for f in range(1, len(pointmaps)):
        pm = pointmaps[f]
        pts = to_first(pm)[pm.valid]
        src = _unit(feats[f][pm.valid])
        z = pts[:, 2]
        front = z > 0
        pts, src, z = pts[front], src[front], z[front]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = K.fx * pts[:, 0] / z + K.cx
            v = K.fy * pts[:, 1] / z + K.cy

        if resample == "nearest":
            ui, vi = np.rint(u).astype(int), np.rint(v).astype(int)
            cand = [(ui, vi, np.ones_like(u))]
        else:
            u0, v0 = np.floor(u).astype(int), np.floor(v).astype(int)
            au, av = u - u0, v - v0
            cand = [
                (u0, v0, (1 - au) * (1 - av)),
                (u0 + 1, v0, au * (1 - av)),
                (u0, v0 + 1, (1 - au) * av),
                (u0 + 1, v0 + 1, au * av),
            ]

        # z-buffer over all candidate splats
        zbuf = np.full(H * W, np.inf)
        flat = []
        for ui, vi, wt in cand:
            ok = (ui >= 0) & (ui < W) & (vi >= 0) & (vi < H) & (wt > 0)
            tgt = np.where(ok, vi * W + ui, 0)
            np.minimum.at(zbuf, tgt[ok], z[ok])
            flat.append((tgt, ok, wt))
        has_ref = np.isfinite(ref_depth)
        zref = np.where(has_ref, ref_depth, zbuf)

        acc = np.zeros((H * W, src.shape[1]))
        wsum = np.zeros(H * W)
        for tgt, ok, wt in flat:
            zr = zref[tgt]
            vis = ok & (np.abs(z - zr) <= depth_tol * zr)
            np.add.at(acc, tgt[vis], src[vis] * wt[vis, None])
            np.add.at(wsum, tgt[vis], wt[vis])
        seen = wsum > 0
        if not seen.any():
            per_frame.append(float("nan"))
            skipped.append(f)
            visible_counts.append(0)
            continue
        warped = _unit(acc[seen] / wsum[seen, None])
        cos = np.sum(warped * ref_feat[seen], axis=1)
        per_frame.append(float(cos.mean()))
        visible_counts.append(int(seen.sum()))

    scores = [s for k, s in enumerate(per_frame) if k > 0 and not math.isnan(s)]
    mean = float(np.mean(scores)) if scores else float("nan")
    return ConsistencyResult(per_frame, mean, skipped, visible_counts)
