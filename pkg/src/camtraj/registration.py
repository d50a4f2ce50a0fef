"""Multi-frame registration of a star graph of ``(0 -> f)`` point-map pairs.

Unknowns per frame ``f``: world-from-camera rotation ``R_f``, camera centre
``c_f``, log pair scale ``log sigma_f`` and log focal ``log l_f``. The world
is the first camera, whose pose is pinned. Each frame contributes

    E_f = (1/N_f) sum_i C_i || sigma_f X_i - R_f (d_i K_f^-1 p_i) - c_f ||

where ``X_i`` is the pair's point map in first-camera coordinates and ``d_i``
the frame's (fixed) depth. The temporal regularizers act on the focals and
on the camera centres. The objective is minimised by diagonally scaled
gradient descent that only accepts decreasing steps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import losses
from .errors import DisconnectedFrameError, InputError
from .geometry import (
    ConfidenceMap,
    PointMap,
    Pose,
    Trajectory,
    orthonormalize,
    pixel_grid,
    relative_rotation_angle,
    rotation_from_axis_angle,
)
from .metrics import translation_angle
from .pose_recovery import PairEstimate, estimate_focal

log = logging.getLogger(__name__)

PARAMS_PER_FRAME = 8  # rotation increment (3), centre (3), log scale, log focal


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 3000
    lr: float = 1.0
    grow: float = 1.5
    decay: float = 0.5
    tol: float = 1e-8  # relative objective decrease counted as a stall
    atol: float = 1e-14
    patience: int = 5
    max_lr: float = 1e6
    min_lr: float = 1e-14
    reorthonormalize_every: int = 50
    verbose: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise InputError("max_iters must be at least 1")
        if not self.lr > 0:
            raise InputError("learning rate must be positive")
        if not 0 < self.decay < 1:
            raise InputError("decay must lie in (0, 1)")


@dataclass(frozen=True)
class State:
    rotations: np.ndarray  # (F, 3, 3) world-from-camera
    centers: np.ndarray  # (F, 3)
    log_scales: np.ndarray  # (F,)
    log_focals: np.ndarray  # (F,)

    def retract(self, delta: np.ndarray, free: np.ndarray) -> "State":
        """Apply a flat increment; pinned blocks are left untouched."""
        d = delta.reshape(-1, PARAMS_PER_FRAME) * free
        R = np.stack([rotation_from_axis_angle(w) @ Rf for w, Rf in zip(d[:, :3], self.rotations)])
        return State(R, self.centers + d[:, 3:6], self.log_scales + d[:, 6], self.log_focals + d[:, 7])

    def reorthonormalized(self) -> "State":
        R = np.stack([orthonormalize(Rf) for Rf in self.rotations])
        return State(R, self.centers, self.log_scales, self.log_focals)


@dataclass
class RegistrationProblem:
    """Concatenated per-pixel data of all pairs plus the initial state."""

    frames: int
    points: np.ndarray  # (M, 3) pair point maps in first-camera coordinates
    depths: np.ndarray  # (M,)
    pixels: np.ndarray  # (M, 2) pixel offsets from the principal point
    weights_px: np.ndarray  # (M,) confidence / pixels-in-frame
    frame_of: np.ndarray  # (M,)
    init: list[PairEstimate | None]
    init_state: State
    weights: tuple[float, float] = (1.0, 1.0)
    timestamps: np.ndarray | None = None
    free: np.ndarray = field(default=None)
    _blocks: list | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.free is None:
            free = np.ones((self.frames, PARAMS_PER_FRAME))
            free[0, :6] = 0.0  # gauge: first camera pinned to the identity
            self.free = free

    @property
    def n_free_poses(self) -> int:
        return int(self.free[:, 0].sum())

    # -- objective -----------------------------------------------------------

    def _frame_blocks(self):
        """Per-frame data as contiguous ``(3, n)`` / ``(n,)`` arrays (cached)."""
        if self._blocks is None:
            blocks = []
            for f in range(self.frames):
                m = self.frame_of == f
                blocks.append((
                    np.ascontiguousarray(self.points[m].T),
                    np.ascontiguousarray(self.depths[m]),
                    np.ascontiguousarray(self.pixels[m].T),
                    np.ascontiguousarray(self.weights_px[m]),
                ))
            self._blocks = blocks
        return self._blocks

    def _frame_residual(self, s: State, f: int):
        X, d, px, w = self._frame_blocks()[f]
        R = s.rotations[f]
        q = (R[:, :2] * np.exp(-s.log_focals[f])) @ px + R[:, 2:3]  # R K^-1 p
        y = q * d
        sw = np.exp(s.log_scales[f]) * X
        r = sw - y - s.centers[f][:, None]
        n = np.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
        return r, n, y, sw

    def _regularizers(self, s: State, grad=None) -> float:
        w_fl, w_tr = self.weights
        e = 0.0
        if w_fl:
            l = np.exp(s.log_focals)
            e += w_fl * losses.focal_smoothness(l)
            if grad is not None:
                grad[:, 7] += w_fl * losses.focal_smoothness_grad(l) * l
        if w_tr:
            e += w_tr * losses.translation_smoothness(s.centers)
            if grad is not None:
                grad[:, 3:6] += w_tr * losses.translation_smoothness_grad(s.centers)
        return e

    def data_terms(self, s: State) -> np.ndarray:
        blocks = self._frame_blocks()
        return np.array([float(blocks[f][3] @ self._frame_residual(s, f)[1]) for f in range(self.frames)])

    def objective(self, s: State) -> float:
        return float(np.sum(self.data_terms(s))) + self._regularizers(s)

    def objective_and_grad(self, s: State):
        """Objective and its gradient w.r.t. the flat local increments ``(F*8,)``."""
        grad = np.zeros((self.frames, PARAMS_PER_FRAME))
        e = 0.0
        for f, (X, d, px, w) in enumerate(self._frame_blocks()):
            r, n, y, sw = self._frame_residual(s, f)
            e += float(w @ n)
            inv = np.divide(w, n, out=np.zeros_like(n), where=n > 1e-300)
            g = r * inv
            M = g @ y.T  # sum_i g_i y_i^T
            grad[f, 0:3] = (M[1, 2] - M[2, 1], M[2, 0] - M[0, 2], M[0, 1] - M[1, 0])
            grad[f, 3:6] = -g.sum(axis=1)
            grad[f, 6] = float(np.vdot(g, sw))
            grad[f, 7] = float(np.trace(M)) - float(s.rotations[f][:, 2] @ (g @ d))
        e += self._regularizers(s, grad)
        return e, (grad * self.free).ravel()

    def diag_scaling(self, s: State) -> np.ndarray:
        """Inverse squared Jacobian column norms of the data residuals."""
        diag = np.zeros((self.frames, PARAMS_PER_FRAME))
        for f, (X, d, px, w) in enumerate(self._frame_blocks()):
            _, _, y, sw = self._frame_residual(s, f)
            y2 = y * y
            diag[f, 0:3] = (y2 @ w).sum() - y2 @ w
            diag[f, 3:6] = w.sum()
            diag[f, 6] = float(w @ (sw * sw).sum(axis=0))
            dy = y - np.outer(s.rotations[f][:, 2], d)
            diag[f, 7] = float(w @ (dy * dy).sum(axis=0))
        return (self.free / np.maximum(diag, 1e-12)).ravel()

    def trajectory(self, s: State) -> Trajectory:
        poses = [Pose.identity()]
        for R, c in zip(s.rotations[1:], s.centers[1:]):
            poses.append(Pose(R.T, -R.T @ c))
        return Trajectory(tuple(poses), np.exp(s.log_focals), self.timestamps)


def build_problem(
    pointmaps: Sequence[PointMap],
    confidences: Sequence[ConfidenceMap | None] | None,
    pair_estimates: Mapping[int, PairEstimate] | Sequence[PairEstimate | None],
    weights: tuple[float, float] = (1.0, 1.0),
    self_pointmaps: Sequence[PointMap | None] | None = None,
    focal: float | None = None,
    timestamps=None,
) -> RegistrationProblem:
    """Assemble the registration problem for a star graph rooted at frame 0.

    ``pointmaps[f]`` holds frame-``f`` pixels in first-camera coordinates and
    ``pair_estimates[f]`` the pairwise result for ``(0 -> f)``. Depths come
    from the self maps when given, otherwise from the initial pose.
    """
    F = len(pointmaps)
    if F < 2:
        raise InputError("registration needs at least two frames")
    if isinstance(pair_estimates, Mapping):
        init = [pair_estimates.get(f) for f in range(F)]
    else:
        init = list(pair_estimates)
        if len(init) == F - 1:
            init = [None] + init
        if len(init) != F:
            raise InputError("pair estimates must cover frames 1..F-1")
    init[0] = None
    for f in range(1, F):
        if init[f] is None:
            raise DisconnectedFrameError(f)
    confidences = list(confidences) if confidences is not None else [None] * F
    self_pointmaps = list(self_pointmaps) if self_pointmaps is not None else [None] * F
    if len(confidences) != F or len(self_pointmaps) != F:
        raise InputError("confidences and self point maps must have one entry per frame")
    w_fl, w_tr = (float(v) for v in weights)
    if w_fl < 0 or w_tr < 0:
        raise InputError("regularizer weights must be nonnegative")

    H, W = pointmaps[0].shape
    if focal is None:
        focal = next((e.focal for e in init[1:] if e.focal), None) or estimate_focal(pointmaps[0])
    pix_all = pixel_grid(W, H) - np.array([W / 2.0, H / 2.0])

    rotations = np.tile(np.eye(3), (F, 1, 1))
    centers = np.zeros((F, 3))
    log_scales = np.zeros(F)
    pts, dep, pix, wts, idx = [], [], [], [], []
    for f in range(F):
        pm = pointmaps[f]
        if pm.shape != (H, W):
            raise InputError(f"frame {f} point map has different dimensions")
        mask = pm.valid.copy()
        if f == 0:
            depth = pm.points[..., 2]
        elif self_pointmaps[f] is not None:
            depth = self_pointmaps[f].points[..., 2]
            mask &= self_pointmaps[f].valid
        else:
            e = init[f]
            depth = e.pose.apply(e.scale * pm.points)[..., 2]
        mask &= np.isfinite(depth) & (depth > 0)
        if not mask.any():
            raise InputError(f"frame {f} has no usable pixels")
        c = confidences[f].values[mask] if confidences[f] is not None else np.ones(int(mask.sum()))
        pts.append(pm.points[mask])
        dep.append(depth[mask])
        pix.append(pix_all[mask])
        wts.append(c / mask.sum())
        idx.append(np.full(int(mask.sum()), f))
        if f:
            e = init[f]
            Rt = e.pose.rotation.T
            rotations[f] = Rt
            centers[f] = -Rt @ e.pose.translation
            log_scales[f] = math.log(e.scale)

    state = State(rotations, centers, log_scales, np.full(F, math.log(focal)))
    return RegistrationProblem(
        frames=F,
        points=np.concatenate(pts),
        depths=np.concatenate(dep),
        pixels=np.concatenate(pix),
        weights_px=np.concatenate(wts),
        frame_of=np.concatenate(idx),
        init=init,
        init_state=state,
        weights=(w_fl, w_tr),
        timestamps=None if timestamps is None else np.asarray(timestamps, dtype=float),
    )


@dataclass
class RegistrationResult:
    trajectory: Trajectory
    state: State
    initial_objective: float
    objective: float
    iterations: int
    converged: bool
    history: list[tuple[int, float, float]]
    diagnostic: str = ""


def optimize(problem: RegistrationProblem, cfg: OptimizerConfig = OptimizerConfig()) -> RegistrationResult:
    """Monotone diagonally scaled gradient descent with backtracking.

    The trial step length comes from a Barzilai-Borwein estimate in the
    preconditioned metric (falling back to growing the last accepted step);
    trials are halved until the objective decreases.
    """
    s = problem.init_state
    P = problem.diag_scaling(s)
    e, g = problem.objective_and_grad(s)
    e0 = e
    if not math.isfinite(e):
        raise InputError("objective is not finite at the initial state")
    lr = cfg.lr
    history = [(0, e, lr)]
    stall = 0
    converged = False
    diagnostic = ""
    it = 0
    for it in range(1, cfg.max_iters + 1):
        step = -P * g
        if not np.any(step):
            converged = True
            break
        while lr >= cfg.min_lr:
            cand = s.retract(lr * step, problem.free)
            with np.errstate(over="ignore", invalid="ignore"):
                e_new = problem.objective(cand)
            if not math.isfinite(e_new):
                diagnostic = f"non-finite objective at iteration {it}"
                log.warning(diagnostic)
            elif e_new < e:
                break
            lr *= cfg.decay
        else:
            converged = True
            break
        small = (e - e_new) <= cfg.tol * abs(e) + cfg.atol
        dx = lr * step
        if it % cfg.reorthonormalize_every == 0:
            cand = cand.reorthonormalized()
        e_new, g_new = problem.objective_and_grad(cand)
        dg = g_new - g
        s, e, g = cand, e_new, g_new
        history.append((it, e, lr))
        if cfg.verbose:
            log.info("iter %d objective %.12g step %.3g", it, e, lr)
        curv = float(dx @ dg)
        if curv > 0:
            # BB1 length along -P g: <dx, P^-1 dx> / <dx, dg>
            inv_p = np.divide(dx, P, out=np.zeros_like(dx), where=P > 0)
            lr = min(float(dx @ inv_p) / curv, cfg.max_lr)
        else:
            lr *= cfg.grow
        stall = stall + 1 if small else 0
        if stall >= cfg.patience:
            converged = True
            break
    return RegistrationResult(problem.trajectory(s), s, e0, e, it, converged, history, diagnostic)


def register(problem: RegistrationProblem, cfg: OptimizerConfig = OptimizerConfig()) -> Trajectory:
    return optimize(problem, cfg).trajectory


class TrajectoryDiff(NamedTuple):
    rotation_deg: float
    translation_deg: float
    skipped: int


def compare_trajectories(a: Trajectory, b: Trajectory) -> TrajectoryDiff:
    """Mean per-frame rotation difference and translation-direction difference, in degrees.

    The first frame is the identity in both trajectories and is left out.
    Frames whose translation is shorter than 1e-9 in either trajectory are
    left out of the translation mean and counted in ``skipped``.
    """
    if len(a) != len(b):
        raise InputError(f"trajectories have {len(a)} and {len(b)} frames")
    if len(a) < 2:
        raise InputError("comparison needs at least two frames")
    pairs = list(zip(a.poses[1:], b.poses[1:]))
    rot = [relative_rotation_angle(pa.rotation, pb.rotation) for pa, pb in pairs]
    trans = []
    skipped = 0
    for pa, pb in pairs:
        ang = translation_angle(pa.translation, pb.translation)
        if math.isnan(ang):
            skipped += 1
        else:
            trans.append(ang)
    return TrajectoryDiff(
        float(np.mean(rot)), float(np.mean(trans)) if trans else float("nan"), skipped
    )
