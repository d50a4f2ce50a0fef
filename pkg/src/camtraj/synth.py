"""Procedural static scenes with exact ground truth.

Scenes are analytic (a room box plus spheres or cuboids), so depth is
obtained by exact ray casting. The world frame is the first camera's frame
unless a ``world_offset`` is requested, and the scene is rescaled so the
first view's points have unit mean norm.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import (
    ConfidenceMap,
    Convention,
    DepthMap,
    Intrinsics,
    PointMap,
    Pose,
    Trajectory,
    camera_rays,
    rotation_from_axis_angle,
    unproject,
)

log = logging.getLogger(__name__)

MAX_RETRIES = 8
WFC = Convention.WORLD_FROM_CAMERA


class SceneType(enum.Enum):
    POINT_CLOUD = "pointcloud"
    TEXTURED_ROOM = "room"


class Motion(enum.Enum):
    LINEAR = "linear"
    ARC = "arc"
    SMOOTH_SPLINE = "spline"


@dataclass(frozen=True)
class SceneSpec:
    kind: SceneType = SceneType.TEXTURED_ROOM
    count: int = 8
    extent: float = 2.5
    seed: int = 0
    feature_dim: int = 8

    def __post_init__(self):
        if self.extent <= 0:
            raise InputError("scene extent must be positive")
        if self.count < 1:
            raise InputError("scene needs at least one object")
        if self.feature_dim < 1:
            raise InputError("feature_dim must be at least 1")


@dataclass(frozen=True)
class TrajectorySpec:
    frames: int = 16
    motion: Motion = Motion.LINEAR
    baseline: float = 0.3
    rotation_deg: float = 10.0
    focal: float = 56.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if self.frames < 2:
            raise InputError("need at least two frames")
        if self.baseline < 0:
            raise InputError("baseline must be nonnegative")
        if self.focal <= 0 or self.width <= 0 or self.height <= 0:
            raise InputError("focal and image dims must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    outlier_fraction: float = 0.0
    confidence_correlated: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise InputError("sigma must be nonnegative")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise InputError("outlier fraction must lie in [0, 1)")


# ---------------------------------------------------------------------------
# analytic scene


@dataclass
class Scene:
    room_lo: np.ndarray
    room_hi: np.ndarray
    spheres: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))  # cx cy cz r
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))  # lo(3) hi(3)
    tex_dirs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    tex_phase: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def scaled(self, c: float) -> "Scene":
        sp = self.spheres.copy()
        sp *= c
        return Scene(self.room_lo * c, self.room_hi * c, sp, self.boxes * c, self.tex_dirs / c, self.tex_phase)

    def contains_camera(self, center, margin: float = 0.02) -> bool:
        """True if ``center`` is outside the room or inside/too close to an object."""
        c = np.asarray(center)
        if np.any(c <= self.room_lo + margin) or np.any(c >= self.room_hi - margin):
            return True
        if len(self.spheres):
            d = np.linalg.norm(self.spheres[:, :3] - c, axis=1)
            if np.any(d <= self.spheres[:, 3] + margin):
                return True
        if len(self.boxes):
            inside = np.all((c >= self.boxes[:, :3] - margin) & (c <= self.boxes[:, 3:] + margin), axis=1)
            if inside.any():
                return True
        return False

    def features(self, points) -> np.ndarray:
        """View-independent texture: a constant channel plus low-frequency cosines."""
        points = np.asarray(points, dtype=float)
        waves = np.cos(points @ self.tex_dirs.T + self.tex_phase)
        return np.concatenate([np.ones(points.shape[:-1] + (1,)), waves], axis=-1)


def build_scene(spec: SceneSpec, attempt: int = 0) -> Scene:
    rng = np.random.default_rng([spec.seed, attempt])
    e = spec.extent
    room_lo = np.array([-e, -0.6 * e, -0.6 * e])
    room_hi = np.array([e, 0.6 * e, 1.6 * e])
    centers = np.column_stack(
        [
            rng.uniform(-0.6 * e, 0.6 * e, spec.count),
            rng.uniform(-0.35 * e, 0.35 * e, spec.count),
            rng.uniform(0.55 * e, 1.3 * e, spec.count),
        ]
    )
    sizes = rng.uniform(0.06 * e, 0.16 * e, spec.count)
    scene = Scene(room_lo, room_hi)
    if spec.kind is SceneType.POINT_CLOUD:
        scene.spheres = np.column_stack([centers, sizes])
    else:
        half = sizes[:, None] * rng.uniform(0.6, 1.4, (spec.count, 3))
        scene.boxes = np.hstack([centers - half, centers + half])
    dirs = rng.normal(size=(spec.feature_dim - 1, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scene.tex_dirs = dirs * rng.uniform(0.5, 1.5, (spec.feature_dim - 1, 1)) / e
    scene.tex_phase = rng.uniform(0, 2 * np.pi, spec.feature_dim - 1)
    return scene


def ray_cast(scene: Scene, origin, dirs) -> np.ndarray:
    """Nearest positive hit parameter along ``origin + t * dirs`` (``inf`` on miss)."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(dirs, dtype=float)
    shape = d.shape[:-1]
    d = d.reshape(-1, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        # room: camera is inside, take the exit distance
        t1 = (scene.room_lo - o) * inv
        t2 = (scene.room_hi - o) * inv
        best = np.nanmin(np.maximum(t1, t2), axis=1)
        for lo, hi in zip(scene.boxes[:, :3], scene.boxes[:, 3:]):
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
            tmin = np.nanmax(np.minimum(t1, t2), axis=1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (tmax >= tmin) & (tmin > 0)
            best = np.where(hit & (tmin < best), tmin, best)
    for cx, cy, cz, r in scene.spheres:
        oc = o - np.array([cx, cy, cz])
        a = np.sum(d * d, axis=1)
        b = 2 * d @ oc
        c = oc @ oc - r * r
        disc = b * b - 4 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t = (-b - sq) / (2 * a)
        hit &= t > 0
        best = np.where(hit & (t < best), t, best)
    return best.reshape(shape)


def render(scene: Scene, cam_from_world: Pose, K: Intrinsics):
    """Exact depth map and the world-space surface point seen by every pixel."""
    wc = cam_from_world.canonical().inverse()
    rays = camera_rays(K) @ wc.rotation.T  # unit-z rays, so t equals depth
    t = ray_cast(scene, wc.translation, rays)
    ok = np.isfinite(t) & (t > 0)
    depth = np.where(ok, t, 0.0)
    pts = wc.translation + rays * depth[..., None]
    pts[~ok] = np.nan
    return DepthMap(depth), pts


# ---------------------------------------------------------------------------
# trajectories


def _rot_yp(yaw, pitch):
    return rotation_from_axis_angle([0.0, yaw, 0.0]) @ rotation_from_axis_angle([pitch, 0.0, 0.0])


def make_trajectory(spec: TrajectorySpec, seed: int = 0) -> list[Pose]:
    """Camera-from-world poses; the first camera sits at the world origin."""
    F = spec.frames
    s = np.linspace(0.0, 1.0, F)
    rot = np.radians(spec.rotation_deg)
    poses = []
    if spec.motion is Motion.LINEAR:
        direction = np.array([1.0, 0.1, 0.4])
        direction /= np.linalg.norm(direction)
        axis = np.array([0.2, 1.0, 0.0])
        axis /= np.linalg.norm(axis)  # mostly yaw with a little pitch; total angle stays rot
        for si in s:
            poses.append(Pose(rotation_from_axis_angle(rot * si * axis), spec.baseline * si * direction, WFC))
    elif spec.motion is Motion.ARC:
        radius = spec.baseline / rot if rot > 1e-9 else 0.0
        for si in s:
            phi = rot * si
            if radius:
                c = np.array([-radius * np.sin(phi), 0.0, radius * (1.0 - np.cos(phi))])
            else:
                c = np.array([spec.baseline * si, 0.0, 0.0])
            poses.append(Pose(_rot_yp(phi, 0.0), c, WFC))
    else:
        rng = np.random.default_rng([seed, 7])
        amp = rng.normal(size=(3, 3))
        ph = rng.uniform(0, 2 * np.pi, (3, 3))
        ang_amp = rng.normal(size=(2, 3))

        def curve(a, p, x):
            k = np.arange(1, 4)
            return np.sum(a * (np.sin(np.pi * k * x / 2 + p) - np.sin(p)), axis=-1)

        cs = np.array([curve(amp, ph, si) for si in s])
        length = np.sum(np.linalg.norm(np.diff(cs, axis=0), axis=1))
        cs *= spec.baseline / length if length > 0 else 0.0
        ang = np.array([curve(ang_amp, ph[:2], si) for si in s])
        peak = np.abs(ang).max()
        ang *= rot / peak if peak > 0 else 0.0
        for c, (yaw, pitch) in zip(cs, ang):
            poses.append(Pose(_rot_yp(yaw, pitch), c, WFC))
    return [p.canonical() for p in poses]


# ---------------------------------------------------------------------------
# cases


@dataclass
class SyntheticCase:
    trajectory: Trajectory
    intrinsics: Intrinsics
    depths: list[DepthMap]
    ref_maps: list[PointMap]
    self_maps: list[PointMap]
    features: list[np.ndarray]
    surface_points: list[np.ndarray]
    scene: Scene
    absolute_poses: list[Pose]
    scale: float


def generate(
    scene: SceneSpec = SceneSpec(),
    traj: TrajectorySpec = TrajectorySpec(),
    world_offset: Pose | None = None,
) -> SyntheticCase:
    """Render every frame of a trajectory through a procedural scene.

    ``ref_maps[f]`` holds frame-``f`` pixels in first-camera coordinates,
    ``self_maps[f]`` the same pixels in camera ``f``. With ``world_offset``
    (world-from-first) the scene is rendered in a rigidly moved world frame;
    all first-frame-relative outputs are unchanged by construction.
    """
    K = Intrinsics.from_focal(traj.focal, traj.width, traj.height)
    cams = make_trajectory(traj, seed=scene.seed)
    for attempt in range(MAX_RETRIES):
        sc = build_scene(scene, attempt)
        d0, p0 = render(sc, Pose.identity(), K)
        scale = float(np.linalg.norm(p0[d0.valid], axis=1).mean())
        sc = sc.scaled(1.0 / scale)
        if not any(sc.contains_camera(c.center) for c in cams):
            break
        warnings.warn(f"camera inside scene geometry (attempt {attempt}); regenerating", stacklevel=2)
    else:
        raise InputError("could not place the trajectory inside free space")

    # world_offset maps first-camera coordinates into the world frame
    G = Pose.identity() if world_offset is None else world_offset
    absolute = [c.compose(G.inverse()) for c in cams]

    depths, ref_maps, self_maps, feats, surf = [], [], [], [], []
    for f, cam in enumerate(cams):
        depth, pts = render(sc, cam, K)
        pts_world = G.apply(pts)
        depths.append(depth)
        ref = unproject(depth, K, absolute[f], absolute[0])
        ref_maps.append(PointMap(ref.points, ref.valid, frame=0))
        own = unproject(depth, K, absolute[f], absolute[f])
        self_maps.append(PointMap(own.points, own.valid, frame=f))
        feats.append(sc.features(pts))
        surf.append(pts_world)

    gt = Trajectory(tuple([Pose.identity()] + list(cams[1:])), np.full(traj.frames, float(traj.focal)))
    return SyntheticCase(gt, K, depths, ref_maps, self_maps, feats, surf, sc, absolute, scale)


@dataclass
class CorruptResult:
    pointmaps: list[PointMap]
    confidences: list[ConfidenceMap]
    outlier_masks: list[np.ndarray]


def corrupt(pointmaps, noise: NoiseSpec, scale: float = 1.0) -> CorruptResult:
    """Add Gaussian noise and uniform outliers, and derive matching confidences.

    Noise has standard deviation ``noise.sigma * scale`` per axis. Outliers
    are drawn uniformly from the bounding box of all valid points. With
    ``confidence_correlated`` the confidence is ``1 + exp(2 - r / rho)``,
    ``r`` the displacement and ``rho`` the noise level, so clean points get
    high values and outliers values near 1; otherwise every confidence is 2.
    """
    rng = np.random.default_rng([noise.seed, 11])
    pts_all = np.concatenate([pm.valid_points() for pm in pointmaps])
    lo, hi = pts_all.min(axis=0), pts_all.max(axis=0)
    rho = max(noise.sigma, 1e-3) * scale
    out, confs, masks = [], [], []
    for pm in pointmaps:
        H, W = pm.shape
        p = np.array(pm.points)
        delta = rng.normal(scale=noise.sigma * scale, size=p.shape) if noise.sigma > 0 else np.zeros(p.shape)
        outl = (rng.random((H, W)) < noise.outlier_fraction) & pm.valid
        repl = rng.uniform(lo, hi, size=p.shape)
        noisy = np.where(outl[..., None], repl, p + delta)
        noisy[~pm.valid] = np.nan
        r = np.linalg.norm(np.where(pm.valid[..., None], noisy - p, 0.0), axis=-1)
        if noise.confidence_correlated:
            c = 1.0 + np.exp(2.0 - r / rho)
        else:
            c = np.full((H, W), 2.0)
        c[~pm.valid] = 1.0
        out.append(PointMap(noisy, pm.valid, pm.frame))
        confs.append(ConfidenceMap(c))
        masks.append(outl)
    return CorruptResult(out, confs, masks)


def end_to_end_case(
    scene: SceneSpec = SceneSpec(),
    traj: TrajectorySpec = TrajectorySpec(),
    noise: NoiseSpec = NoiseSpec(),
    **pipeline_kwargs,
):
    """Generate, corrupt, run the estimation pipeline and score it against ground truth.

    Returns ``(MetricReport, estimated Trajectory, SyntheticCase)``.
    """
    from .metrics import Mode, metric_report, pairwise_errors
    from .pipeline import estimate_trajectory

    case = generate(scene, traj)
    if noise.sigma > 0 or noise.outlier_fraction > 0:
        ref = corrupt(case.ref_maps, noise)
        own = corrupt(case.self_maps, NoiseSpec(noise.sigma, noise.outlier_fraction,
                                                noise.confidence_correlated, noise.seed + 10_000))
        ref_maps, self_maps = ref.pointmaps, own.pointmaps
        confs = [ConfidenceMap(np.minimum(a.values, b.values)) for a, b in zip(ref.confidences, own.confidences)]
    else:
        ref_maps, self_maps, confs = case.ref_maps, case.self_maps, None
    est, _ = estimate_trajectory(ref_maps, self_maps, confs, **pipeline_kwargs)
    samples = pairwise_errors(est, case.trajectory, Mode.ALL_PAIRS)
    return metric_report(samples), est, case
