"""Core geometric types: rotations, rigid poses, pinhole intrinsics, point/depth/confidence maps.

Rotations are plain ``(3, 3)`` float arrays. Poses are immutable rigid maps
``x -> R @ x + t`` tagged with the direction they map in; the canonical
direction is camera-from-world. Pixel ``(u, v)`` means column ``u``, row ``v``,
with pixel centres at integer coordinates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import InputError

ORTHO_TOL = 1e-9


# ---------------------------------------------------------------------------
# rotations


def hat(w):
    """Skew-symmetric matrix with ``hat(w) @ x == cross(w, x)``."""
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rotation_from_axis_angle(rotvec) -> np.ndarray:
    """Rodrigues formula; ``rotvec`` is axis * angle in radians."""
    rotvec = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(rotvec))
    if theta < 1e-12:
        # second-order expansion keeps the result orthonormal to ~1e-24
        K = hat(rotvec)
        return np.eye(3) + K + 0.5 * K @ K
    K = hat(rotvec / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * K @ K


def rotation_to_axis_angle(R) -> np.ndarray:
    return _ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def rotation_from_quaternion(q) -> np.ndarray:
    """Quaternion in ``(qx, qy, qz, qw)`` order; normalised before use."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise InputError(f"quaternion {q} has zero or non-finite norm")
    return _ScipyRotation.from_quat(q / n).as_matrix()


def rotation_to_quaternion(R) -> np.ndarray:
    """Unit quaternion ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
    q = _ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    if q[3] < 0:
        q = -q
    return q


def orthonormalize(R) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.abs(R.T @ R - np.eye(3)).max() <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def relative_rotation_angle(Ra, Rb) -> float:
    """Geodesic angle between two rotations, in degrees, within ``[0, 180]``.

    Equal to ``arccos((trace(Ra^T Rb) - 1) / 2)``, evaluated through atan2 of
    the sine and cosine parts so small angles keep full precision.
    """
    R = np.asarray(Ra, dtype=float).T @ np.asarray(Rb, dtype=float)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    sin = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.degrees(np.arctan2(sin, cos)))


# ---------------------------------------------------------------------------
# poses


class Convention(enum.Enum):
    CAMERA_FROM_WORLD = "camera_from_world"
    WORLD_FROM_CAMERA = "world_from_camera"

    def flipped(self) -> "Convention":
        if self is Convention.CAMERA_FROM_WORLD:
            return Convention.WORLD_FROM_CAMERA
        return Convention.CAMERA_FROM_WORLD


def _frozen(a, shape, name):
    a = np.array(a, dtype=float)
    if a.shape != shape:
        raise InputError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite values")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid map ``x -> rotation @ x + translation``.

    ``convention`` records which direction the map goes. :meth:`inverse`
    flips it, so ``pose.inverse()`` describes the same camera in the other
    convention.
    """

    rotation: np.ndarray
    translation: np.ndarray
    convention: Convention = Convention.CAMERA_FROM_WORLD

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3), "rotation")
        if not is_rotation(R, 1e-6):
            raise InputError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _frozen(self.translation, (3,), "translation"))

    @classmethod
    def identity(cls, convention: Convention = Convention.CAMERA_FROM_WORLD) -> "Pose":
        return cls(np.eye(3), np.zeros(3), convention)

    @classmethod
    def from_matrix(cls, T, convention: Convention = Convention.CAMERA_FROM_WORLD) -> "Pose":
        T = np.asarray(T, dtype=float)
        if T.shape not in ((3, 4), (4, 4)):
            raise InputError(f"pose matrix must be 3x4 or 4x4, got {T.shape}")
        return cls(T[:3, :3], T[:3, 3], convention)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation, self.convention.flipped())

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first. Keeps ``self.convention``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            self.convention,
        )

    def as_convention(self, convention: Convention) -> "Pose":
        return self if convention is self.convention else self.inverse()

    def canonical(self) -> "Pose":
        return self.as_convention(Convention.CAMERA_FROM_WORLD)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape ``(..., 3)``."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return self.as_convention(Convention.WORLD_FROM_CAMERA).translation.copy()

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        other = other.as_convention(self.convention)
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def __repr__(self):
        rv = np.degrees(np.linalg.norm(rotation_to_axis_angle(self.rotation)))
        return f"Pose(rot={rv:.4f}deg, t={np.round(self.translation, 6).tolist()}, {self.convention.value})"


# ---------------------------------------------------------------------------
# intrinsics and image-space maps


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise InputError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise InputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InputError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def from_focal(cls, focal: float, width: int, height: int) -> "Intrinsics":
        """Single-focal camera with the principal point at the image centre."""
        return cls(float(focal), float(focal), width / 2.0, height / 2.0, int(width), int(height))

    @property
    def focal(self) -> float:
        return 0.5 * (self.fx + self.fy)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def pixel_grid(width: int, height: int) -> np.ndarray:
    """``(H, W, 2)`` array of ``(u, v)`` pixel coordinates."""
    u, v = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    return np.stack([u, v], axis=-1)


def camera_rays(K: Intrinsics) -> np.ndarray:
    """``K^-1 (u, v, 1)`` for every pixel, shape ``(H, W, 3)``."""
    uv = pixel_grid(K.width, K.height)
    return np.stack(
        [(uv[..., 0] - K.cx) / K.fx, (uv[..., 1] - K.cy) / K.fy, np.ones((K.height, K.width))],
        axis=-1,
    )


def project(points, K: Intrinsics):
    """Pinhole projection of camera-frame points ``(..., 3)``.

    Returns ``(uv, z)``; ``uv`` is undefined where ``z <= 0``.
    """
    points = np.asarray(points, dtype=float)
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * points[..., 0] / z + K.cx
        v = K.fy * points[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1), z


@dataclass(frozen=True, eq=False)
class PointMap:
    """Per-pixel 3D points expressed in the camera frame of frame ``frame``."""

    points: np.ndarray
    valid: np.ndarray | None = None
    frame: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise InputError(f"point map must be HxWx3, got {pts.shape}")
        if self.valid is None:
            valid = np.all(np.isfinite(pts), axis=-1)
        else:
            valid = np.array(self.valid, dtype=bool)
            if valid.shape != pts.shape[:2]:
                raise InputError(f"valid mask {valid.shape} does not match points {pts.shape[:2]}")
            if not np.all(np.isfinite(pts[valid])):
                raise InputError("valid point-map entries must be finite")
        pts.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.points.shape[:2]

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]

    def scaled(self, c: float) -> "PointMap":
        return PointMap(self.points * c, self.valid, self.frame)


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    values: np.ndarray

    def __post_init__(self):
        c = np.array(self.values, dtype=float)
        if c.ndim != 2:
            raise InputError(f"confidence map must be HxW, got {c.shape}")
        if not np.all(np.isfinite(c)) or np.any(c < 1.0):
            raise InputError("confidence values must be finite and >= 1")
        c.flags.writeable = False
        object.__setattr__(self, "values", c)

    @classmethod
    def ones(cls, height: int, width: int) -> "ConfidenceMap":
        return cls(np.ones((height, width)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth along the optical axis; 0 marks an invalid pixel."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.array(self.depth, dtype=float)
        if d.ndim != 2:
            raise InputError(f"depth map must be HxW, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InputError("depth map contains NaN or inf")
        if np.any(d < 0):
            raise InputError("depth map contains negative values")
        d.flags.writeable = False
        object.__setattr__(self, "depth", d)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-frame camera-from-world poses relative to the first frame, with focals."""

    poses: tuple[Pose, ...]
    focals: np.ndarray
    timestamps: np.ndarray = field(default=None)

    def __post_init__(self):
        poses = tuple(p.canonical() for p in self.poses)
        if len(poses) < 1:
            raise InputError("trajectory needs at least one frame")
        focals = np.array(self.focals, dtype=float).reshape(-1)
        if focals.shape != (len(poses),):
            raise InputError("one focal per frame required")
        if not np.all(np.isfinite(focals)) or np.any(focals <= 0):
            raise InputError("focals must be positive and finite")
        if self.timestamps is None:
            ts = np.arange(len(poses), dtype=float)
        else:
            ts = np.array(self.timestamps, dtype=float).reshape(-1)
            if ts.shape != (len(poses),):
                raise InputError("one timestamp per frame required")
        if not poses[0].allclose(Pose.identity(), atol=1e-6):
            raise InputError("first pose of a trajectory must be the identity")
        focals.flags.writeable = False
        ts.flags.writeable = False
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "focals", focals)
        object.__setattr__(self, "timestamps", ts)

    @classmethod
    def from_absolute(cls, poses: Sequence[Pose], focals, timestamps=None) -> "Trajectory":
        """Re-express arbitrary camera-from-world poses relative to the first one."""
        poses = [p.canonical() for p in poses]
        first_inv = poses[0].inverse()
        rel = [p.compose(first_inv) for p in poses]
        rel[0] = Pose.identity()
        return cls(tuple(rel), focals, timestamps)

    def __len__(self):
        return len(self.poses)

    @property
    def rotations(self) -> np.ndarray:
        return np.stack([p.rotation for p in self.poses])

    @property
    def translations(self) -> np.ndarray:
        return np.stack([p.translation for p in self.poses])

    @property
    def centers(self) -> np.ndarray:
        return np.stack([p.center for p in self.poses])


# ---------------------------------------------------------------------------
# operations


def unproject(depth: DepthMap, K: Intrinsics, cam_from_world: Pose, ref_from_world: Pose) -> PointMap:
    """Lift a depth map to 3D and express the points in a reference camera frame.

    Pixel ``(u, v)`` with depth ``d`` maps to
    ``ref_from_world(world_from_cam(d * K^-1 (u, v, 1)))``. Zero depths are
    masked out.
    """
    if depth.shape != (K.height, K.width):
        raise InputError(f"depth map {depth.shape} does not match intrinsics {K.height}x{K.width}")
    if cam_from_world.convention is not ref_from_world.convention:
        raise InputError("poses must share a convention")
    cam = camera_rays(K) * depth.depth[..., None]
    ref_from_cam = ref_from_world.compose(cam_from_world.inverse())
    pts = ref_from_cam.apply(cam)
    valid = depth.valid
    pts[~valid] = np.nan
    return PointMap(pts, valid)


def transform_pointmap(pm: PointMap, T: Pose, frame: int | None = None) -> PointMap:
    """Apply ``T`` to every valid point; the mask is carried over unchanged."""
    out = np.array(pm.points)
    out[pm.valid] = T.apply(pm.points[pm.valid])
    return PointMap(out, pm.valid, pm.frame if frame is None else frame)
