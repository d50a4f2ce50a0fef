"""Readers and writers: camera annotation files, point-map containers, trajectories.

Also holds the seeded frame and pair samplers used to build training-style
clips from longer sequences.
"""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CorruptFileError, InputError, ParseError
from .geometry import (
    ConfidenceMap,
    Convention,
    Intrinsics,
    PointMap,
    Pose,
    Trajectory,
    is_rotation,
    rotation_from_quaternion,
    rotation_to_quaternion,
)

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# camera annotation files

CAMERA_FIELDS = 19


@dataclass(frozen=True)
class CameraFileRecord:
    timestamp: int  # microseconds
    intrinsics: Intrinsics
    pose: Pose  # camera-from-world, relative to the first record


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def parse_camera_file(
    text: str,
    width: int,
    height: int,
    convention: Convention = Convention.CAMERA_FROM_WORLD,
) -> list[CameraFileRecord]:
    """Parse a RealEstate10K-style camera file.

    Each record line holds ``timestamp fx fy cx cy r0 r1`` followed by a
    row-major 3x4 extrinsic matrix, with intrinsics normalised by the image
    size. A leading non-numeric line (the source URL) is skipped. The
    extrinsics are read in ``convention`` and returned as camera-from-world
    poses relative to the first record.

    Raises:
        ParseError: wrong field count, non-numeric or non-finite values,
            non-positive focal, or an extrinsic that is not a rigid motion.
    """
    if width <= 0 or height <= 0:
        raise InputError("image dimensions must be positive")
    rows = []
    seen_record = skipped_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        toks = line.split()
        if not seen_record and not _is_number(toks[0]):
            if skipped_header:
                raise ParseError("unexpected second header line", lineno)
            skipped_header = True
            continue  # source URL
        seen_record = True
        if len(toks) != CAMERA_FIELDS:
            raise ParseError(f"expected {CAMERA_FIELDS} fields, found {len(toks)}", lineno)
        try:
            ts = int(toks[0])
        except ValueError:
            raise ParseError(f"timestamp {toks[0]!r} is not an integer", lineno) from None
        try:
            vals = np.array([float(t) for t in toks[1:]])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not np.all(np.isfinite(vals)):
            raise ParseError("non-finite value", lineno)
        fx, fy, cx, cy = vals[:4]
        if fx <= 0 or fy <= 0:
            raise ParseError("normalised focal lengths must be positive", lineno)
        if vals[4] != 0 or vals[5] != 0:
            log.warning("line %d: reserved fields are non-zero (%g, %g)", lineno, vals[4], vals[5])
        T = vals[6:].reshape(3, 4)
        if not is_rotation(T[:, :3], 1e-6):
            raise ParseError("extrinsic rotation is not orthonormal", lineno)
        K = Intrinsics(fx * width, fy * height, cx * width, cy * height, width, height)
        rows.append((ts, K, Pose(T[:, :3], T[:, 3], convention).canonical()))
    if not rows:
        raise ParseError("no camera records found")
    first_inv = rows[0][2].inverse()
    out = []
    for k, (ts, K, pose) in enumerate(rows):
        rel = Pose.identity() if k == 0 else pose.compose(first_inv)
        out.append(CameraFileRecord(ts, K, rel))
    return out


def format_camera_file(
    timestamps: Sequence[int],
    intrinsics: Sequence[Intrinsics],
    poses: Sequence[Pose],
    url: str | None = None,
) -> str:
    """Inverse of :func:`parse_camera_file` for camera-from-world poses."""
    if not len(timestamps) == len(intrinsics) == len(poses):
        raise InputError("timestamps, intrinsics and poses must align")
    lines = [url] if url else []
    for ts, K, pose in zip(timestamps, intrinsics, poses):
        T = pose.canonical().matrix()[:3]
        vals = [K.fx / K.width, K.fy / K.height, K.cx / K.width, K.cy / K.height, 0.0, 0.0]
        vals += T.ravel().tolist()
        lines.append(" ".join([str(int(ts))] + [repr(float(v)) for v in vals]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# point-map container
#
# header: magic, version u16, width u32, height u32, flags u16, ref frame u32
# payload: float32 LE points (H*W*3), then float32 LE confidences (H*W)
# trailer: CRC32 (u32) of the payload

MAGIC = b"PMAP"
VERSION = 1
FLAG_CONFIDENCE = 0x1
_HEADER = struct.Struct("<4sHIIHI")
_CRC = struct.Struct("<I")


def encode_pointmap(pm: PointMap, confidence: ConfidenceMap | None = None) -> bytes:
    H, W = pm.shape
    pts = np.where(pm.valid[..., None], pm.points, np.nan).astype("<f4")
    payload = pts.tobytes(order="C")
    flags = 0
    if confidence is not None:
        if confidence.shape != (H, W):
            raise InputError("confidence map does not match the point map")
        payload += np.asarray(confidence.values, dtype="<f4").tobytes(order="C")
        flags |= FLAG_CONFIDENCE
    header = _HEADER.pack(MAGIC, VERSION, W, H, flags, int(pm.frame))
    return header + payload + _CRC.pack(zlib.crc32(payload))


def decode_pointmap(data: bytes) -> tuple[PointMap, ConfidenceMap | None]:
    """Decode a container; the inverse of :func:`encode_pointmap`.

    Raises:
        CorruptFileError: bad magic, unsupported version or flags, wrong
            length, or CRC mismatch.
    """
    if len(data) < _HEADER.size + _CRC.size:
        raise CorruptFileError("file too short for a point-map header")
    magic, version, W, H, flags, frame = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptFileError(f"bad magic {magic!r}")
    if version > VERSION or version == 0:
        raise CorruptFileError(f"unsupported version {version} (reader supports {VERSION})")
    if flags & ~FLAG_CONFIDENCE:
        raise CorruptFileError(f"unknown flags 0x{flags:04x}")
    if W == 0 or H == 0:
        raise CorruptFileError("zero image dimension")
    n_pts = H * W * 3 * 4
    n_conf = H * W * 4 if flags & FLAG_CONFIDENCE else 0
    expected = _HEADER.size + n_pts + n_conf + _CRC.size
    if len(data) != expected:
        raise CorruptFileError(f"expected {expected} bytes, found {len(data)}")
    payload = data[_HEADER.size : expected - _CRC.size]
    (crc,) = _CRC.unpack_from(data, expected - _CRC.size)
    if zlib.crc32(payload) != crc:
        raise CorruptFileError("CRC mismatch")
    pts = np.frombuffer(payload, dtype="<f4", count=H * W * 3).reshape(H, W, 3)
    pm = PointMap(pts.astype(float), frame=frame)
    conf = None
    if n_conf:
        vals = np.frombuffer(payload, dtype="<f4", offset=n_pts).reshape(H, W)
        try:
            conf = ConfidenceMap(vals.astype(float))
        except InputError as exc:
            raise CorruptFileError(f"invalid confidence values: {exc}") from None
    return pm, conf


def write_pointmap(path, pm: PointMap, confidence: ConfidenceMap | None = None) -> None:
    Path(path).write_bytes(encode_pointmap(pm, confidence))


def read_pointmap(path) -> tuple[PointMap, ConfidenceMap | None]:
    return decode_pointmap(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# trajectory text


def _num(v: float) -> str:
    return f"{float(v) + 0.0:.9g}"  # + 0.0 turns -0 into 0


def format_trajectory(traj: Trajectory) -> str:
    """One line per frame: ``timestamp tx ty tz qx qy qz qw focal``.

    ``t`` and the quaternion describe the camera-from-world pose relative to
    the first frame. Values use 9 significant digits.
    """
    lines = []
    for ts, pose, f in zip(traj.timestamps, traj.poses, traj.focals):
        q = rotation_to_quaternion(pose.rotation)
        cells = [ts, *pose.translation, *q, f]
        lines.append(" ".join(_num(v) for v in cells))
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str) -> Trajectory:
    """Inverse of :func:`format_trajectory`. Blank lines and ``#`` comments are ignored."""
    ts, poses, focals = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) != 9:
            raise ParseError(f"expected 9 fields, found {len(toks)}", lineno)
        try:
            vals = [float(t) for t in toks]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", lineno)
        q = np.array(vals[4:8])
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ParseError("quaternion is not unit length", lineno)
        if vals[8] <= 0:
            raise ParseError("focal must be positive", lineno)
        ts.append(vals[0])
        poses.append(Pose(rotation_from_quaternion(q), vals[1:4]))
        focals.append(vals[8])
    if not poses:
        raise ParseError("trajectory file is empty")
    try:
        return Trajectory(tuple(poses), focals, ts)
    except InputError as exc:
        raise ParseError(str(exc)) from None


def write_trajectory(path, traj: Trajectory) -> None:
    Path(path).write_text(format_trajectory(traj))


def read_trajectory(path) -> Trajectory:
    return parse_trajectory(Path(path).read_text())


# ---------------------------------------------------------------------------
# clip sampling


@dataclass(frozen=True)
class SamplingSpec:
    frames: int = 16
    strides: tuple[int, ...] = (1, 2, 4, 8)
    reverse_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.frames < 2:
            raise InputError("a clip needs at least two frames")
        if not self.strides or any(int(s) != s or s < 1 for s in self.strides):
            raise InputError("strides must be positive integers")
        if not 0.0 <= self.reverse_prob <= 1.0:
            raise InputError("reverse probability must lie in [0, 1]")


def sample_frames(num_available: int, spec: SamplingSpec = SamplingSpec()) -> list[int]:
    """Evenly strided clip of ``spec.frames`` indices, possibly reversed.

    The stride is drawn uniformly from the strides whose span fits in the
    sequence, then the start uniformly from the feasible range.
    """
    F = spec.frames
    if num_available < F:
        raise InputError(f"sequence has {num_available} frames, clip needs {F}")
    feasible = [s for s in spec.strides if (F - 1) * s < num_available]
    if not feasible:
        raise InputError("no stride fits the sequence")
    rng = np.random.default_rng(spec.seed)
    stride = int(feasible[rng.integers(len(feasible))])
    start = int(rng.integers(num_available - (F - 1) * stride))
    idx = list(range(start, start + (F - 1) * stride + 1, stride))
    if rng.random() < spec.reverse_prob:
        idx.reverse()
    return idx


def sample_pairs(frames: int, k: int = 4, seed: int = 0) -> list[tuple[int, int]]:
    """``k`` distinct first-frame pairs ``(0, f)``, ``f`` in ``1..frames-1``, sorted by ``f``."""
    if k < 1:
        raise InputError("k must be positive")
    if frames < k + 1:
        raise InputError(f"{frames} frames cannot provide {k} distinct pairs")
    rng = np.random.default_rng(seed)
    picks = rng.choice(np.arange(1, frames), size=k, replace=False)
    return [(0, int(f)) for f in sorted(picks)]

