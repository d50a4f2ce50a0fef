"""Pairwise pose and focal recovery from pixel-aligned point maps.

For a pair ``(0 -> f)`` the inputs are the frame-``f`` pixels expressed in the
first camera (``ref`` map) and, when available, the same pixels expressed in
camera ``f`` itself (``self`` map). A weighted similarity Procrustes between
the two gives camera ``f`` directly; without a self map, PnP-RANSAC against
the pixel grid does.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateGeometryError, InputError
from .geometry import (
    ConfidenceMap,
    Intrinsics,
    PointMap,
    Pose,
    pixel_grid,
    rotation_from_axis_angle,
    rotation_to_axis_angle,
)

log = logging.getLogger(__name__)


class Method(enum.Enum):
    PROCRUSTES = "procrustes"
    PNP_RANSAC = "pnp"


@dataclass(frozen=True)
class PairEstimate:
    """Camera ``f`` from camera 0, with the scale mapping the pair's ``ref`` map into camera ``f`` units.

    ``pose.apply(scale * x_ref)`` lands in camera-``f`` coordinates.
    """

    pose: Pose
    scale: float = 1.0
    focal: float | None = None
    inlier_ratio: float = 1.0
    method: Method = Method.PROCRUSTES
    residual: float = 0.0
    low_confidence: bool = False

    def __post_init__(self):
        if not self.scale > 0:
            raise InputError(f"pair scale must be positive, got {self.scale}")
        if not 0.0 <= self.inlier_ratio <= 1.0:
            raise InputError("inlier_ratio must lie in [0, 1]")
        if self.focal is not None and not self.focal > 0:
            raise InputError("focal must be positive")


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    threshold: float | None = None  # pixels; None -> 2 px per 512 px of width
    min_sample: int = 6
    seed: int = 0
    confidence: float = 0.999

    def __post_init__(self):
        if self.iterations < 1:
            raise InputError("RANSAC needs at least one iteration")
        if self.min_sample < 6:
            # the linear solver needs 6 correspondences (>= the 4 a minimal PnP needs)
            raise InputError("min_sample must be at least 6 for the linear PnP solver")

    def threshold_for(self, width: int) -> float:
        if self.threshold is not None:
            return float(self.threshold)
        return 2.0 * width / 512.0


# ---------------------------------------------------------------------------
# focal


def _centered_pixels(pm: PointMap, pp):
    uv = pixel_grid(pm.width, pm.height)
    if pp is None:
        pp = (pm.width / 2.0, pm.height / 2.0)
    return uv - np.asarray(pp, dtype=float)


def estimate_focal(
    pm: PointMap,
    image_dims: tuple[int, int] | None = None,
    pp=None,
    max_iters: int = 50,
    tol: float = 1e-6,
    damping: float = 0.5,
) -> float:
    """Focal length of the camera a self point map was observed in.

    Minimises ``sum_i ||p_i - f * (x_i/z_i, y_i/z_i)||`` over ``f`` with
    damped Weiszfeld reweighting, starting from the least-squares solution.
    ``p_i`` are pixel coordinates relative to the principal point ``pp``
    (image centre by default).
    """
    if image_dims is not None and tuple(image_dims) != (pm.width, pm.height):
        raise InputError(f"image dims {image_dims} do not match point map {pm.width}x{pm.height}")
    px = _centered_pixels(pm, pp)
    mask = pm.valid & (pm.points[..., 2] > 0)
    if not mask.any():
        raise DegenerateGeometryError("no point with positive depth")
    if mask.sum() < 16:
        raise InputError(f"need at least 16 valid points, got {int(mask.sum())}")
    p = px[mask]
    pts = pm.points[mask]
    q = pts[:, :2] / pts[:, 2:3]
    pq = np.sum(p * q, axis=-1)
    qq = np.sum(q * q, axis=-1)
    if qq.sum() <= 0:
        raise DegenerateGeometryError("all points lie on the optical axis")

    def cost(f):
        return float(np.linalg.norm(p - f * q, axis=-1).sum())

    f = float(pq.sum() / qq.sum())
    best_f, best_c = f, cost(f)
    for _ in range(max_iters):
        dist = np.linalg.norm(p - f * q, axis=-1)
        w = 1.0 / np.maximum(dist, 1e-9)
        f_new = f + damping * (float((w * pq).sum() / (w * qq).sum()) - f)
        c = cost(f_new)
        if c < best_c:
            best_f, best_c = f_new, c
        step = abs(f_new - f) / abs(f)
        f = f_new
        if step < tol:
            break
    else:
        warnings.warn("focal estimation did not converge; returning best iterate", stacklevel=2)
    if not best_f > 0:
        raise DegenerateGeometryError(f"estimated focal {best_f} is not positive")
    return best_f


# ---------------------------------------------------------------------------
# Procrustes


def _weights(w, mask):
    if w is None:
        return np.ones(int(mask.sum()))
    if isinstance(w, ConfidenceMap):
        w = w.values
    w = np.asarray(w, dtype=float)
    return w[mask]


def similarity_transform(a, b, w=None):
    """Weighted least-squares ``(s, R, t)`` with ``b ~ s R a + t`` (Umeyama).

    Raises :class:`DegenerateGeometryError` for fewer than 3 points or
    collinear configurations.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 3:
        raise DegenerateGeometryError(f"need at least 3 correspondences, got {len(a)}")
    w = np.ones(len(a)) if w is None else np.asarray(w, dtype=float)
    w = w / w.sum()
    mu_a = w @ a
    mu_b = w @ b
    da = a - mu_a
    db = b - mu_b
    sa = np.linalg.svd(da * np.sqrt(w)[:, None], compute_uv=False)
    if sa[0] <= 0 or sa[1] <= 1e-10 * sa[0]:
        raise DegenerateGeometryError("points are collinear or coincident")
    cov = (db * w[:, None]).T @ da
    U, S, Vt = np.linalg.svd(cov)
    if S[1] <= 1e-12 * max(S[0], 1e-300):
        raise DegenerateGeometryError("cross-covariance is rank deficient")
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[2] = -1.0
    R = U @ np.diag(d) @ Vt
    var_a = float(w @ np.sum(da * da, axis=1))
    s = float(S @ d) / var_a
    t = mu_b - s * R @ mu_a
    return s, R, t


def procrustes_pose(pm_a: PointMap, pm_b: PointMap, confidence=None) -> PairEstimate:
    """Similarity transform taking ``pm_a`` onto the pixel-corresponding ``pm_b``.

    The returned pose and scale satisfy ``b ~ pose.apply(scale * a)``;
    ``residual`` is the weighted RMS alignment error.
    """
    if pm_a.shape != pm_b.shape:
        raise InputError("point maps must share dimensions")
    mask = pm_a.valid & pm_b.valid
    a = pm_a.points[mask]
    b = pm_b.points[mask]
    w = _weights(confidence, mask)
    s, R, t = similarity_transform(a, b, w)
    r = b - (s * a @ R.T + t)
    resid = float(np.sqrt(np.sum(w * np.sum(r * r, axis=1)) / np.sum(w)))
    # pose.apply(s * a) = R s a + t
    return PairEstimate(Pose(R, t), scale=s, method=Method.PROCRUSTES, residual=resid)


# ---------------------------------------------------------------------------
# PnP


def _dlt_pnp(X, xn):
    """Linear pose from >= 6 points and normalised image coordinates."""
    mu = X.mean(axis=0)
    sc = np.sqrt(2.0) / max(np.linalg.norm(X - mu, axis=1).mean(), 1e-12)
    Xh = np.hstack([(X - mu) * sc, np.ones((len(X), 1))])
    n = len(X)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:2] * Xh
    _, _, Vt = np.linalg.svd(A)
    P = Vt[-1].reshape(3, 4)
    # undo the 3D normalisation: P_world = P_norm @ [[sc I, -sc mu], [0, 1]]
    T = np.eye(4)
    T[:3, :3] *= sc
    T[:3, 3] = -sc * mu
    P = P @ T
    if np.sum((X @ P[2, :3] + P[2, 3]) > 0) < n / 2:
        P = -P
    U, S, Vt = np.linalg.svd(P[:, :3])
    R = U @ Vt
    if np.linalg.det(R) < 0:
        raise DegenerateGeometryError("linear PnP produced a reflection")
    t = P[:, 3] / S.mean()
    return R, t


def _reproj(R, t, X, K):
    c = X @ R.T + t
    z = c[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([K.fx * c[:, 0] / z + K.cx, K.fy * c[:, 1] / z + K.cy], axis=1)
    return uv, z


def _reproj_error(R, t, X, uv, K):
    pred, z = _reproj(R, t, X, K)
    err = np.linalg.norm(pred - uv, axis=1)
    err[~(z > 0) | ~np.isfinite(err)] = np.inf
    return err


def _refine(R, t, X, uv, K, w):
    sw = np.sqrt(w)[:, None]

    def fun(x):
        pred, _ = _reproj(rotation_from_axis_angle(x[:3]) @ R, x[3:], X, K)
        return ((pred - uv) * sw).ravel()

    x0 = np.concatenate([np.zeros(3), t])
    res = least_squares(fun, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    R_new = rotation_from_axis_angle(res.x[:3]) @ R
    return R_new, res.x[3:], float(np.sum(res.fun**2))


def solve_pnp(points3d, pixels, K: Intrinsics, weights=None):
    """Linear PnP followed by weighted Levenberg-Marquardt on reprojection error.

    Returns ``(R, t)`` of the camera-from-world pose.
    """
    X = np.asarray(points3d, dtype=float)
    uv = np.asarray(pixels, dtype=float)
    if len(X) < 6:
        raise InputError(f"PnP needs at least 6 correspondences, got {len(X)}")
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    xn = np.stack([(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy], axis=1)
    R, t = _dlt_pnp(X, xn)
    R, t, _ = _refine(R, t, X, uv, K, w)
    return R, t


def _sample(n, k, seed, it):
    rng = np.random.default_rng([seed, it])
    return np.sort(rng.choice(n, size=k, replace=False))


def pnp_ransac_pose(
    pm_ref: PointMap,
    pixels_f=None,
    K_f: Intrinsics | None = None,
    cfg: RansacConfig = RansacConfig(),
    confidence=None,
) -> PairEstimate:
    """Robust camera-``f``-from-camera-0 pose from 3D points and their pixels in frame ``f``.

    ``pixels_f`` defaults to the pixel grid of ``pm_ref`` (pixel-aligned maps).
    Each iteration draws its sample from ``(seed, iteration)``, so the result
    is independent of evaluation order. Hypotheses are ranked by inlier count,
    then by inlier reprojection residual, then by iteration index.
    """
    if K_f is None:
        raise InputError("intrinsics are required for PnP")
    if pixels_f is None:
        pixels_f = pixel_grid(pm_ref.width, pm_ref.height)
    pixels_f = np.asarray(pixels_f, dtype=float)
    if pixels_f.shape[:2] != pm_ref.shape:
        raise InputError("pixel array does not match the point map")
    mask = pm_ref.valid & np.all(np.isfinite(pixels_f), axis=-1)
    X = pm_ref.points[mask]
    uv = pixels_f[mask]
    w = _weights(confidence, mask)
    n = len(X)
    k = cfg.min_sample
    if n < k:
        raise InputError(f"{n} correspondences, need at least {k}")
    thr = cfg.threshold_for(K_f.width)
    xn = np.stack([(uv[:, 0] - K_f.cx) / K_f.fx, (uv[:, 1] - K_f.cy) / K_f.fy], axis=1)

    best = None  # (-count, residual, iteration, R, t)
    needed = cfg.iterations
    it = 0
    while it < min(cfg.iterations, needed):
        idx = _sample(n, k, cfg.seed, it)
        try:
            R, t = _dlt_pnp(X[idx], xn[idx])
        except (DegenerateGeometryError, np.linalg.LinAlgError):
            it += 1
            continue
        err = _reproj_error(R, t, X, uv, K_f)
        inl = err < thr
        cnt = int(inl.sum())
        key = (-cnt, float(np.sum(err[inl] ** 2)), it)
        if best is None or key < best[:3]:
            best = key + (R, t)
            ratio = cnt / n
            if ratio >= 1.0:
                needed = it + 1
            elif math.log1p(-(ratio**k)) < 0:
                needed = min(
                    cfg.iterations,
                    int(math.ceil(math.log(1 - cfg.confidence) / math.log1p(-(ratio**k)))),
                )
        it += 1
    if best is None:
        raise DegenerateGeometryError("no RANSAC hypothesis could be formed")

    R, t = best[3], best[4]
    inl = _reproj_error(R, t, X, uv, K_f) < thr
    if inl.sum() >= k:
        R, t, _ = _refine(R, t, X[inl], uv[inl], K_f, w[inl])
        err = _reproj_error(R, t, X, uv, K_f)
        inl = err < thr
    ratio = float(inl.sum()) / n
    resid = float(np.sqrt(np.mean(_reproj_error(R, t, X[inl], uv[inl], K_f) ** 2))) if inl.any() else math.inf
    low = ratio < 0.1
    if low:
        log.warning("PnP-RANSAC inlier ratio %.3f below 0.1", ratio)
    return PairEstimate(
        Pose(R, t),
        scale=1.0,
        focal=K_f.focal,
        inlier_ratio=ratio,
        method=Method.PNP_RANSAC,
        residual=resid,
        low_confidence=low,
    )


# ---------------------------------------------------------------------------
# all pairs of a star graph


def recover_pairs(
    ref_maps: Sequence[PointMap],
    self_maps: Sequence[PointMap | None] | None = None,
    confidences: Sequence[ConfidenceMap | None] | None = None,
    method: Method | str = Method.PROCRUSTES,
    focal: float | None = None,
    ransac: RansacConfig = RansacConfig(),
) -> tuple[float, dict[int, PairEstimate]]:
    """Estimate every ``(0 -> f)`` pair.

    ``ref_maps[f]`` holds frame-``f`` pixels in camera-0 coordinates;
    ``ref_maps[0]`` is the first camera's own map and sets the focal.
    Procrustes is used when a self map exists for the frame, otherwise PnP.
    """
    method = Method(method)
    F = len(ref_maps)
    if F < 2:
        raise InputError("need at least two frames")
    self_maps = list(self_maps) if self_maps is not None else [None] * F
    confidences = list(confidences) if confidences is not None else [None] * F
    if len(self_maps) != F or len(confidences) != F:
        raise InputError("self maps and confidences must align with the reference maps")
    if focal is None:
        focal = estimate_focal(ref_maps[0])
    K = Intrinsics.from_focal(focal, ref_maps[0].width, ref_maps[0].height)
    out: dict[int, PairEstimate] = {}
    for f in range(1, F):
        if ref_maps[f].shape != ref_maps[0].shape:
            raise InputError(f"frame {f} point map has different dimensions")
        if method is Method.PROCRUSTES and self_maps[f] is not None:
            est = procrustes_pose(ref_maps[f], self_maps[f], confidences[f])
            est = PairEstimate(est.pose, est.scale, focal, 1.0, est.method, est.residual)
        else:
            est = pnp_ransac_pose(ref_maps[f], None, K, ransac, confidences[f])
        out[f] = est
    return focal, out
