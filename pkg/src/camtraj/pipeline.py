"""Point maps in, first-frame-relative trajectory out."""

from __future__ import annotations

from typing import Sequence

from .geometry import ConfidenceMap, PointMap, Trajectory
from .pose_recovery import Method, RansacConfig, recover_pairs
from .registration import OptimizerConfig, RegistrationResult, build_problem, optimize


def estimate_trajectory(
    ref_maps: Sequence[PointMap],
    self_maps: Sequence[PointMap | None] | None = None,
    confidences: Sequence[ConfidenceMap | None] | None = None,
    method: Method | str = Method.PROCRUSTES,
    weights: tuple[float, float] = (1.0, 1.0),
    focal: float | None = None,
    optimizer: OptimizerConfig = OptimizerConfig(),
    ransac: RansacConfig = RansacConfig(),
    timestamps=None,
) -> tuple[Trajectory, RegistrationResult]:
    """Pairwise recovery for every ``(0 -> f)`` followed by global registration.

    ``weights`` is ``(w_fl, w_tranl)``.
    """
    focal, pairs = recover_pairs(ref_maps, self_maps, confidences, method, focal, ransac)
    problem = build_problem(ref_maps, confidences, pairs, weights, self_maps, focal, timestamps)
    result = optimize(problem, optimizer)
    return result.trajectory, result
