import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camtraj.errors import InputError
from camtraj.geometry import Pose, PointMap, Trajectory
from camtraj.metrics import (
    COLUMNS,
    MetricReport,
    Mode,
    PoseErrorSample,
    Which,
    accuracy_at,
    maa_30,
    metric_report,
    pairwise_errors,
    translation_angle,
    warp_consistency,
)

from conftest import axis_rotation, random_pose, seeds


def random_traj(rng, F=6):
    return Trajectory.from_absolute([random_pose(rng) for _ in range(F)], np.full(F, 50.0))


# -- independent oracles ------------------------------------------------------------------


def brute_force_errors(est, gt, pairs):
    """4x4 matrices, arccos formulas, explicit double loop."""
    out = []
    for i, j in pairs:
        rel = []
        for tr in (est, gt):
            Ti, Tj = tr.poses[i].matrix(), tr.poses[j].matrix()
            rel.append(Tj @ np.linalg.inv(Ti))
        A, B = rel
        cos_r = np.clip((np.trace(A[:3, :3].T @ B[:3, :3]) - 1) / 2, -1, 1)
        ta, tb = A[:3, 3], B[:3, 3]
        cos_t = np.clip(ta @ tb / (np.linalg.norm(ta) * np.linalg.norm(tb)), -1, 1)
        out.append((i, j, math.degrees(math.acos(cos_r)), math.degrees(math.acos(cos_t))))
    return out


def brute_acc(errors, tau):
    return 100.0 * sum(1 for e in errors if e < tau) / len(errors)


def brute_maa(rot, tr):
    total = 0.0
    for tau in range(1, 31):
        total += min(brute_acc(rot, tau), brute_acc(tr, tau))
    return total / 30


def sample(rot, tr):
    return PoseErrorSample(0, 1, rot, tr, math.isnan(tr))


# -- translation angle --------------------------------------------------------------------------


def test_translation_angle_examples():
    assert translation_angle([0, 0, 1], [0, 0, 1]) == 0.0
    assert translation_angle([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0, abs=1e-9)
    assert translation_angle([1, 1, 0], [1, 0, 0]) == pytest.approx(45.0, abs=1e-9)
    assert translation_angle([1, 0, 0], [-1, 0, 0]) == pytest.approx(180.0, abs=1e-9)


def test_translation_angle_degenerate():
    assert math.isnan(translation_angle([0, 0, 0], [1, 0, 0]))
    assert math.isnan(translation_angle([1, 0, 0], [1e-10, 0, 0]))


@given(seeds, st.floats(1e-3, 1e3))
def test_translation_angle_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    t, g = rng.normal(size=(2, 3))
    assert translation_angle(c * t, g) == pytest.approx(translation_angle(t, g), abs=1e-9)


@given(seeds)
def test_translation_angle_matches_arccos(seed):
    t, g = np.random.default_rng(seed).normal(size=(2, 3))
    ref = math.degrees(math.acos(np.clip(t @ g / np.linalg.norm(t) / np.linalg.norm(g), -1, 1)))
    assert translation_angle(t, g) == pytest.approx(ref, abs=1e-6)


# -- pairwise errors ------------------------------------------------------------------------------


def test_pairwise_identical_is_zero(rng):
    t = random_traj(rng)
    for s in pairwise_errors(t, t):
        assert s.rotation_error == pytest.approx(0.0, abs=1e-9)
        assert s.translation_error == pytest.approx(0.0, abs=1e-6)


def test_pair_enumeration_modes(rng):
    t = random_traj(rng, 5)
    assert [(s.i, s.j) for s in pairwise_errors(t, t, Mode.ALL_PAIRS)] == [(i, j) for i in range(5) for j in range(i + 1, 5)]
    assert [(s.i, s.j) for s in pairwise_errors(t, t, "star")] == [(0, j) for j in range(1, 5)]


@given(seeds)
@settings(max_examples=30)
def test_pairwise_gauge_invariance(seed):
    rng = np.random.default_rng(seed)
    abs_est = [random_pose(rng) for _ in range(4)]
    abs_gt = [random_pose(rng) for _ in range(4)]
    G = random_pose(rng)
    moved_est = [p.compose(G) for p in abs_est]
    moved_gt = [p.compose(G) for p in abs_gt]
    f = np.full(4, 1.0)

    def errs(e, g):
        # pairwise errors on raw (non-first-relative) poses via the relative construction
        return [(s.rotation_error, s.translation_error) for s in pairwise_errors(
            Trajectory.from_absolute(e, f), Trajectory.from_absolute(g, f))]

    np.testing.assert_allclose(errs(abs_est, abs_gt), errs(moved_est, moved_gt), atol=1e-6)


@pytest.mark.parametrize("F", [3, 6])
def test_pairwise_matches_brute_force(F):
    rng = np.random.default_rng(F)
    est, gt = random_traj(rng, F), random_traj(rng, F)
    ours = pairwise_errors(est, gt)
    ref = brute_force_errors(est, gt, [(i, j) for i in range(F) for j in range(i + 1, F)])
    for s, (i, j, r, t) in zip(ours, ref):
        assert (s.i, s.j) == (i, j)
        assert s.rotation_error == pytest.approx(r, abs=1e-9)
        assert s.translation_error == pytest.approx(t, abs=1e-9)


def test_pairwise_length_mismatch(rng):
    with pytest.raises(InputError):
        pairwise_errors(random_traj(rng, 3), random_traj(rng, 4))


def test_pairwise_degenerate_flag():
    I = Pose.identity()
    t = Trajectory((I, Pose(axis_rotation([0, 1, 0], 3.0), np.zeros(3))), [1.0, 1.0])
    (s,) = pairwise_errors(t, t)
    assert s.degenerate and math.isnan(s.translation_error)


# -- accuracy / mAA ------------------------------------------------------------------------------------


def test_accuracy_examples():
    zero = [sample(0.0, 0.0)] * 3
    assert accuracy_at(zero, 5, Which.ROTATION) == 100.0
    two = [sample(1.0, 1.0), sample(10.0, 10.0)]
    assert accuracy_at(two, 5, "rotation") == 50.0
    assert accuracy_at(two, 5, "translation") == 50.0
    assert accuracy_at(two, 180, Which.ROTATION) == 100.0


def test_accuracy_strict_threshold_and_errors():
    assert accuracy_at([sample(5.0, 5.0)], 5, Which.ROTATION) == 0.0
    with pytest.raises(InputError):
        accuracy_at([], 5, Which.ROTATION)
    with pytest.raises(InputError):
        accuracy_at([sample(1, 1)], 0, Which.ROTATION)
    with pytest.raises(InputError):
        accuracy_at([sample(1, float("nan"))], 5, Which.TRANSLATION)


def test_accuracy_excludes_degenerate_translation():
    s = [sample(1.0, 1.0), sample(1.0, float("nan")), sample(1.0, 9.0)]
    assert accuracy_at(s, 5, Which.TRANSLATION) == 50.0
    assert accuracy_at(s, 5, Which.ROTATION) == 100.0


def test_maa_examples():
    assert maa_30([sample(0.0, 0.0)] * 4) == 100.0
    assert maa_30([sample(0.0, 15.5)] * 4) == pytest.approx(50.0, abs=1e-12)
    with pytest.raises(InputError):
        maa_30([])


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 180), st.one_of(st.floats(0, 180), st.just(float("nan")))), min_size=1, max_size=12))
def test_accuracy_properties(pairs):
    s = [sample(r, t) for r, t in pairs]
    rra = [accuracy_at(s, tau, Which.ROTATION) for tau in range(1, 31)]
    assert all(b >= a for a, b in zip(rra, rra[1:]))
    if any(not x.degenerate for x in s):
        rta = [accuracy_at(s, tau, Which.TRANSLATION) for tau in range(1, 31)]
        assert all(b >= a for a, b in zip(rta, rta[1:]))
        m = maa_30(s)
        assert m <= min(rra[-1], rta[-1]) + 1e-12
        rot = [x.rotation_error for x in s]
        tr = [x.translation_error for x in s if not x.degenerate]
        assert m == pytest.approx(brute_maa(rot, tr), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_metric_pipeline_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    gt = random_traj(rng, 6)
    est = Trajectory(tuple([Pose.identity()] + [
        Pose(axis_rotation(rng.normal(size=3), rng.uniform(0, 20)) @ p.rotation, p.translation + rng.normal(scale=0.3, size=3))
        for p in gt.poses[1:]]), gt.focals)
    samples = pairwise_errors(est, gt)
    ref = brute_force_errors(est, gt, [(s.i, s.j) for s in samples])
    rot = [r[2] for r in ref]
    tr = [r[3] for r in ref]
    for tau in (1, 5, 17, 30):
        assert accuracy_at(samples, tau, Which.ROTATION) == brute_acc(rot, tau)
        assert accuracy_at(samples, tau, Which.TRANSLATION) == brute_acc(tr, tau)
    assert maa_30(samples) == pytest.approx(brute_maa(rot, tr), abs=1e-9)


# -- report ---------------------------------------------------------------------------------------------


def test_report_text_and_csv_agree():
    s = [sample(1.0, 2.0), sample(10.0, 3.0)]
    rep = metric_report(s)
    assert (rep.rra5, rep.rta5) == (50.0, 100.0)
    assert rep.count == 2 and rep.degenerate == 0
    text = rep.to_text()
    lines = text.strip().splitlines()
    assert lines[0].split() == list(COLUMNS)
    parsed = MetricReport.parse_csv(rep.to_csv())
    assert list(parsed) == list(COLUMNS)
    assert [float(x) for x in lines[1].split()] == list(parsed.values())


def test_report_all_degenerate_translation():
    rep = metric_report([sample(1.0, float("nan"))])
    assert rep.rra5 == 100.0
    assert math.isnan(rep.rta5) and math.isnan(rep.maa30) and rep.degenerate == 1
    with pytest.raises(InputError):
        metric_report([])


# -- warp consistency --------------------------------------------------------------------------------------


def _features_const(case, vec):
    H, W = case.intrinsics.height, case.intrinsics.width
    return [np.broadcast_to(np.asarray(vec, float), (H, W, len(vec))).copy() for _ in case.ref_maps]


def test_warp_constant_features_score_one(small_case):
    feats = _features_const(small_case, [1.0, 2.0, 0.5])
    res = warp_consistency(feats, small_case.ref_maps, None, small_case.intrinsics)
    assert all(s == pytest.approx(1.0, abs=1e-12) for s in res.per_frame)
    assert res.error == pytest.approx(0.0, abs=1e-12)


def test_warp_orthogonal_features_score_zero(small_case):
    feats = _features_const(small_case, [0.0, 1.0])
    feats[0] = _features_const(small_case, [1.0, 0.0])[0]
    res = warp_consistency(feats, small_case.ref_maps, None, small_case.intrinsics)
    assert res.mean == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("resample", ["bilinear", "nearest"])
def test_warp_textured_scene(small_case, resample):
    res = warp_consistency(small_case.features, small_case.ref_maps, None, small_case.intrinsics, resample=resample)
    assert res.mean >= 0.999
    assert not res.skipped


def test_warp_self_maps_with_poses_match_ref_maps(small_case):
    a = warp_consistency(small_case.features, small_case.ref_maps, None, small_case.intrinsics)
    b = warp_consistency(small_case.features, small_case.self_maps, small_case.trajectory, small_case.intrinsics)
    assert b.mean == pytest.approx(a.mean, abs=1e-9)
    with pytest.raises(InputError):
        warp_consistency(small_case.features, small_case.self_maps, None, small_case.intrinsics)


def test_warp_skips_invisible_frames(small_case):
    maps = list(small_case.ref_maps)
    behind = np.array(maps[2].points) * [1, 1, -1]
    maps[2] = PointMap(behind, maps[2].valid, 0)
    res = warp_consistency(small_case.features, maps, None, small_case.intrinsics)
    assert res.skipped == [2]
    assert math.isnan(res.per_frame[2])
    assert res.visible[2] == 0


def test_warp_input_checks(small_case):
    K = small_case.intrinsics
    with pytest.raises(InputError):
        warp_consistency(small_case.features, small_case.ref_maps, None, K, resample="cubic")
    with pytest.raises(InputError):
        warp_consistency(small_case.features[:2], small_case.ref_maps, None, K)
    bad = list(small_case.features)
    bad[1] = np.full_like(bad[1], np.nan)
    with pytest.raises(InputError):
        warp_consistency(bad, small_case.ref_maps, None, K)
