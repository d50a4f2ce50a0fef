import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camtraj.errors import DegenerateGeometryError, InputError
from camtraj.geometry import ConfidenceMap, PointMap
from camtraj.losses import (
    NoiseTensor,
    RecLossConfig,
    focal_smoothness,
    focal_smoothness_grad,
    gen_loss,
    normalization_scale,
    rec_loss,
    total_loss,
    translation_smoothness,
    translation_smoothness_grad,
    velocity_jitter,
)

from conftest import seeds


def pm(points, valid=None):
    return PointMap(np.asarray(points, dtype=float).reshape(1, -1, 3), valid)


def conf(values):
    return ConfidenceMap(np.asarray(values, dtype=float).reshape(1, -1))


def rec_oracle(pred, confs, gt, alpha):
    """Plain double loop over frames and pixels."""
    total = 0.0
    for P, C, G in zip(pred, confs, gt):
        P, G, C = P.reshape(-1, 3), G.reshape(-1, 3), C.reshape(-1)
        ok = [i for i in range(len(P)) if np.all(np.isfinite(P[i])) and np.all(np.isfinite(G[i]))]
        s = sum(math.sqrt(sum(x * x for x in P[i])) for i in ok) / len(ok)
        sg = sum(math.sqrt(sum(x * x for x in G[i])) for i in ok) / len(ok)
        for i in ok:
            d = math.sqrt(sum((P[i][k] / s - G[i][k] / sg) ** 2 for k in range(3)))
            total += C[i] * d - alpha * math.log(C[i])
    return total


# -- normalization scale -----------------------------------------------------------


def test_normalization_scale_examples():
    assert normalization_scale(pm([[0, 0, 1], [0, 0, 1]])) == 1.0
    assert normalization_scale(pm([[1, 0, 0], [3, 0, 0]])) == 2.0
    p = pm([[1, 2, 3], [-1, 0.5, 2]])
    assert normalization_scale(p.scaled(3.5)) == pytest.approx(3.5 * normalization_scale(p), rel=1e-12)


def test_normalization_scale_errors():
    with pytest.raises(InputError):
        normalization_scale(pm([[np.nan, 0, 0]]))
    with pytest.raises(DegenerateGeometryError):
        normalization_scale(pm([[0, 0, 0], [0, 0, 0]]))


# -- rec loss -------------------------------------------------------------------------


def test_rec_loss_identical_is_zero():
    p = pm([[1, 2, 3], [0, 1, 4]])
    out = rec_loss([(p, conf([1, 1]))], [p], RecLossConfig(alpha=0.2))
    assert out.total == 0.0


def test_rec_loss_single_point_scale_invariance():
    out = rec_loss([(pm([[2, 0, 0]]), conf([1]))], [pm([[1, 0, 0]])], RecLossConfig(alpha=0.0))
    assert out.total == pytest.approx(0.0, abs=1e-9)


def test_rec_loss_confidence_term():
    p = pm([[1, 0, 0], [0, 1, 0]])
    out = rec_loss([(p, conf([math.e, 1]))], [p], RecLossConfig(alpha=1.0))
    assert out.total == pytest.approx(-1.0, abs=1e-9)
    assert out.data_term == pytest.approx(0.0, abs=1e-9)
    assert out.confidence_term == pytest.approx(-1.0, abs=1e-9)


def test_rec_loss_matches_loop_oracle(rng):
    F, n = 3, 7
    preds = rng.normal(size=(F, n, 3)) + [0, 0, 3]
    gts = rng.normal(size=(F, n, 3)) + [0, 0, 3]
    confs = 1 + rng.exponential(size=(F, n))
    preds[1, 2] = np.nan
    gts[2, 5] = np.nan
    out = rec_loss([(pm(p), conf(c)) for p, c in zip(preds, confs)], [pm(g) for g in gts], RecLossConfig(alpha=0.3))
    assert out.total == pytest.approx(rec_oracle(preds, confs, gts, 0.3), abs=1e-9)
    assert out.total == pytest.approx(out.data_term + out.confidence_term, abs=1e-9)
    assert sum(out.per_frame) == pytest.approx(out.total, abs=1e-9)


@settings(max_examples=50)
@given(seeds, st.floats(0.01, 100.0), st.booleans())
def test_rec_loss_scale_invariant(seed, c, scale_pred):
    rng = np.random.default_rng(seed)
    P = pm(rng.normal(size=(6, 3)) + [0, 0, 2])
    G = pm(rng.normal(size=(6, 3)) + [0, 0, 2])
    C = conf(1 + rng.random(6))
    base = rec_loss([(P, C)], [G]).total
    if scale_pred:
        other = rec_loss([(P.scaled(c), C)], [G]).total
    else:
        other = rec_loss([(P, C)], [G.scaled(c)]).total
    assert other == pytest.approx(base, abs=1e-9)


def test_rec_loss_skips_disjoint_frames():
    a = pm([[1, 0, 0], [np.nan, 0, 0]])
    b = pm([[np.nan, 0, 0], [0, 1, 0]])
    good = pm([[1, 0, 0], [0, 1, 0]])
    out = rec_loss([(a, conf([1, 1])), (good, conf([1, 1]))], [b, good])
    assert out.skipped_frames == [0]
    assert math.isnan(out.per_frame[0])
    assert out.total == 0.0


def test_rec_loss_mean_reduction_and_pooled():
    P = pm([[1, 0, 0], [0, 2, 0]])
    G = pm([[1, 0, 0], [0, 1, 0]])
    C = conf([2, 2])
    s = rec_loss([(P, C)], [G], RecLossConfig(alpha=0.5))
    m = rec_loss([(P, C)], [G], RecLossConfig(alpha=0.5, reduction="mean"))
    assert m.total == pytest.approx(s.total / 2, abs=1e-12)
    pooled = rec_loss([(P, C)], [G], RecLossConfig(alpha=0.5, scale_mode="pooled"))
    assert pooled.total == pytest.approx(s.total, abs=1e-12)  # one frame: same scales


def test_rec_loss_validation():
    with pytest.raises(InputError):
        rec_loss([], [pm([[1, 0, 0]])])
    with pytest.raises(InputError):
        RecLossConfig(alpha=-1)
    with pytest.raises(InputError):
        RecLossConfig(reduction="max")
    with pytest.raises(InputError):
        rec_loss([(pm([[1, 0, 0]]), conf([1, 1]))], [pm([[1, 0, 0]])])


# -- gen / total --------------------------------------------------------------------------


def test_gen_loss_examples():
    assert gen_loss([0.3, -1.0], [0.3, -1.0]) == 0.0
    assert gen_loss([1.0, 0.0], [0.0, 0.0]) == 1.0
    assert gen_loss([1.0, 2.0], [-1.0, 0.0]) == 8.0


@given(seeds)
def test_gen_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 4, 5))
    g = gen_loss(a, b)
    assert g >= 0
    assert g == pytest.approx(float(np.sum((a - b) ** 2)), rel=1e-12)
    assert gen_loss(a, a) == 0.0


def test_gen_loss_shape_checks():
    with pytest.raises(InputError):
        gen_loss(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(InputError):
        NoiseTensor(np.zeros(5), (2, 3))
    with pytest.raises(InputError):
        NoiseTensor.from_array([np.inf])


def test_total_loss_examples():
    assert total_loss(2.0, 3.0) == 5.0
    assert total_loss(2.0, 3.0, RecLossConfig(lam=0.0)) == 2.0
    assert total_loss(2.0, 0.0) == 2.0
    with pytest.raises(InputError):
        total_loss(float("nan"), 1.0)


# -- temporal regularizers ------------------------------------------------------------------


def test_focal_smoothness_examples():
    assert focal_smoothness([3.0, 3.0, 3.0]) == 0.0
    assert focal_smoothness([1.0, 2.0, 4.0]) == 5.0
    assert focal_smoothness([4.0, 2.0, 1.0]) == 5.0


def test_focal_smoothness_short_warns():
    with pytest.warns(UserWarning):
        assert focal_smoothness([1.0]) == 0.0


def test_translation_smoothness_examples():
    assert translation_smoothness(np.ones((4, 3))) == 0.0
    assert translation_smoothness([[0, 0, 0], [1, 0, 0], [2, 0, 0]]) == 2.0
    assert translation_smoothness([[0, 0, 0], [1, 0, 0], [3, 0, 0]]) == 6.0


def test_translation_smoothness_too_short():
    with pytest.raises(InputError):
        translation_smoothness([[0, 0, 0]])
    assert translation_smoothness([[0, 0, 0], [0, 3, 4]]) == 25.0


@given(seeds, st.integers(2, 8))
def test_translation_smoothness_loop_oracle(seed, F):
    t = np.random.default_rng(seed).normal(size=(F, 3))
    first = sum(float(np.sum((t[f] - t[f + 1]) ** 2)) for f in range(F - 1))
    v = [t[f] - t[f + 1] for f in range(F - 1)]
    second = sum(float(np.sum((v[f] - v[f + 1]) ** 2)) for f in range(F - 2))
    assert translation_smoothness(t) == pytest.approx(first + second, rel=1e-12)


@given(seeds, st.floats(-5, 5), st.floats(-5, 5))
def test_regularizers_offset_reversal_and_constant_velocity(seed, a, b):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(6, 3))
    base = translation_smoothness(t)
    assert translation_smoothness(t + [a, b, 1.0]) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert translation_smoothness(t[::-1]) == pytest.approx(base, rel=1e-12)
    l = rng.random(6) + 1
    assert focal_smoothness(l + abs(a)) == pytest.approx(focal_smoothness(l), rel=1e-9, abs=1e-12)
    line = np.outer(np.arange(6), [a, b, 1.0])
    v = line[:-1] - line[1:]
    assert translation_smoothness(line) == pytest.approx(float(np.sum(v * v)), abs=1e-9)
    assert velocity_jitter(line) == pytest.approx(0.0, abs=1e-9)


def _rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


@given(seeds, st.integers(2, 9))
def test_translation_smoothness_grad_fd(seed, F):
    t = np.random.default_rng(seed).normal(size=(F, 3))
    g = translation_smoothness_grad(t)
    num = np.zeros_like(t)
    h = 1e-6
    for idx in np.ndindex(t.shape):
        e = np.zeros_like(t)
        e[idx] = h
        num[idx] = (translation_smoothness(t + e) - translation_smoothness(t - e)) / (2 * h)
    assert _rel_err(g, num) < 1e-5


@given(seeds, st.integers(2, 9))
def test_focal_smoothness_grad_fd(seed, F):
    l = 50 + 5 * np.random.default_rng(seed).random(F)
    g = focal_smoothness_grad(l)
    h = 1e-5
    num = np.array([(focal_smoothness(l + h * e) - focal_smoothness(l - h * e)) / (2 * h) for e in np.eye(F)])
    assert _rel_err(g, num) < 1e-5


def test_velocity_jitter_example():
    t = [[0, 0, 0], [1, 0, 0], [3, 0, 0], [6, 0, 0]]
    # v = (-1, -2, -3); differences have norm 1 each
    assert velocity_jitter(t) == 1.0
    assert velocity_jitter(t[:2]) == 0.0
