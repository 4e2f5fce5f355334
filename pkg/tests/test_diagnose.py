import numpy as np
import pytest

from welfarecast import diagnose
from welfarecast.errors import DegenerateTargetError, EmptyError

import oracles


# -- r-squared -----------------------------------------------------------------

def test_perfect_prediction():
    y = np.array([1.0, 2.0, 3.0])
    r2s, r2p, degenerate = diagnose.r_squared(y, y)
    assert r2s == 1.0
    assert r2p == pytest.approx(1.0)
    assert not degenerate


def test_constant_prediction_flagged_degenerate():
    y = np.array([1.0, 2.0, 3.0])
    yhat = np.full(3, y.mean())
    r2s, r2p, degenerate = diagnose.r_squared(y, yhat)
    assert r2s == 0.0
    assert r2p == 0.0
    assert degenerate


def test_hand_case():
    r2s, _, _ = diagnose.r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
    assert r2s == pytest.approx(0.5)  # 1 - 1/2


def test_degenerate_target():
    with pytest.raises(DegenerateTargetError):
        diagnose.r_squared([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


def test_out_of_sample_r2_can_be_negative():
    r2s, _, _ = diagnose.r_squared([1.0, 2.0], [10.0, -10.0])
    assert r2s < 0


# -- wss/tss -------------------------------------------------------------------

def test_constant_within_groups_is_zero():
    values = np.array([1.0, 1.0, 5.0, 5.0])
    groups = np.array(["a", "a", "b", "b"])
    assert diagnose.wss_tss_ratio(values, groups) == 0.0


def test_equal_group_means_is_one():
    values = np.array([1.0, 3.0, 1.0, 3.0])
    groups = np.array(["a", "a", "b", "b"])
    assert diagnose.wss_tss_ratio(values, groups) == pytest.approx(1.0)


def test_hand_case_five_sevenths():
    values = np.array([1.0, 3.0, 2.0, 6.0])
    groups = np.array(["g1", "g1", "g2", "g2"])
    ratio = diagnose.wss_tss_ratio(values, groups)
    assert ratio == pytest.approx(5.0 / 7.0, abs=1e-15)
    wss, tss = oracles.wss_tss(values, groups)
    assert (wss, tss) == (10.0, 14.0)


def test_constant_feature_reported_missing():
    values = np.column_stack([np.ones(4), np.array([1.0, 2.0, 3.0, 4.0])])
    groups = np.array(["a", "a", "b", "b"])
    ratios = diagnose.wss_tss_ratio(values, groups)
    assert np.isnan(ratios[0])
    assert np.isfinite(ratios[1])


def test_wss_never_exceeds_tss_on_random_data():
    rng = np.random.default_rng(61)
    for _ in range(100):
        n = int(rng.integers(4, 30))
        p = int(rng.integers(1, 5))
        values = rng.standard_normal((n, p)) + rng.standard_normal()
        groups = rng.integers(0, max(2, n // 3), n)
        if len(set(groups.tolist())) < 2:
            continue
        ratios = diagnose.wss_tss_ratio(values, groups)
        ok = ~np.isnan(ratios)
        assert np.all(ratios[ok] <= 1.0 + 1e-12)
        assert np.all(ratios[ok] >= -1e-12)


def test_affine_transform_leaves_ratio_unchanged():
    rng = np.random.default_rng(62)
    values = rng.standard_normal(20)
    groups = rng.integers(0, 4, 20)
    base = diagnose.wss_tss_ratio(values, groups)
    for a, b in ((2.0, 0.0), (-0.5, 3.0), (117.0, -4.0)):
        moved = diagnose.wss_tss_ratio(a * values + b, groups)
        assert moved == pytest.approx(base, abs=1e-10)


# -- ecdf ---------------------------------------------------------------------

def test_single_value():
    assert diagnose.ecdf([5.0]) == [(5.0, 1.0)]


def test_counting_case():
    assert diagnose.ecdf([1.0, 1.0, 2.0]) == [(1.0, 2.0 / 3.0), (2.0, 1.0)]


def test_matches_counting_oracle_and_monotone():
    rng = np.random.default_rng(63)
    values = rng.integers(0, 10, 40).astype(float)
    points = diagnose.ecdf(values)
    assert points == oracles.ecdf_by_counting(values)
    fracs = [f for _, f in points]
    assert all(a < b for a, b in zip(fracs, fracs[1:]))
    assert fracs[-1] == 1.0


def test_empty_sample():
    with pytest.raises(EmptyError):
        diagnose.ecdf([])


# -- performance table -----------------------------------------------------------

def reports():
    return [
        diagnose.EvaluationReport("m", "consumption", "ms+nl", 0.4, 0.41, 100),
        diagnose.EvaluationReport("m", "asset", "ms+nl+weather", 0.9, 0.91, 50),
        diagnose.EvaluationReport("m", "asset", "ms+nl", 0.89, 0.9, 50),
    ]


def test_table_sorted_by_target_then_feature_set():
    rows = diagnose.performance_table(reports())
    assert [(r[1], r[2]) for r in rows] == [
        ("asset", "ms+nl"), ("asset", "ms+nl+weather"),
        ("consumption", "ms+nl")]


def test_duplicate_labels_keep_stable_order():
    dup = [
        diagnose.EvaluationReport("first", "t", "f", 0.1, 0.1, 10),
        diagnose.EvaluationReport("second", "t", "f", 0.2, 0.2, 10),
    ]
    rows = diagnose.performance_table(dup)
    assert [r[0] for r in rows] == ["first", "second"]


def test_performance_round_trip(tmp_path):
    path = tmp_path / "performance.csv"
    diagnose.write_performance(path, reports())
    loaded = diagnose.read_performance(path)
    expected = sorted(reports(), key=lambda r: (r.target, r.feature_set))
    assert loaded == expected
