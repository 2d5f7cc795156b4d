import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morphconn import errors
from morphconn.features import build_mf
from morphconn.select import (column_tests, read_selection_csv, select_features, t_two_sided_p,
                              welch_t, write_selection_csv)
from morphconn.synth import synthetic_atlas

from conftest import t_pvalue_by_quadrature

samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30)


def test_welch_hand_example():
    t, df = welch_t([1, 2, 3], [2, 3, 4])
    assert t == pytest.approx(-1.224745, abs=1e-6)
    assert df == 4.0


def test_identical_samples():
    t, _ = welch_t([1.0, 4.0, 2.0], [1.0, 4.0, 2.0])
    assert t == 0.0


def test_zero_variance_cases():
    t, df = welch_t([5, 5], [5, 5])
    assert t == 0.0 and t_two_sided_p(t, df) == 1.0
    t, df = welch_t([5, 5], [3, 3])
    assert t == math.inf and t_two_sided_p(t, df) == 5e-324


def test_group_too_small():
    with pytest.raises(errors.GroupTooSmall):
        welch_t([1.0], [1.0, 2.0])


def test_pooled_variant_df():
    t, df = welch_t([1, 2, 3, 4], [2, 9], pooled=True)
    assert df == 4.0
    sp2 = (3 * np.var([1, 2, 3, 4], ddof=1) + np.var([2, 9], ddof=1)) / 4
    assert t == pytest.approx((2.5 - 5.5) / math.sqrt(sp2 * (1 / 4 + 1 / 2)), rel=1e-14)


def test_unequal_variance_df_hand_value():
    # s2a = 1, s2b = 16, na = nb = 3: df = (17/3)^2 / ((1/9 + 256/9)/2)
    t, df = welch_t([1, 2, 3], [2, 6, 10])
    assert df == pytest.approx((17 / 3) ** 2 / ((1 / 9 + 256 / 9) / 2), rel=1e-14)
    assert t == pytest.approx((2 - 6) / math.sqrt(17 / 3), rel=1e-14)


def test_p_examples():
    assert t_two_sided_p(0.0, 7.0) == 1.0
    assert abs(t_two_sided_p(1.224745, 4.0) - t_pvalue_by_quadrature(1.224745, 4.0)) < 1e-9
    assert t_two_sided_p(1.224745, 4.0) == pytest.approx(0.2879, abs=1e-4)
    assert abs(t_two_sided_p(12.7062, 1.0) - t_pvalue_by_quadrature(12.7062, 1.0)) < 1e-9
    assert t_two_sided_p(12.7062, 1.0) == pytest.approx(0.05, abs=1e-6)


def test_p_rejects_bad_input():
    with pytest.raises(errors.NonFiniteValue):
        t_two_sided_p(np.nan, 3.0)
    with pytest.raises(ValueError):
        t_two_sided_p(1.0, 0.0)


def test_p_matches_closed_forms():
    # df = 1 is Cauchy, df = 2 has a closed-form tail
    for t in (0.1, 1.0, 3.5, 40.0):
        assert t_two_sided_p(t, 1.0) == pytest.approx(1 - 2 * math.atan(t) / math.pi, rel=1e-12)
        assert t_two_sided_p(t, 2.0) == pytest.approx(1 - t / math.sqrt(2 + t * t), rel=1e-12)


def test_p_oracle_sample():
    rng = np.random.default_rng(11)
    t = rng.uniform(-10, 10, 100)
    df = rng.uniform(1, 500, 100)
    p = t_two_sided_p(t, df)
    oracle = np.array([t_pvalue_by_quadrature(a, b) for a, b in zip(t, df)])
    assert np.max(np.abs(p - oracle)) < 1e-9


@pytest.mark.parametrize("df", [1.0, 3.3, 30.0, 499.0])
def test_p_strictly_decreasing_in_abs_t(df):
    t = np.linspace(0, 8, 400)
    p = t_two_sided_p(t, df)
    assert np.all(np.diff(p) < 0)
    np.testing.assert_array_equal(p, t_two_sided_p(-t, df))


@settings(max_examples=100, deadline=None)
@given(a=samples, b=samples)
def test_group_swap_symmetry(a, b):
    t1, df1 = welch_t(a, b)
    t2, df2 = welch_t(b, a)
    assert t1 == -t2 and df1 == df2
    assert t_two_sided_p(t1, df1) == t_two_sided_p(t2, df2)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), na=st.integers(2, 25), nb=st.integers(2, 25),
       c=st.floats(1e-3, 1e3), k=st.floats(-1e3, 1e3))
def test_affine_invariance(seed, na, nb, c, k):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(0, 1, na), rng.normal(0.3, 2, nb)
    t1, df1 = welch_t(a, b)
    t2, df2 = welch_t(c * a + k, c * b + k)
    assert t2 == pytest.approx(t1, rel=1e-9, abs=1e-9)
    assert df2 == pytest.approx(df1, rel=1e-9)
    assert t_two_sided_p(t2, df2) == pytest.approx(t_two_sided_p(t1, df1), rel=1e-8, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 10**6))
def test_equal_variance_equal_size_df(n, seed):
    a = np.random.default_rng(seed).normal(1.0, 2.0, size=n)
    # negation is exact, so the two sample variances match bit for bit
    _, df = welch_t(a, -a)
    assert df == 2 * n - 2


def _matrix(values):
    R = values.shape[1] // 4
    atlas = synthetic_atlas(R)
    return build_mf(values.reshape(values.shape[0], R, 4), atlas)


def test_planted_column_selected_and_constant_not():
    rng = np.random.default_rng(0)
    labels = np.array([0] * 50 + [1] * 50)
    v = rng.normal(size=(100, 4))
    v[:, 0] += 3 * labels
    v[:, 1] = 2.0
    sel = select_features(_matrix(v), labels)
    assert sel.results[0].selected and sel.results[0].p < 1e-20
    assert sel.results[1].p == 1.0 and not sel.results[1].selected
    assert sel.selected_count == int(sel.mask.sum())


def test_alpha_zero_selects_nothing():
    rng = np.random.default_rng(0)
    labels = np.array([0] * 30 + [1] * 30)
    v = rng.normal(size=(60, 8))
    v[:, 0] += 10 * labels
    assert select_features(_matrix(v), labels, alpha=0.0).selected_count == 0


def test_selection_strict_threshold():
    rng = np.random.default_rng(3)
    labels = np.array([0] * 20 + [1] * 20)
    v = rng.normal(size=(40, 8))
    _, _, p = column_tests(v, labels)
    sel = select_features(_matrix(v), labels, alpha=float(p[2]))
    assert not sel.results[2].selected
    assert all(r.selected == (r.p < p[2]) for r in sel.results)


def test_subject_subset_scope():
    rng = np.random.default_rng(1)
    labels = np.array([0, 1] * 10)
    m = _matrix(rng.normal(size=(20, 4)))
    ids = m.subject_ids[:10]
    sel = select_features(m, labels[:10], subject_ids=ids)
    ref = select_features(_matrix(m.values[:10]), labels[:10])
    assert [r.p for r in sel.results] == [r.p for r in ref.results]


def test_group_too_small_in_selection():
    with pytest.raises(errors.GroupTooSmall):
        select_features(_matrix(np.zeros((3, 4))), np.array([0, 0, 1]))


def test_null_calibration():
    rng = np.random.default_rng(20240601)
    v = rng.normal(size=(200, 1000))
    labels = rng.permutation(np.array([0] * 100 + [1] * 100))
    frac = select_features(_matrix(v), labels).selected_count / 1000
    assert 0.03 <= frac <= 0.07


def test_selection_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    labels = np.array([0, 1] * 15)
    m = _matrix(rng.normal(size=(30, 8)))
    sel = select_features(m, labels)
    write_selection_csv(sel, m.atlas, tmp_path / "s.csv")
    back = read_selection_csv(tmp_path / "s.csv", m)
    assert back.results == sel.results
