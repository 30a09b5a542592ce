import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from ctscreen.features import DWT_NAMES, RAW_NAMES, FeatureVector
from ctscreen.selection import (
    N_DWT_KEEP,
    SELECTED_SIZE,
    SelectionMask,
    fuse,
    fused_matrix,
    rank_features,
    select_dwt,
    select_variants,
    t_sf_two_sided,
    welch_df,
    welch_t,
)

samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=15)


def t_tail_quadrature(t, df):
    """Two-sided tail of Student's t by integrating the density."""
    log_c = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)

    def density(x):
        return math.exp(log_c - (df + 1) / 2 * math.log1p(x * x / df))

    tail, _ = quad(density, abs(t), math.inf, epsabs=1e-13, epsrel=1e-12)
    return 2 * tail


def test_identical_samples():
    assert welch_t([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)


def test_hand_case():
    a, b = [1, 2, 3, 4, 5], [2, 4, 6, 8, 10]
    t, p = welch_t(a, b)
    assert t == pytest.approx(-3 / math.sqrt(2.5), abs=1e-12)
    assert t == pytest.approx(-1.8974, abs=1e-4)
    df = welch_df(a, b)
    assert df == pytest.approx(2.5**2 / (0.5**2 / 4 + 2.0**2 / 4), rel=1e-12)
    assert df == pytest.approx(5.88, abs=0.01)
    assert p == pytest.approx(t_tail_quadrature(t, df), abs=1e-6)


@pytest.mark.parametrize("t,df", [(0.3, 2.0), (1.8974, 5.45), (2.5, 17.3), (6.0, 40.0), (0.0, 3.0)])
def test_p_value_matches_quadrature(t, df):
    assert t_sf_two_sided(t, df) == pytest.approx(t_tail_quadrature(t, df), abs=1e-8)


def test_zero_variance_convention_and_short_samples():
    assert welch_t([4, 4, 4], [4, 4]) == (0.0, 1.0)
    with pytest.raises(ValueError):
        welch_t([1], [1, 2])


@settings(max_examples=100, deadline=None)
@given(samples, samples, st.floats(-100, 100), st.floats(0.1, 10))
def test_welch_symmetries(a, b, shift, scale):
    t, p = welch_t(a, b)
    t_r, p_r = welch_t(b, a)
    assert t == pytest.approx(-t_r, abs=1e-9)
    assert p == pytest.approx(p_r, abs=1e-12)
    assert 0.0 <= p <= 1.0
    assume(np.var(a) + np.var(b) > 1e-3)
    ts, ps = welch_t(np.add(a, shift), np.add(b, shift))
    assert ts == pytest.approx(t, rel=1e-6, abs=1e-6) and ps == pytest.approx(p, abs=1e-6)
    tc, _ = welch_t(np.multiply(a, scale), np.multiply(b, scale))
    assert tc == pytest.approx(t, rel=1e-6, abs=1e-6)


def test_p_monotone_in_abs_t():
    ts = np.linspace(0, 8, 50)
    ps = [t_sf_two_sided(t, 12.0) for t in ts]
    assert all(x >= y for x, y in zip(ps, ps[1:]))


def planted_table(rng, n=40, informative=13):
    y = np.repeat([1, 0], n // 2)
    X = rng.normal(size=(n, len(RAW_NAMES)))
    cols = rng.choice(len(DWT_NAMES), informative, replace=False)
    X[np.ix_(y == 1, cols)] += 5.0
    return X, y, {DWT_NAMES[c] for c in cols}


def test_planted_signal_recovered(rng):
    X, y, planted = planted_table(rng)
    mask = select_dwt(X, y)
    assert set(mask.dwt) == planted
    assert mask.backfilled == 0
    assert list(mask.dwt) == [n for n in DWT_NAMES if n in planted]
    assert len(mask.names) == SELECTED_SIZE == 47


def test_backfill_when_nothing_differs(rng):
    y = np.repeat([1, 0], 30)
    X = np.tile(rng.normal(size=(30, len(RAW_NAMES))), (2, 1))  # identical class samples
    mask = select_dwt(X, y)
    assert len(mask.dwt) == N_DWT_KEEP and mask.backfilled == N_DWT_KEEP
    assert all(r.p == pytest.approx(1.0) for r in mask.report)
    assert sum(r.selected for r in mask.report) == N_DWT_KEEP


def test_partial_backfill(rng):
    X, y, planted = planted_table(rng, informative=5)
    mask = select_dwt(X, y)
    assert planted <= set(mask.dwt)
    assert mask.backfilled == N_DWT_KEEP - len([r for r in mask.report if r.p <= 0.05])


def test_selection_is_pure(rng):
    X, y, _ = planted_table(rng)
    assert select_dwt(X, y) == select_dwt(X.copy(), y.copy())


def test_single_label_rejected(rng):
    with pytest.raises(ValueError):
        select_dwt(rng.normal(size=(6, 74)), np.ones(6))


def test_rank_ties_keep_column_order():
    X = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [5.0, 5.0, 0.0], [6.0, 6.0, 0.0]])
    ranks = [r.rank for r in rank_features(X, np.array([0, 0, 1, 1]), ["a", "b", "c"])]
    assert ranks == [1, 2, 3]


def test_mask_invariants():
    with pytest.raises(ValueError):
        SelectionMask(dwt=DWT_NAMES[:12])
    with pytest.raises(ValueError):
        SelectionMask(dwt=tuple(RAW_NAMES[40:53]))


def test_selection_report_csv(tmp_path, rng):
    X, y, _ = planted_table(rng)
    lines = select_dwt(X, y).write_report(tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "feature,t,p,rank,selected"
    assert len(lines) == 41


# --- fusion --------------------------------------------------------------------

def selected_vectors(rng):
    mask = SelectionMask(dwt=DWT_NAMES[:13])
    return [
        mask.apply(FeatureVector(RAW_NAMES, rng.normal(size=74), tag))
        for tag in ("original", "thresholded", "roi")
    ]


def test_fusion_modes(rng):
    fv1, fv2, fv3 = selected_vectors(rng)
    ffv2 = fuse(fv1, fv2, fv3, "FFV2")
    assert len(ffv2) == 141
    assert ffv2.names[0].startswith("original_") and ffv2.names[47].startswith("thresholded_")
    assert ffv2.names[94].startswith("roi_") and len(set(ffv2.names)) == 141

    only = fuse(fv1, fv2, fv3, "fv1")
    assert np.array_equal(only.values, fv1.values) and len(only) == 47

    ffv1 = fuse(fv1, fv2, fv3, "FFV1")
    assert len(ffv1) == 94
    assert np.array_equal(ffv1.values[:47], fv1.values) and np.array_equal(ffv1.values[47:], fv3.values)


def test_fusion_rejects_wrong_sizes(rng):
    fv1, fv2, _ = selected_vectors(rng)
    raw = FeatureVector(RAW_NAMES, np.zeros(74), "roi")
    with pytest.raises(ValueError):
        fuse(fv1, fv2, raw, "FFV2")
    with pytest.raises(ValueError):
        fuse(fv1, fv2, fv2, "FFV3")


def test_fused_matrix_widths(rng):
    X, y, _ = planted_table(rng)
    tables = {"original": X, "thresholded": X + 1, "roi": X * 2}
    masks = select_variants(tables, y)
    for mode, width in (("FV1", 47), ("FFV1", 94), ("FFV2", 141)):
        M, names = fused_matrix(tables, masks, mode)
        assert M.shape == (40, width) and len(names) == width
    # thresholded reuses the original-image mask
    assert masks.for_tag("thresholded") is masks.original
