"""Property checks over randomly drawn inputs."""

import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gestalt.core import Age, AgeKind, Cohort, MeanModel, convert_age, curve_intersection, lookup, quadratic_basis
from gestalt.pipeline import reweight_split
from gestalt.prediction import optimal_window, predict_with_ci, tabulate, zscore
from gestalt.regression import least_squares

ages = st.floats(min_value=0, max_value=400, allow_nan=False)
coef = st.floats(min_value=-5, max_value=5, allow_nan=False)


@given(ages)
def test_age_round_trip(v):
    a = Age(v, AgeKind.FA)
    assert convert_age(convert_age(a, "GA"), "FA").value == pytest.approx(v, abs=1e-12)


@given(st.tuples(coef, coef, coef), st.tuples(coef, coef, coef))
def test_intersection_is_symmetric(ca, cb):
    q = quadratic_basis()
    a, b = MeanModel(q, ca), MeanModel(q, cb)
    try:
        ab = curve_intersection(a, b, 26, 85)
    except Exception as exc:  # several crossings: the swap must fail the same way
        with pytest.raises(type(exc)):
            curve_intersection(b, a, 26, 85)
        return
    ba = curve_intersection(b, a, 26, 85)
    if ab is None:
        assert ba is None
    else:
        assert ba == pytest.approx(ab, abs=1e-8)


@settings(max_examples=50)
@given(st.integers(min_value=5, max_value=60), st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_r_squared_in_unit_interval(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(26, 85, n)
    y = rng.normal(20, 5, n) + 0.3 * x
    r2 = least_squares(x, y, quadratic_basis(), rng.uniform(0.1, 2, n)).r_squared
    assert -1e-12 <= r2 <= 1 + 1e-12


@settings(max_examples=50)
@given(st.lists(st.floats(min_value=1, max_value=84), min_size=2, max_size=40),
       st.lists(st.floats(min_value=0.1, max_value=10), min_size=40, max_size=40))
def test_reweight_total_weight_is_n(crl, w):
    crl = np.array(crl)
    assume((crl < 45).any() and (crl >= 45).any())
    c = Cohort.from_arrays(np.full(len(crl), 50.0), crl, weights=w[:len(crl)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        once = reweight_split(c)
        twice = reweight_split(once)
    assert once.weights.sum() == pytest.approx(len(crl), rel=1e-9)
    np.testing.assert_array_equal(once.weights, twice.weights)


@given(st.integers(26, 84), st.integers(26, 84), st.integers(26, 85))
def test_tabulate_concatenates(a, b, c):
    a, b, c = sorted((a, b, c))
    assume(a < b <= c)
    eq1 = lookup("eq1_ivf_crl")
    whole = tabulate(eq1, a, c)
    parts = tabulate(eq1, a, b - 1) + tabulate(eq1, b, c)
    assert [(r.x, r.weeks_days) for r in whole] == [(r.x, r.weeks_days) for r in parts]
    np.testing.assert_allclose([(r.mean, r.sd) for r in whole], [(r.mean, r.sd) for r in parts], rtol=1e-12)


@given(st.floats(26, 85), st.floats(0, 4))
def test_zscore_at_band_edge(x, k):
    eq1 = lookup("eq1_ivf_crl")
    p = predict_with_ci(eq1, x, kappa=k)
    assert zscore(eq1, x, p.upper) == pytest.approx(k, abs=1e-9)
    assert zscore(eq1, x, p.lower) == pytest.approx(-k, abs=1e-9)


@settings(max_examples=30)
@given(st.floats(1, 40), st.floats(45, 84))
def test_window_not_beaten_by_grid(lo, hi):
    eq4 = lookup("eq4_ivf_fa")
    w = optimal_window(eq4, (lo, hi))
    grid = np.linspace(lo, hi, 501)
    assert w.sd <= eq4.sd_at(grid).min() + 1e-12
    assert lo <= w.x <= hi
