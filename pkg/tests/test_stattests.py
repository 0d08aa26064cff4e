import itertools
import math

import numpy as np
import pytest
from scipy import stats

from gestalt.core import Cohort, quadratic_basis
from gestalt.errors import DegenerateTestError
from gestalt.regression import fit_least_squares
from gestalt.stattests import chow_test, overestimation_test, wald_coefficient_test, wilcoxon_rank_sum

A8 = np.array([1.83, 0.50, 1.62, 2.48, 1.68, 1.88, 1.55, 3.06])
B8 = np.array([0.88, 0.65, 0.60, 2.05, 1.06, 1.29, 1.06, 3.14])


def pair_count_u(a, b):
    return sum((x > y) + 0.5 * (x == y) for x in a for y in b)


def exact_two_sided_p(a, b):
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    na = len(a)
    observed = ranks[:na].sum()
    mu = na * (len(pooled) + 1) / 2
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), na):
        total += 1
        hits += abs(ranks[list(idx)].sum() - mu) >= abs(observed - mu) - 1e-12
    return hits / total


# --------------------------------------------------------------------------
# Wilcoxon rank-sum
# --------------------------------------------------------------------------


def test_wilcoxon_u_is_pair_count():
    res = wilcoxon_rank_sum(A8, B8)
    assert res.statistic == pytest.approx(pair_count_u(A8, B8), abs=1e-9)


def test_wilcoxon_normal_approximation_against_scipy():
    res = wilcoxon_rank_sum(A8, B8)
    ref = stats.mannwhitneyu(A8, B8, use_continuity=True, alternative="two-sided", method="asymptotic")
    assert res.statistic == pytest.approx(ref.statistic, abs=1e-9)
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_wilcoxon_close_to_exact_permutation():
    res = wilcoxon_rank_sum(A8, B8)
    # normal approximation with continuity correction at 8 + 8
    assert abs(res.p_value - exact_two_sided_p(A8, B8)) < 0.02


def test_wilcoxon_with_ties_against_scipy():
    a = np.array([1, 2, 2, 3, 3, 3, 4, 5.0])
    b = np.array([2, 3, 4, 4, 5, 5, 6, 6.0])
    res = wilcoxon_rank_sum(a, b)
    ref = stats.mannwhitneyu(a, b, use_continuity=True, alternative="two-sided", method="asymptotic")
    assert res.statistic == pytest.approx(pair_count_u(a, b), abs=1e-9)
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_wilcoxon_all_equal():
    res = wilcoxon_rank_sum([1.0, 1.0], [1.0, 1.0, 1.0])
    assert res.p_value == 1.0 and res.degenerate


def test_wilcoxon_empty():
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([], [1.0])


# --------------------------------------------------------------------------
# Chow
# --------------------------------------------------------------------------


def _ssr(x, y):
    X = quadratic_basis().design(x)
    r = y - X @ np.linalg.lstsq(X, y, rcond=None)[0]
    return float(r @ r)


def _groups(rng, shift=0.0, n=30):
    fa_a, fa_b = rng.uniform(30, 80, n), rng.uniform(30, 80, n)
    f = lambda x: 10 + 0.1 * x + 0.01 * x * x
    return (Cohort.from_arrays(fa_a, f(fa_a) + rng.normal(0, 1, n)),
            Cohort.from_arrays(fa_b, f(fa_b) + shift + rng.normal(0, 1, n)))


def test_chow_by_hand(rng):
    a, b = _groups(rng, shift=1.0)
    pooled = _ssr(np.r_[a.fa, b.fa], np.r_[a.crl, b.crl])
    within = _ssr(a.fa, a.crl) + _ssr(b.fa, b.crl)
    df2 = 60 - 6
    F = ((pooled - within) / 3) / (within / df2)
    res = chow_test(a, b, quadratic_basis())
    assert res.statistic == pytest.approx(F, rel=1e-9)
    assert res.p_value == pytest.approx(stats.f.sf(F, 3, df2), rel=1e-9)
    assert res.df == (3, df2)


def test_chow_detects_shift(rng):
    a, b = _groups(rng, shift=5.0)
    assert chow_test(a, b, quadratic_basis()).p_value < 1e-6


def test_chow_exact_fits_are_degenerate():
    fa = np.linspace(30, 80, 10)
    a = Cohort.from_arrays(fa, 1 + 0.5 * fa)
    b = Cohort.from_arrays(fa, 2 + 0.5 * fa)
    with pytest.raises(DegenerateTestError):
        chow_test(a, b, quadratic_basis())


def test_chow_needs_observations(rng):
    a, b = _groups(rng, n=3)
    with pytest.raises(ValueError):
        chow_test(a, b, quadratic_basis())


# --------------------------------------------------------------------------
# Wald
# --------------------------------------------------------------------------


def test_wald_by_hand(rng):
    a, _ = _groups(rng, n=60)
    fit = fit_least_squares(a, quadratic_basis())
    beta0 = np.array([10.0, 0.1, 0.01])
    d = fit.coefficients - beta0
    W = float(d @ np.linalg.inv(fit.coefficient_covariance) @ d)
    res = wald_coefficient_test(fit, beta0)
    assert res.statistic == pytest.approx(W, rel=1e-9)
    assert res.p_value == pytest.approx(stats.chi2.sf(W, 3), rel=1e-9)


def test_wald_zero_at_estimate(rng):
    a, _ = _groups(rng)
    fit = fit_least_squares(a, quadratic_basis())
    res = wald_coefficient_test(fit, fit.coefficients)
    assert res.statistic == pytest.approx(0.0, abs=1e-12)
    assert res.p_value == pytest.approx(1.0)


def test_wald_rejects_translated_comparison_chart():
    from gestalt.core import lookup
    from gestalt.regression import fit_heteroskedastic
    from gestalt.simulate import simulate_cohort, uniform_spec

    # GA-based coefficients rewritten in FA: x_GA = x_FA + 14
    c0, c1, c2 = lookup("robinson_crl").mean.coefficients
    beta0 = [c0 + 14 * c1 + 196 * c2, c1 + 28 * c2, c2]
    cohort = simulate_cohort(uniform_spec(lookup("eq2_spont_crl"), 513, 0))
    fit = fit_heteroskedastic(cohort, quadratic_basis(), quadratic_basis())
    assert wald_coefficient_test(fit, beta0).p_value < 0.05


def test_wald_shape_mismatch(rng):
    a, _ = _groups(rng)
    with pytest.raises(ValueError):
        wald_coefficient_test(fit_least_squares(a, quadratic_basis()), [1.0, 2.0])


# --------------------------------------------------------------------------
# Over-estimation
# --------------------------------------------------------------------------


def test_overestimation_by_hand():
    ea = np.array([1.0, 2.0, -1.0, 0.5, 3.0, -0.2, 0.1, 0.4])
    eb = np.array([-1.0, 2.0, -1.0, -0.5, 3.0, 0.2, -0.1, -0.4])
    d = (ea > 0).astype(float) - (eb > 0)
    t = d.mean() / (d.std(ddof=1) / math.sqrt(8))
    res = overestimation_test(ea, eb)
    assert res.statistic == pytest.approx(t, rel=1e-12)
    ref = stats.ttest_1samp(d, 0.0, alternative="greater")
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)
    assert res.df == (7,)


def test_overestimation_zero_variance():
    res = overestimation_test([1.0, 1.0, 1.0], [-1.0, -1.0, -1.0])
    assert res.degenerate and res.p_value == 0.0
    res = overestimation_test([1.0, 1.0], [1.0, 1.0])
    assert res.degenerate and res.p_value == 1.0


def test_overestimation_needs_pairs():
    with pytest.raises(ValueError):
        overestimation_test([1.0, 2.0], [1.0])
