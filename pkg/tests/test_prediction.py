import math

import numpy as np
import pytest

from gestalt.core import Cohort, GrowthChart, MeanModel, Predicts, VarianceModel, dating_basis, lookup, quadratic_basis
from gestalt.errors import DomainError, UnsupportedOperationError
from gestalt.prediction import (
    calibrate_kappa,
    coverage,
    optimal_window,
    predict_with_ci,
    table_to_csv,
    table_to_text,
    tabulate,
    zscore,
)


def flat_chart(level=50.0, var=(1.0, 0.0, 0.0)):
    q = quadratic_basis()
    return GrowthChart("flat", MeanModel(q, (level, 0.0, 0.0)), VarianceModel(q, var))


def crl_variance_chart(var):
    b = dating_basis()
    return GrowthChart("v", MeanModel(b, (18.0, 5.7, 0.15)), VarianceModel(quadratic_basis("CRL"), var),
                       domain=(1.0, 84.0), predicts=Predicts.FA_FROM_CRL)


# --------------------------------------------------------------------------
# Intervals and Z-scores
# --------------------------------------------------------------------------


def test_eq2_at_fa_70(eq2):
    p = predict_with_ci(eq2, 70.0)
    assert p.kappa_used == 1.85
    assert p.mean == pytest.approx(55.77, abs=0.15)
    assert p.sd == pytest.approx(5.805122, abs=0.05)
    assert p.upper - p.mean == pytest.approx(1.85 * p.sd)
    assert p.mean - p.lower == pytest.approx(1.85 * p.sd)


def test_eq4_at_crl_50(eq4):
    p = predict_with_ci(eq4, 50.0)
    assert p.mean == pytest.approx(66.071, abs=0.01)
    assert p.sd == pytest.approx(2.0427, abs=0.01)


def test_zero_kappa_collapses(eq4):
    p = predict_with_ci(eq4, 30.0, kappa=0.0)
    assert p.lower == p.mean == p.upper


def test_no_variance_is_unsupported():
    with pytest.raises(UnsupportedOperationError):
        predict_with_ci(lookup("pexsters_crl"), 50.0)
    with pytest.raises(UnsupportedOperationError):
        zscore(lookup("pexsters_crl"), 50.0, 20.0)


def test_domain_error_passes_through(eq4):
    with pytest.raises(DomainError):
        predict_with_ci(eq4, 90.0)


def test_zscore_trivial(eq1):
    m, s = float(eq1.mean_at(40.0)), float(eq1.sd_at(40.0))
    assert zscore(eq1, 40.0, m) == 0.0
    assert zscore(eq1, 40.0, m + s) == pytest.approx(1.0)


def test_zscore_at_table_row(eq1):
    # (35.136 - 32.827) / 2.3086 from the IVF CRL table, row FA 56
    assert zscore(eq1, 56.0, 35.136) == pytest.approx(1.00, abs=0.02)


def test_zscore_vectorized(eq1):
    z = zscore(eq1, np.array([40.0, 50.0]), eq1.mean_at(np.array([40.0, 50.0])))
    np.testing.assert_array_equal(z, [0.0, 0.0])


# --------------------------------------------------------------------------
# kappa calibration
# --------------------------------------------------------------------------


def test_kappa_zero_on_the_curve():
    c = Cohort.from_arrays(np.linspace(30, 80, 10), np.full(10, 50.0))
    assert calibrate_kappa(flat_chart(), c) == 0.0


def test_kappa_is_the_19th_order_statistic_of_20():
    u = np.array([0.3, -1.2, 2.5, 0.1, -0.7, 1.9, -2.2, 0.05, 1.1, -0.4,
                  0.8, -1.6, 3.1, -0.9, 0.2, 1.4, -2.8, 0.6, -0.15, 1.0])
    c = Cohort.from_arrays(np.linspace(30, 80, 20), 50.0 + u)
    k = calibrate_kappa(flat_chart(), c, 0.95)
    assert k == pytest.approx(2.8, abs=1e-12)  # sorted |u|: ..., 2.5, 2.8, 3.1
    assert coverage(flat_chart(), c, k) >= 0.95
    assert coverage(flat_chart(), c, k - 1e-9) < 0.95


def test_kappa_gaussian():
    rng = np.random.default_rng(5)
    c = Cohort.from_arrays(rng.uniform(30, 80, 10_000), 50.0 + rng.standard_normal(10_000))
    assert calibrate_kappa(flat_chart(), c) == pytest.approx(1.96, abs=0.06)


@pytest.mark.parametrize("cov", [0.0, 1.0, -0.1, 1.5])
def test_kappa_coverage_bounds(cov):
    c = Cohort.from_arrays([40.0], [50.0])
    with pytest.raises(ValueError):
        calibrate_kappa(flat_chart(), c, cov)


def test_kappa_empty_cohort():
    with pytest.raises(ValueError):
        calibrate_kappa(flat_chart(), Cohort(()))


# --------------------------------------------------------------------------
# Optimal window
# --------------------------------------------------------------------------


def test_optimal_window_eq4(eq4):
    w = optimal_window(eq4)
    assert w.x == pytest.approx(23.59, abs=0.02)
    assert w.mean == pytest.approx(49.38, abs=0.02)
    assert w.sd == pytest.approx(1.829, abs=0.005)
    assert not w.constant_sd and not w.multimodal


def test_monotone_variance_gives_lower_bound():
    w = optimal_window(crl_variance_chart((1.0, 0.1, 0.0)))
    assert w.x == 1.0


def test_parabola_minimum():
    # (x - 30)^2 + 4 = 904 - 60 x + x^2
    w = optimal_window(crl_variance_chart((904.0, -60.0, 1.0)))
    assert w.x == pytest.approx(30.0, abs=1e-6)
    assert w.sd == pytest.approx(2.0, abs=1e-9)


def test_constant_sd_flag():
    w = optimal_window(crl_variance_chart((4.0, 0.0, 0.0)))
    assert w.constant_sd and w.x == 1.0 and w.sd == 2.0


def test_window_beats_every_grid_point():
    # variance 10 - 1.2 sqrt(x) + 0.1 x has its minimum at x = 36
    base = crl_variance_chart((1.0, 0.0, 0.0))
    chart = GrowthChart("s", base.mean, VarianceModel(dating_basis(), (10.0, -1.2, 0.1)),
                        domain=(1.0, 84.0), predicts=Predicts.FA_FROM_CRL)
    w = optimal_window(chart)
    assert w.x == pytest.approx(36.0, abs=1e-4)
    xs = np.linspace(1.0, 84.0, 8301)
    assert w.sd <= chart.sd_at(xs).min()


def test_window_search_domain(eq4):
    w = optimal_window(eq4, (30.0, 60.0))
    assert w.x == 30.0


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------


def test_ivf_crl_table_shape(eq1):
    rows = tabulate(eq1, 26, 85)
    assert len(rows) == 60
    row = rows[56 - 26]
    assert row.weeks_days == "8 + 0"
    assert row.mean == pytest.approx(32.827, abs=0.02)
    assert row.sd == pytest.approx(2.30, abs=0.05)


def test_spontaneous_fa_table_row_25(eq3):
    row = tabulate(eq3, 1, 84)[24]
    assert row.x == 25.0 and row.weeks_days is None
    assert row.mean == pytest.approx(51.693, abs=0.01)
    assert row.sd == pytest.approx(3.7526, abs=0.01)


def test_single_row(eq1):
    assert len(tabulate(eq1, 40, 40)) == 1


def test_table_errors(eq1):
    with pytest.raises(ValueError):
        tabulate(eq1, 30, 40, step=0)
    with pytest.raises(DomainError):
        tabulate(eq1, 20, 40)


def test_csv_columns(eq1, eq4):
    lines = table_to_csv(tabulate(eq1, 26, 27)).splitlines()
    assert lines[0] == "x,weeks_days,mean,sd"
    assert lines[1].startswith("26,3 + 5,")
    assert len(lines) == 3
    assert table_to_csv(tabulate(eq4, 1, 2)).splitlines()[0] == "x,mean,sd"
    band = table_to_csv(tabulate(eq4, 1, 2, with_band=True)).splitlines()
    assert band[0] == "x,mean,sd,lower,upper"


def test_band_values(eq4):
    row = tabulate(eq4, 10, 10, with_band=True, kappa=2.0)[0]
    assert row.lower == pytest.approx(row.mean - 2.0 * row.sd)
    assert row.upper == pytest.approx(row.mean + 2.0 * row.sd)


def test_digits_flag(eq4):
    text = table_to_csv(tabulate(eq4, 50, 50), digits=3)
    assert text.splitlines()[1] == "50,66.1,2.04"


def test_text_table_is_aligned(eq1):
    lines = table_to_text(tabulate(eq1, 26, 30), eq1).splitlines()
    assert lines[0].split() [:2] == ["FA", "(d)"]
    assert len({len(line) for line in lines}) == 1


def test_band_needs_variance():
    with pytest.raises(UnsupportedOperationError):
        tabulate(lookup("pexsters_crl"), 30, 31, with_band=True)
    rows = tabulate(lookup("pexsters_crl"), 30, 31)
    assert rows[0].sd is None


def test_mean_only_round_trip_through_kappa():
    chart = flat_chart(var=(4.0, 0.0, 0.0))
    p = predict_with_ci(chart, 40.0, kappa=1.5)
    assert (p.upper - p.lower) / 2 == pytest.approx(1.5 * math.sqrt(4.0))
