"""Two-sample and regression hypothesis tests."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import stats

from .core import BasisSpec, Cohort
from .errors import DegenerateTestError
from .regression import FitReport, TestResult, fit_least_squares

__all__ = [
    "TestResult",
    "wilcoxon_rank_sum",
    "chow_test",
    "wald_coefficient_test",
    "overestimation_test",
]


def wilcoxon_rank_sum(a, b) -> TestResult:
    """Two-sided Wilcoxon rank-sum (Mann-Whitney) test.

    The statistic is U for the first sample, ``R_a - n_a (n_a + 1) / 2``,
    with midranks for ties.  The p-value uses the normal approximation with
    tie-corrected variance and a 0.5 continuity correction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    u = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    if np.all(pooled == pooled[0]):
        return TestResult(u, 1.0, degenerate=True, note="all values identical")
    n = na + nb
    _, counts = np.unique(pooled, return_counts=True)
    tie = float(np.sum(counts ** 3 - counts)) / (n * (n - 1))
    var = na * nb / 12.0 * ((n + 1) - tie)
    mu = na * nb / 2.0
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return TestResult(u, float(min(1.0, 2.0 * stats.norm.sf(z))))


def _ssr(fit: FitReport) -> float:
    return float(np.sum(fit.working_weights * fit.residuals ** 2))


def chow_test(cohort_a: Cohort, cohort_b: Cohort, basis: BasisSpec) -> TestResult:
    """Chow test: one regression for both groups vs. one per group.

    F = [(SSR_pooled - SSR_a - SSR_b) / k] / [(SSR_a + SSR_b) / (n_a + n_b - 2k)]
    """
    k = len(basis)
    na, nb = len(cohort_a), len(cohort_b)
    if na <= k or nb <= k:
        raise ValueError(f"each group needs more than {k} observations (got {na} and {nb})")
    pooled = Cohort(cohort_a.measurements + cohort_b.measurements)
    fit_p = fit_least_squares(pooled, basis)
    ssr_p = _ssr(fit_p)
    ssr_a = _ssr(fit_least_squares(cohort_a, basis))
    ssr_b = _ssr(fit_least_squares(cohort_b, basis))
    within = ssr_a + ssr_b
    # rounding-level SSR counts as an exact fit
    tiny = 1e-28 * max(1.0, float(np.sum(fit_p.working_weights * fit_p.y ** 2)))
    if within <= tiny:
        raise DegenerateTestError("both groups are fitted exactly; the Chow test is undefined")
    df2 = na + nb - 2 * k
    F = max((ssr_p - within) / k, 0.0) / (within / df2)
    return TestResult(F, float(stats.f.sf(F, k, df2)), (k, df2))


def wald_coefficient_test(fit: FitReport, hypothesized) -> TestResult:
    """Wald test of all coefficients against ``hypothesized``.

    W = d' V^-1 d with d = beta_hat - beta_0 and V the fit's stored
    covariance (HC sandwich for GLS fits, Huber-type for robust fits).
    A singular V falls back to its pseudo-inverse with degrees of freedom
    equal to its rank.
    """
    beta0 = np.asarray(hypothesized, dtype=float)
    beta = fit.coefficients
    if beta0.shape != beta.shape:
        raise ValueError(f"expected {beta.size} hypothesized coefficients, got {beta0.size}")
    V = np.asarray(fit.coefficient_covariance, dtype=float)
    if not np.all(np.isfinite(V)):
        raise DegenerateTestError("coefficient covariance is not finite")
    d = beta - beta0
    k = beta.size
    rank = int(np.linalg.matrix_rank(V))
    if rank < k:
        warnings.warn(f"coefficient covariance has rank {rank} < {k}; using its pseudo-inverse",
                      RuntimeWarning, stacklevel=2)
        if rank == 0:
            raise DegenerateTestError("coefficient covariance is zero")
        W = float(d @ np.linalg.pinv(V) @ d)
        return TestResult(W, float(stats.chi2.sf(W, rank)), (rank,), degenerate=True,
                          note="pseudo-inverse of a rank-deficient covariance")
    W = float(d @ np.linalg.solve(V, d))
    return TestResult(W, float(stats.chi2.sf(W, k)), (k,))


def overestimation_test(errors_a, errors_b) -> TestResult:
    """One-sided paired t test that A over-estimates more often than B.

    Per observation the difference of over-estimation indicators
    ``[e_a > 0] - [e_b > 0]`` is formed; its mean is tested against 0.
    With zero variance in the differences the test is flagged degenerate
    and p is 1 when the mean difference is <= 0, else 0.
    """
    ea = np.asarray(errors_a, dtype=float)
    eb = np.asarray(errors_b, dtype=float)
    if ea.shape != eb.shape:
        raise ValueError("paired error vectors must have the same length")
    n = ea.size
    if n < 2:
        raise ValueError("need at least two paired observations")
    d = (ea > 0).astype(float) - (eb > 0).astype(float)
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        stat = 0.0 if mean == 0 else math.copysign(math.inf, mean)
        return TestResult(stat, 0.0 if mean > 0 else 1.0, (n - 1,), degenerate=True,
                          note="differences have zero variance")
    t = mean / (sd / math.sqrt(n))
    return TestResult(t, float(stats.t.sf(t, n - 1)), (n - 1,))
