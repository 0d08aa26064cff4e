"""Fitting kernels: weighted least squares, heteroskedastic GLS and
bisquare M-estimation.

All solves go through a column-pivoted QR factorization of the
sqrt-weighted design.  Forming X'WX would square the condition number,
and with an FA^2 column on FA up to 85 days that costs several digits.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as la
from scipy import stats

from .core import (
    BasisSpec,
    Cohort,
    Covariate,
    GA_OFFSET_DAYS,
    GrowthChart,
    MeanModel,
    Predicts,
    VarianceModel,
    VARIANCE_FLOOR,
)
from .errors import (
    DegenerateVarianceError,
    DegenerateVarianceWarning,
    InsufficientDataError,
    SingularityError,
)

#: Consistency constant turning the median absolute residual into a
#: Gaussian standard deviation.
MAD_TO_SD = 1.4826
BISQUARE_TUNING = 4.685
#: GLS weights use max(var, GLS_RELATIVE_FLOOR * median fitted variance).
GLS_RELATIVE_FLOOR = 0.01


@dataclass(frozen=True)
class TestResult:
    """Outcome of a hypothesis test."""

    statistic: float
    p_value: float
    df: tuple[float, ...] = ()
    degenerate: bool = False
    note: str = ""

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True, eq=False)
class FitReport:
    mean: MeanModel
    variance: VarianceModel | None
    residuals: np.ndarray
    robust_weights: np.ndarray
    r_squared: float
    coefficient_covariance: np.ndarray
    scale: float
    iterations: int = 1
    converged: bool = True
    method: str = "ols"
    #: Final weights of the weighted least-squares solve (prior x robust x 1/var).
    working_weights: np.ndarray | None = None
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    notes: tuple[str, ...] = field(default=())

    @property
    def coefficients(self) -> np.ndarray:
        return np.asarray(self.mean.coefficients)

    @property
    def n(self) -> int:
        return len(self.residuals)

    def diagnostics(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "r_squared": self.r_squared,
            "scale": self.scale,
            "iterations": self.iterations,
            "converged": self.converged,
            "robust_weights": [float(w) for w in self.robust_weights],
            "coefficient_covariance": self.coefficient_covariance.tolist(),
            "notes": list(self.notes),
        }


# --------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Solve:
    beta: np.ndarray
    xtwx_inv: np.ndarray  # (X'WX)^-1, for covariance estimates


def _wls_solve(X: np.ndarray, y: np.ndarray, w: np.ndarray, terms=None) -> _Solve:
    n, k = X.shape
    sw = np.sqrt(w)
    A = X * sw[:, None]
    b = y * sw
    Q, R, piv = la.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(float).eps * (d[0] if d.size else 0.0) * 10
    rank = int(np.sum(d > tol))
    if rank < k:
        names = list(terms) if terms is not None else [f"column {j}" for j in range(k)]
        collinear = [names[piv[j]] for j in range(rank, k)]
        raise SingularityError(f"design matrix is rank deficient ({rank} < {k}); "
                               f"collinear terms: {', '.join(collinear)}")
    z = Q.T @ b
    beta_p = la.solve_triangular(R, z)
    beta = np.empty(k)
    beta[piv] = beta_p
    Rinv = la.solve_triangular(R, np.eye(k))
    cov_p = Rinv @ Rinv.T
    inv = np.empty((k, k))
    inv[np.ix_(piv, piv)] = cov_p
    return _Solve(beta, inv)


def _r_squared(y: np.ndarray, resid: np.ndarray, w: np.ndarray) -> float:
    ybar = np.sum(w * y) / np.sum(w)
    sst = float(np.sum(w * (y - ybar) ** 2))
    ssr = float(np.sum(w * resid ** 2))
    scale = max(float(np.sum(w * y * y)), 1.0)
    if sst <= 1e-24 * scale:
        return 1.0 if ssr <= 1e-24 * scale else 0.0
    return float(min(1.0, max(0.0, 1.0 - ssr / sst)))


def default_response(basis: BasisSpec) -> Covariate:
    return Covariate.FA if basis.covariate is Covariate.CRL else Covariate.CRL


def cohort_xy(cohort: Cohort, basis: BasisSpec, response: Covariate | str | None = None):
    response = default_response(basis) if response is None else Covariate(response)
    return np.asarray(cohort.column(basis.covariate)), np.asarray(cohort.column(response))


def _prior(cohort_or_n, weights) -> np.ndarray:
    if weights is not None:
        w = np.asarray(weights, dtype=float)
    elif isinstance(cohort_or_n, Cohort):
        w = np.asarray(cohort_or_n.weights)
    else:
        w = np.ones(int(cohort_or_n))
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    return w


# --------------------------------------------------------------------------
# Least squares
# --------------------------------------------------------------------------


def least_squares(x, y, basis: BasisSpec, weights=None) -> FitReport:
    """Weighted least squares on raw arrays; see :func:`fit_least_squares`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = len(x), len(basis)
    if n < k + 1:
        raise InsufficientDataError(f"{n} observations cannot fit {k} terms with a residual degree of freedom")
    w = _prior(n, weights)
    X = basis.design(x)
    sol = _wls_solve(X, y, w, basis.terms)
    resid = y - X @ sol.beta
    sigma2 = float(np.sum(w * resid ** 2)) / (n - k)
    return FitReport(
        mean=MeanModel(basis, sol.beta),
        variance=None,
        residuals=resid,
        robust_weights=np.ones(n),
        r_squared=_r_squared(y, resid, w),
        coefficient_covariance=sigma2 * sol.xtwx_inv,
        scale=math.sqrt(sigma2),
        method="ols",
        working_weights=w,
        x=x,
        y=y,
    )


def fit_least_squares(cohort: Cohort, basis: BasisSpec, response=None, weights=None) -> FitReport:
    """Minimize sum w_i (y_i - yhat_i)^2 over the basis coefficients.

    ``weights`` defaults to the cohort's per-record weights.  The covariance
    is sigma^2 (X'WX)^-1 with sigma^2 = sum w r^2 / (n - k).
    """
    x, y = cohort_xy(cohort, basis, response)
    return least_squares(x, y, basis, _prior(cohort, weights))


# --------------------------------------------------------------------------
# Variance modeling
# --------------------------------------------------------------------------


def _degenerate_fraction(vm: VarianceModel, x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    lo, hi = float(np.min(x)), float(np.max(x))
    grid = np.linspace(lo, hi, 1001) if hi > lo else np.array([lo])
    return float(np.mean(vm.variance(grid) <= vm.floor))


def fit_variance_model(residuals, covariate_values, basis: BasisSpec, weights=None,
                       floor: float = VARIANCE_FLOOR) -> VarianceModel:
    """Regress squared residuals on ``basis``.

    The returned model is flagged ``degenerate`` (and a
    :class:`DegenerateVarianceWarning` issued) when the fitted variance sits
    at or below ``floor`` over more than 10% of the observed covariate range.
    """
    r = np.asarray(residuals, dtype=float)
    x = np.asarray(covariate_values, dtype=float)
    if r.shape != x.shape:
        raise ValueError("residuals and covariate values differ in length")
    fit = least_squares(x, r * r, basis, weights)
    vm = VarianceModel(basis, fit.mean.coefficients, floor)
    frac = _degenerate_fraction(vm, x)
    if frac > 0.10:
        warnings.warn(f"fitted variance is at or below {floor:g} over {100 * frac:.1f}% of the covariate range",
                      DegenerateVarianceWarning, stacklevel=2)
        vm = VarianceModel(basis, vm.coefficients, floor, degenerate=True)
    return vm


def _sandwich(X: np.ndarray, w: np.ndarray, resid: np.ndarray, bread: np.ndarray) -> np.ndarray:
    # HC1: (X'WX)^-1 X'W diag(r^2) W X (X'WX)^-1 * n / (n - k)
    n, k = X.shape
    wx = X * (w * resid)[:, None]
    meat = wx.T @ wx
    return bread @ meat @ bread * (n / (n - k))


def _weight_floor(s2: np.ndarray, floor: float, relative: float) -> float:
    pos = s2[s2 > 0]
    if pos.size == 0:
        raise DegenerateVarianceError("fitted variance is non-positive at every observation")
    return max(floor, relative * float(np.median(pos)))


def fit_heteroskedastic(cohort: Cohort, mean_basis: BasisSpec, variance_basis: BasisSpec | None = None,
                        max_rounds: int = 2, *, robust_start: bool = False, response=None,
                        weights=None, relative_floor: float = GLS_RELATIVE_FLOOR) -> FitReport:
    """Two-stage generalized least squares with a fitted variance polynomial.

    Stage 1 fits the mean by ordinary (or, with ``robust_start``, bisquare)
    least squares.  Each round then regresses the squared residuals on
    ``variance_basis`` and refits the mean with weights ``prior / max(var(x), f)``.
    The floor ``f`` is ``relative_floor`` times the median positive fitted
    variance at the observations (never below the model's absolute floor):
    quadratic variance fits routinely dip below zero near FA 26 d and an
    absolute floor of 1e-9 would hand those points weights of 1e9.

    The returned variance model is refitted on the final residuals; the
    coefficient covariance is the HC1 sandwich.
    """
    variance_basis = mean_basis if variance_basis is None else variance_basis
    if variance_basis.covariate is not mean_basis.covariate:
        raise ValueError("mean and variance bases must share a covariate")
    x, y = cohort_xy(cohort, mean_basis, response)
    prior = _prior(cohort, weights)
    n, k = len(x), len(mean_basis)
    if n < k + 1:
        raise InsufficientDataError(f"{n} observations cannot fit {k} terms")
    X = mean_basis.design(x)

    if robust_start:
        beta = robust_arrays(x, y, mean_basis, prior).coefficients
    else:
        beta = _wls_solve(X, y, prior, mean_basis.terms).beta

    w = prior
    sol = None
    for _ in range(max_rounds):
        resid = y - X @ beta
        vm = fit_variance_model(resid, x, variance_basis, prior)
        s2 = vm.variance(x)
        w = prior / np.maximum(s2, _weight_floor(s2, vm.floor, relative_floor))
        if not np.all(np.isfinite(w)):
            raise DegenerateVarianceError("non-finite GLS weights from the fitted variance model")
        sol = _wls_solve(X, y, w, mean_basis.terms)
        beta = sol.beta
    if sol is None:
        sol = _wls_solve(X, y, w, mean_basis.terms)

    resid = y - X @ beta
    vm = fit_variance_model(resid, x, variance_basis, prior)
    notes = ("variance model degenerate over >10% of the covariate range",) if vm.degenerate else ()
    cov = _sandwich(X, w, resid, sol.xtwx_inv)
    sigma2 = float(np.sum(w * resid ** 2)) / (n - k)
    return FitReport(
        mean=MeanModel(mean_basis, beta),
        variance=vm,
        residuals=resid,
        robust_weights=np.ones(n),
        r_squared=_r_squared(y, resid, w),
        coefficient_covariance=cov,
        scale=math.sqrt(sigma2),
        iterations=max_rounds,
        method="gls",
        working_weights=w,
        x=x,
        y=y,
        notes=notes,
    )


# --------------------------------------------------------------------------
# Robust regression
# --------------------------------------------------------------------------


def bisquare_weights(u: np.ndarray, tuning: float = BISQUARE_TUNING) -> np.ndarray:
    """Tukey bisquare weights (1 - (u/c)^2)^2 on |u| < c, else 0."""
    t = np.asarray(u, dtype=float) / tuning
    w = (1.0 - t * t) ** 2
    return np.where(np.abs(t) < 1.0, w, 0.0)


def _robust_covariance(X, prior, resid, scale, tuning, bread) -> np.ndarray:
    # V = s^2 * corr * (X'WX)^-1 (X'W^2X) (X'WX)^-1 * n/(n-k), W = prior * bisquare weight.
    # corr = (mean psi^2 / mean psi'^2) / (mean w^2 / mean w^2): rescales the
    # weight sandwich to Huber's asymptotic variance s^2 E[psi^2]/E[psi']^2 (X'X)^-1.
    n, k = X.shape
    u = resid / scale
    t = u / tuning
    inside = np.abs(t) < 1.0
    wr = np.where(inside, (1 - t * t) ** 2, 0.0)
    psi = u * wr
    dpsi = np.where(inside, (1 - t * t) * (1 - 5 * t * t), 0.0)
    mean_dpsi = float(np.mean(dpsi))
    mean_w = float(np.mean(wr))
    if mean_dpsi <= 0 or mean_w <= 0:
        return np.full((k, k), np.nan)
    corr = (np.mean(psi ** 2) / mean_dpsi ** 2) / (np.mean(wr ** 2) / mean_w ** 2)
    W = prior * wr
    wx = X * W[:, None]
    meat = wx.T @ wx
    return scale ** 2 * corr * (bread @ meat @ bread) * (n / (n - k))


def robust_arrays(x, y, basis: BasisSpec, weights=None, tuning: float = BISQUARE_TUNING,
                  max_iter: int = 100, tol: float = 1e-8) -> FitReport:
    """Bisquare IRLS on raw arrays; see :func:`fit_robust`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = len(x), len(basis)
    if n < 2 * (k + 1):
        raise InsufficientDataError(f"robust fit of {k} terms needs at least {2 * (k + 1)} observations, got {n}")
    if not tuning > 0:
        raise ValueError("tuning constant must be positive")
    prior = _prior(n, weights)
    X = basis.design(x)

    # start from least squares on the central 10-90% residual band
    beta = _wls_solve(X, y, prior, basis.terms).beta
    r = y - X @ beta
    lo, hi = np.percentile(r, [10, 90])
    core = (r >= lo) & (r <= hi)
    if core.sum() >= k + 1:
        try:
            beta = _wls_solve(X[core], y[core], prior[core], basis.terms).beta
        except SingularityError:
            pass

    zero = 1e-12 * max(1.0, float(np.max(np.abs(y))) if n else 1.0)
    converged = False
    iterations = 0
    sol = None
    for iterations in range(1, max_iter + 1):
        r = y - X @ beta
        scale = MAD_TO_SD * float(np.median(np.abs(r)))
        if scale <= zero:
            if np.all(np.abs(r) <= zero):
                wr = np.ones(n)
                converged = True
                sol = _wls_solve(X, y, prior, basis.terms)
                break
            wr = (np.abs(r) <= zero).astype(float)
        else:
            wr = bisquare_weights(r / scale, tuning)
        sol = _wls_solve(X, y, prior * wr, basis.terms)
        change = float(np.max(np.abs(sol.beta - beta)))
        beta = sol.beta
        if change < tol:
            converged = True
            break

    r = y - X @ beta
    scale = MAD_TO_SD * float(np.median(np.abs(r)))
    if scale <= zero:
        wr = np.ones(n) if np.all(np.abs(r) <= zero) else (np.abs(r) <= zero).astype(float)
        cov = np.zeros((k, k))
    else:
        wr = bisquare_weights(r / scale, tuning)
        cov = _robust_covariance(X, prior, r, scale, tuning, sol.xtwx_inv)
    working = prior * wr
    notes = () if converged else (f"IRLS did not converge in {max_iter} iterations",)
    return FitReport(
        mean=MeanModel(basis, beta),
        variance=None,
        residuals=r,
        robust_weights=wr,
        r_squared=_r_squared(y, r, working),
        coefficient_covariance=cov,
        scale=scale,
        iterations=iterations,
        converged=converged,
        method="robust",
        working_weights=working,
        x=x,
        y=y,
        notes=notes,
    )


def fit_robust(cohort: Cohort, basis: BasisSpec, tuning: float = BISQUARE_TUNING, *, response=None,
               weights=None, max_iter: int = 100) -> FitReport:
    """M-estimation by iteratively reweighted least squares (Tukey bisquare).

    The start is least squares on the observations between the 10th and
    90th percentiles of plain least-squares residuals.  Scale is
    1.4826 * median |residual|, re-estimated every iteration; iteration stops
    once no coefficient moves by 1e-8 or after ``max_iter`` rounds
    (``converged=False``).  An exact fit stops immediately with unit weights.
    """
    x, y = cohort_xy(cohort, basis, response)
    return robust_arrays(x, y, basis, _prior(cohort, weights), tuning, max_iter)


# --------------------------------------------------------------------------
# Nested-model F test
# --------------------------------------------------------------------------


def highest_degree_test(fit: FitReport, cohort: Cohort | None = None) -> TestResult:
    """F test of the last basis term: full basis vs. the basis without it.

    Both models are solved with the fit's final working weights, so GLS and
    robust fits are tested on the scale they were estimated on.
    """
    basis = fit.mean.basis
    if len(basis) < 2:
        raise ValueError("need at least two basis terms to drop one")
    if cohort is not None:
        x, y = cohort_xy(cohort, basis)
    else:
        x, y = fit.x, fit.y
    w = fit.working_weights if fit.working_weights is not None else np.ones(len(x))
    n, k = len(x), len(basis)
    if n <= k:
        raise InsufficientDataError("no residual degrees of freedom")
    X = basis.design(x)
    full = _wls_solve(X, y, w, basis.terms)
    reduced_basis = basis.drop_last()
    Xr = reduced_basis.design(x)
    red = _wls_solve(Xr, y, w, reduced_basis.terms)
    ssr_f = float(np.sum(w * (y - X @ full.beta) ** 2))
    ssr_r = float(np.sum(w * (y - Xr @ red.beta) ** 2))
    df2 = n - k
    tiny = 1e-28 * max(1.0, float(np.sum(w * y * y)))
    if ssr_f <= tiny:
        if ssr_r - ssr_f <= tiny:
            return TestResult(0.0, 1.0, (1, df2), degenerate=True, note="both models fit exactly")
        return TestResult(math.inf, 0.0, (1, df2), degenerate=True, note="full model fits exactly")
    F = (ssr_r - ssr_f) / (ssr_f / df2)
    F = max(F, 0.0)
    return TestResult(F, float(stats.f.sf(F, 1, df2)), (1, df2))


# --------------------------------------------------------------------------
# Charts from fits
# --------------------------------------------------------------------------


def fit_to_chart(fit: FitReport, name: str, *, domain: tuple[float, float] | None = None,
                 kappa: float = 1.96, citation: str = "") -> GrowthChart:
    basis = fit.mean.basis
    predicts = Predicts.FA_FROM_CRL if basis.covariate is Covariate.CRL else Predicts.CRL_FROM_FA
    if domain is None:
        shift = GA_OFFSET_DAYS if basis.covariate is Covariate.GA else 0.0
        domain = (float(np.min(fit.x)) - shift, float(np.max(fit.x)) - shift)
    return GrowthChart(name, fit.mean, fit.variance, kappa, domain, predicts, citation)
