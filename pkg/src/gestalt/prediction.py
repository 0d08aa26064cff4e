"""Using a chart: confidence bands, Z-scores, the optimal measurement
window and dating tables."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import Cohort, GrowthChart, Predicts, format_weeks_days
from .errors import DegenerateVarianceError, DomainError, UnsupportedOperationError

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Prediction:
    x: float
    mean: float
    sd: float
    lower: float
    upper: float
    kappa_used: float

    def to_dict(self) -> dict:
        return asdict(self)


def _require_variance(chart: GrowthChart) -> None:
    if chart.variance is None:
        raise UnsupportedOperationError(f"chart {chart.name!r} has no variance model")


def predict_with_ci(chart: GrowthChart, x: float, kappa: float | None = None) -> Prediction:
    """Mean with the band mean +/- kappa * sd; ``kappa`` defaults to the chart's."""
    _require_variance(chart)
    k = chart.kappa if kappa is None else float(kappa)
    if k < 0:
        raise ValueError("kappa must be non-negative")
    mean = float(chart.mean_at(x))
    sd = float(chart.sd_at(x))
    return Prediction(float(x), mean, sd, mean - k * sd, mean + k * sd, k)


def zscore(chart: GrowthChart, x, observed):
    """(observed - mean(x)) / sd(x)."""
    _require_variance(chart)
    z = (np.asarray(observed, dtype=float) - chart.mean_at(x)) / chart.sd_at(x)
    return float(z) if np.ndim(z) == 0 else z


def _standardized(chart: GrowthChart, cohort: Cohort) -> np.ndarray:
    x = np.asarray(cohort.column(chart.input_covariate))
    y = np.asarray(cohort.column(chart.response_covariate))
    return np.abs(y - chart.mean_at(x)) / chart.sd_at(x)


def coverage(chart: GrowthChart, cohort: Cohort, kappa: float) -> float:
    """Fraction of the cohort inside mean +/- kappa * sd."""
    _require_variance(chart)
    return float(np.mean(_standardized(chart, cohort) <= kappa))


def calibrate_kappa(chart: GrowthChart, cohort: Cohort, coverage: float = 0.95) -> float:
    """Smallest kappa whose band holds at least ``coverage`` of the cohort.

    That is the ceil(coverage * n)-th smallest standardized absolute residual.
    """
    _require_variance(chart)
    if not 0 < coverage < 1:
        raise ValueError("coverage must lie strictly between 0 and 1")
    if len(cohort) == 0:
        raise ValueError("cannot calibrate on an empty cohort")
    u = np.sort(_standardized(chart, cohort))
    rank = max(1, math.ceil(coverage * len(u) - 1e-9))
    return float(u[rank - 1])


@dataclass(frozen=True)
class OptimalWindow:
    x: float
    mean: float
    sd: float
    constant_sd: bool = False
    multimodal: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _golden_min(f, a: float, b: float, tol: float = 1e-10) -> float:
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def optimal_window(chart: GrowthChart, search_domain: tuple[float, float] | None = None,
                   step: float = 0.01) -> OptimalWindow:
    """Covariate value where the chart's standard deviation is smallest.

    Scans the domain on a ``step`` grid, then refines the best grid cell by
    golden-section search.  A grid with several local minima is flagged
    ``multimodal``; the global grid minimum is still the one refined.
    Ties go to the smaller covariate.
    """
    _require_variance(chart)
    lo, hi = chart.domain if search_domain is None else search_domain
    if not hi > lo:
        raise ValueError("empty search domain")
    n = int(math.floor((hi - lo) / step + 1e-9))
    xs = lo + step * np.arange(n + 1)
    if xs[-1] < hi:
        xs = np.append(xs, hi)
    sd = np.asarray(chart.sd_at(xs))
    if np.ptp(sd) <= 1e-12 * float(np.max(sd)):
        return OptimalWindow(float(lo), float(chart.mean_at(lo)), float(sd[0]), constant_sd=True)

    interior = (sd[1:-1] < sd[:-2]) & (sd[1:-1] <= sd[2:])
    n_minima = int(interior.sum()) + int(sd[0] < sd[1]) + int(sd[-1] < sd[-2])
    i = int(np.argmin(sd))

    def f(v: float) -> float:
        return float(chart.sd_at(v))

    a, b = float(xs[max(i - 1, 0)]), float(xs[min(i + 1, len(xs) - 1)])
    refined = _golden_min(f, a, b)
    best_x, best_sd = float(xs[i]), float(sd[i])
    if f(refined) < best_sd:
        best_x, best_sd = refined, f(refined)
    return OptimalWindow(best_x, float(chart.mean_at(best_x)), best_sd, multimodal=n_minima > 1)


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TableRow:
    x: float
    mean: float
    sd: float | None
    weeks_days: str | None = None
    lower: float | None = None
    upper: float | None = None


def tabulate(chart: GrowthChart, start: float, stop: float, step: float = 1.0, *,
             with_band: bool = False, kappa: float | None = None) -> list[TableRow]:
    """One row per grid value from ``start`` to ``stop`` inclusive."""
    if not step > 0:
        raise ValueError("step must be positive")
    if stop < start:
        raise ValueError("stop must not precede start")
    lo, hi = chart.domain
    if start < lo or stop > hi:
        raise DomainError(f"chart {chart.name!r}: range [{start:g}, {stop:g}] leaves the domain [{lo:g}, {hi:g}]")
    n = int(math.floor((stop - start) / step + 1e-9))
    xs = start + step * np.arange(n + 1)
    means = chart.mean_at(xs)
    try:
        sds = chart.sd_at(xs)
    except DegenerateVarianceError:
        if with_band:
            raise
        warnings.warn(f"chart {chart.name!r}: variance at or below its floor; sd column left empty", stacklevel=2)
        sds = None
    if with_band and sds is None:
        raise UnsupportedOperationError(f"chart {chart.name!r} has no variance model for a band")
    k = chart.kappa if kappa is None else kappa
    fa_grid = chart.predicts is Predicts.CRL_FROM_FA
    rows = []
    for i, x in enumerate(xs):
        sd = None if sds is None else float(sds[i])
        wd = format_weeks_days(int(x)) if fa_grid and float(x).is_integer() else None
        lower = upper = None
        if with_band:
            lower, upper = float(means[i] - k * sd), float(means[i] + k * sd)
        rows.append(TableRow(float(x), float(means[i]), sd, wd, lower, upper))
    return rows


def _num(v: float | None, digits: int) -> str:
    return "" if v is None else f"{v:.{digits}g}"


def _columns(rows: Sequence[TableRow]) -> list[str]:
    cols = ["x"]
    if any(r.weeks_days is not None for r in rows):
        cols.append("weeks_days")
    cols += ["mean", "sd"]
    if any(r.lower is not None for r in rows):
        cols += ["lower", "upper"]
    return cols


def table_to_csv(rows: Sequence[TableRow], digits: int = 6) -> str:
    cols = _columns(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        out = []
        for c in cols:
            v = getattr(r, c)
            out.append(v if isinstance(v, str) else _num(v, digits))
        w.writerow(out)
    return buf.getvalue()


def table_to_text(rows: Sequence[TableRow], chart: GrowthChart, digits: int = 6) -> str:
    """Aligned plain-text table in the layout of a printed dating table."""
    if chart.predicts is Predicts.CRL_FROM_FA:
        heads = {"x": "FA (d)", "weeks_days": "weeks+days", "mean": "CRL (mm)", "sd": "SD (mm)"}
    else:
        heads = {"x": "CRL (mm)", "mean": "FA (d)", "sd": "SD (d)"}
    heads.update({"lower": "lower", "upper": "upper"})
    cols = _columns(rows)
    cells = [[heads[c] for c in cols]]
    for r in rows:
        cells.append([getattr(r, c) if c == "weeks_days" else _num(getattr(r, c), digits) for c in cols])
    widths = [max(len(str(row[j] or "")) for row in cells) for j in range(len(cols))]
    lines = ["  ".join(str(v or "").rjust(w) for v, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
