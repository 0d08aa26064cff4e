"""Leave-one-out comparison of fitted and published growth models."""

from __future__ import annotations

import enum
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import BasisSpec, Cohort, Covariate, GrowthChart
from .errors import DomainError, FoldError, GestaltError
from .regression import default_response, fit_heteroskedastic, fit_least_squares, fit_robust

TIE_RULE = "exact ties split overall credit 1/t among t tied models and pairwise credit 1/2 each"


class ModelKind(str, enum.Enum):
    REFIT = "REFIT"
    FIXED = "FIXED"


FIT_METHODS = ("ols", "gls", "robust")


@dataclass(frozen=True)
class ModelUnderTest:
    """A model entered into cross-validation.

    FIXED models wrap a published chart and never see the training folds;
    REFIT models are refitted on every fold with ``method``.
    """

    name: str
    kind: ModelKind
    chart: GrowthChart | None = None
    basis: BasisSpec | None = None
    method: str = "ols"
    variance_basis: BasisSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.kind is ModelKind.FIXED and self.chart is None:
            raise ValueError(f"FIXED model {self.name!r} needs a chart")
        if self.kind is ModelKind.REFIT:
            if self.basis is None:
                raise ValueError(f"REFIT model {self.name!r} needs a basis")
            if self.method not in FIT_METHODS:
                raise ValueError(f"unknown fit method {self.method!r}; choose from {FIT_METHODS}")

    @classmethod
    def fixed(cls, chart: GrowthChart, name: str | None = None) -> "ModelUnderTest":
        return cls(name or chart.name, ModelKind.FIXED, chart=chart)

    @classmethod
    def refit(cls, name: str, basis: BasisSpec, method: str = "ols",
              variance_basis: BasisSpec | None = None) -> "ModelUnderTest":
        return cls(name, ModelKind.REFIT, basis=basis, method=method, variance_basis=variance_basis)

    @property
    def covariate(self) -> Covariate:
        if self.kind is ModelKind.FIXED:
            return self.chart.input_covariate
        return Covariate.FA if self.basis.covariate is Covariate.GA else self.basis.covariate

    @property
    def response(self) -> Covariate:
        if self.kind is ModelKind.FIXED:
            return self.chart.response_covariate
        return default_response(self.basis)

    def train(self, cohort: Cohort):
        """Return a callable predicting the response at the public covariate."""
        if self.kind is ModelKind.FIXED:
            return self.chart.mean_at
        if self.method == "gls":
            fit = fit_heteroskedastic(cohort, self.basis, self.variance_basis)
        elif self.method == "robust":
            fit = fit_robust(cohort, self.basis)
        else:
            fit = fit_least_squares(cohort, self.basis)
        shift = 14.0 if self.basis.covariate is Covariate.GA else 0.0
        return lambda x: fit.mean(np.asarray(x, dtype=float) + shift)


@dataclass(frozen=True)
class ErrorSummary:
    """Statistics of prediction errors (prediction - observation)."""

    n: int
    min_abs: float
    median_abs: float
    mean_abs: float
    max_abs: float
    min: float
    median: float
    mean: float
    max: float
    std_dev: float | None
    median_abs_rel: float | None
    mean_abs_rel: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def error_summary(predictions, observations) -> ErrorSummary:
    """Summaries of signed, absolute and relative (percent) errors.

    ``std_dev`` is the n-1 sample standard deviation of signed errors and is
    None for a single point.  Observations equal to zero are left out of the
    relative statistics with a warning.
    """
    p = np.asarray(predictions, dtype=float)
    o = np.asarray(observations, dtype=float)
    if p.shape != o.shape or p.size == 0:
        raise ValueError("predictions and observations must be non-empty and of equal length")
    e = p - o
    a = np.abs(e)
    nz = o != 0
    if not np.all(nz):
        warnings.warn(f"{int((~nz).sum())} zero observations left out of relative errors", stacklevel=2)
    rel = a[nz] / np.abs(o[nz]) * 100.0
    return ErrorSummary(
        n=int(e.size),
        min_abs=float(a.min()),
        median_abs=float(np.median(a)),
        mean_abs=float(a.mean()),
        max_abs=float(a.max()),
        min=float(e.min()),
        median=float(np.median(e)),
        mean=float(e.mean()),
        max=float(e.max()),
        std_dev=float(e.std(ddof=1)) if e.size > 1 else None,
        median_abs_rel=float(np.median(rel)) if rel.size else None,
        mean_abs_rel=float(rel.mean()) if rel.size else None,
    )


@dataclass(frozen=True)
class PairwiseResult:
    a: str
    b: str
    count_a: float
    count_b: float
    n: int

    @property
    def percent_a(self) -> float:
        return 100.0 * self.count_a / self.n if self.n else 0.0

    @property
    def percent_b(self) -> float:
        return 100.0 * self.count_b / self.n if self.n else 0.0


@dataclass(frozen=True, eq=False)
class ValidationReport:
    models: tuple[str, ...]
    overall_counts: dict[str, float]
    n_compared: int
    pairwise: tuple[PairwiseResult, ...]
    summaries: dict[str, ErrorSummary]
    predictions: dict[str, np.ndarray]
    observations: np.ndarray
    exclusions: dict[str, tuple[int, ...]]
    metadata: dict = field(default_factory=dict)

    def percent(self, model: str) -> float:
        return 100.0 * self.overall_counts[model] / self.n_compared if self.n_compared else 0.0

    @property
    def ranking(self) -> list[str]:
        return sorted(self.models, key=lambda m: -self.overall_counts[m])

    def errors(self, model: str) -> np.ndarray:
        return self.predictions[model] - self.observations

    def to_dict(self) -> dict:
        return {
            "overall": [{"model": m, "count": self.overall_counts[m], "percent": self.percent(m)}
                        for m in self.ranking],
            "pairwise": [{"a": p.a, "b": p.b, "count_a": p.count_a, "count_b": p.count_b,
                          "percent_a": p.percent_a, "percent_b": p.percent_b, "n": p.n}
                         for p in self.pairwise],
            "summaries": {m: s.to_dict() for m, s in self.summaries.items()},
            "exclusions": {m: list(ix) for m, ix in self.exclusions.items()},
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render_text(self) -> str:
        return render_report(self)


def format_count(count: float, percent: float) -> str:
    """'192 (33.68)'; fractional tie credit keeps its decimals."""
    c = f"{int(count)}" if float(count).is_integer() else f"{count:g}"
    return f"{c} ({percent:.2f})"


def render_report(report: ValidationReport) -> str:
    models = list(report.models)
    label_w = 22
    col_w = max(14, *(len(m) + 2 for m in models))

    def row(label: str, cells: Sequence[str]) -> str:
        return label.ljust(label_w) + "".join(c.rjust(col_w) for c in cells)

    def fmt(v):
        return "NA" if v is None else f"{v:.4f}"

    def stat(m, attr):
        return fmt(getattr(report.summaries[m], attr)) if m in report.summaries else "NA"

    lines = [row("", models), "Number of best performances"]
    lines.append(row("Overall", [format_count(report.overall_counts[m], report.percent(m)) for m in models]))
    for p in report.pairwise:
        cells = []
        for m in models:
            if m == p.a:
                cells.append(format_count(p.count_a, p.percent_a))
            elif m == p.b:
                cells.append(format_count(p.count_b, p.percent_b))
            else:
                cells.append("*")
        lines.append(row(f"{p.a} vs {p.b}"[:label_w - 1], cells))
    lines.append("Absolute error")
    for label, attr in (("Min", "min_abs"), ("Median", "median_abs"), ("Mean", "mean_abs"), ("Max", "max_abs")):
        lines.append(row(label, [stat(m, attr) for m in models]))
    lines.append("Error")
    for label, attr in (("Min", "min"), ("Median", "median"), ("Mean", "mean"), ("Max", "max"),
                        ("Std dev.", "std_dev")):
        lines.append(row(label, [stat(m, attr) for m in models]))
    lines.append("Absolute relative error (%)")
    for label, attr in (("Median", "median_abs_rel"), ("Mean", "mean_abs_rel")):
        lines.append(row(label, [stat(m, attr) for m in models]))
    excluded = {m: len(ix) for m, ix in report.exclusions.items() if ix}
    if excluded:
        lines.append("Excluded (outside chart domain): " + ", ".join(f"{m}={c}" for m, c in excluded.items()))
    return "\n".join(lines)


def _threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    try:
        return max(1, int(os.environ.get("GESTALT_THREADS", "1")))
    except ValueError:
        return 1


def loocv_compare(cohort: Cohort, models: Sequence[ModelUnderTest], threads: int | None = None) -> ValidationReport:
    """Leave-one-out comparison scored by best-prediction counts.

    For each observation, REFIT models are trained on the other n-1 records
    (cohort weights included) and every model predicts the held-out one.
    A FIXED chart whose domain excludes the observation sits that fold out;
    the index is listed in ``exclusions``.  Folds may run on ``threads``
    workers (default: ``GESTALT_THREADS``); results are merged by fold index.
    """
    models = list(models)
    if len(models) < 2:
        raise ValueError("need at least two models to compare")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ValueError(f"model names must be unique: {names}")
    covs = {m.covariate for m in models}
    resps = {m.response for m in models}
    if len(covs) != 1 or len(resps) != 1:
        raise ValueError("all models must predict the same response from the same covariate")
    cov, resp = covs.pop(), resps.pop()
    x = np.asarray(cohort.column(cov))
    y = np.asarray(cohort.column(resp))
    n = len(cohort)
    fixed = {m.name: m.train(cohort) for m in models if m.kind is ModelKind.FIXED}

    def fold(i: int) -> list[float]:
        train = cohort.subset([j for j in range(n) if j != i]) if any(
            m.kind is ModelKind.REFIT for m in models) else cohort
        out = []
        for m in models:
            if m.kind is ModelKind.FIXED:
                try:
                    out.append(float(fixed[m.name](x[i])))
                except DomainError:
                    out.append(np.nan)
                continue
            try:
                predictor = m.train(train)
            except GestaltError as exc:
                raise FoldError(i, m.name, exc) from exc
            out.append(float(predictor(x[i])))
        return out

    workers = _threads(threads)
    if workers > 1 and n > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(fold, range(n)))
    else:
        rows = [fold(i) for i in range(n)]
    preds = np.array(rows, dtype=float).reshape(n, len(models))
    abs_err = np.abs(preds - y[:, None])

    overall = np.zeros(len(models))
    n_compared = 0
    for i in range(n):
        avail = np.isfinite(abs_err[i])
        if not avail.any():
            continue
        n_compared += 1
        best = np.min(abs_err[i, avail])
        tied = avail & (abs_err[i] == best)
        overall[tied] += 1.0 / tied.sum()

    pairwise = []
    for ia in range(len(models)):
        for ib in range(ia + 1, len(models)):
            ea, eb = abs_err[:, ia], abs_err[:, ib]
            both = np.isfinite(ea) & np.isfinite(eb)
            ea, eb = ea[both], eb[both]
            ties = float(np.sum(ea == eb))
            pairwise.append(PairwiseResult(names[ia], names[ib], float(np.sum(ea < eb)) + ties / 2,
                                           float(np.sum(eb < ea)) + ties / 2, int(both.sum())))

    summaries, predictions, exclusions = {}, {}, {}
    for j, name in enumerate(names):
        ok = np.isfinite(preds[:, j])
        exclusions[name] = tuple(int(i) for i in np.flatnonzero(~ok))
        predictions[name] = preds[:, j]
        if ok.any():
            summaries[name] = error_summary(preds[ok, j], y[ok])
    return ValidationReport(
        models=tuple(names),
        overall_counts={nm: float(c) for nm, c in zip(names, overall)},
        n_compared=n_compared,
        pairwise=tuple(pairwise),
        summaries=summaries,
        predictions=predictions,
        observations=y,
        exclusions=exclusions,
        metadata={"tie_rule": TIE_RULE, "covariate": cov.value, "response": resp.value,
                  "error_convention": "prediction - observation",
                  "excluded_folds": sum(len(v) for v in exclusions.values())},
    )
