"""Domain types for ages, measurements, regression bases and growth charts.

A :class:`GrowthChart` pairs a mean curve with an optional variance curve,
a validity domain and a coverage constant ``kappa``.  Charts are evaluated
strictly inside their domain; nothing here extrapolates silently.
"""

from __future__ import annotations

import datetime as _dt
import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import AmbiguityError, DegenerateVarianceError, DomainError

#: Days between the start of the last menstrual period and fertilization.
GA_OFFSET_DAYS = 14.0

#: Default floor on variance polynomials (mm^2 or d^2).
VARIANCE_FLOOR = 1e-9


class AgeKind(str, enum.Enum):
    FA = "FA"
    GA = "GA"


class Source(str, enum.Enum):
    IVF = "IVF"
    SPONTANEOUS = "SPONTANEOUS"


class Covariate(str, enum.Enum):
    FA = "FA"
    GA = "GA"
    CRL = "CRL"


class Predicts(str, enum.Enum):
    CRL_FROM_FA = "CRL_from_FA"
    FA_FROM_CRL = "FA_from_CRL"


class ResponseTransform(str, enum.Enum):
    IDENTITY = "identity"
    SQUARE = "square"


# --------------------------------------------------------------------------
# Ages
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Age:
    """An age in days, either foetal (since fertilization) or gestational."""

    value: float
    kind: AgeKind = AgeKind.FA

    def __post_init__(self):
        object.__setattr__(self, "kind", AgeKind(self.kind))
        if not math.isfinite(self.value) or self.value < 0:
            raise DomainError(f"age must be finite and non-negative, got {self.value!r}")


def convert_age(age: Age, target: AgeKind | str) -> Age:
    """Convert between foetal age and gestational age (GA = FA + 14 d)."""
    target = AgeKind(target)
    if age.kind is target:
        return age
    if target is AgeKind.GA:
        return Age(age.value + GA_OFFSET_DAYS, AgeKind.GA)
    if age.value < GA_OFFSET_DAYS:
        raise DomainError(f"GA {age.value} d is below {GA_OFFSET_DAYS:g} d; no foetal age exists")
    return Age(age.value - GA_OFFSET_DAYS, AgeKind.FA)


def fa_to_weeks_days(fa_days: int) -> tuple[int, int]:
    """Split a whole number of days into (weeks, remaining days)."""
    if int(fa_days) != fa_days:
        raise DomainError(f"expected a whole number of days, got {fa_days!r}")
    fa_days = int(fa_days)
    if fa_days < 0:
        raise DomainError(f"negative age: {fa_days}")
    return divmod(fa_days, 7)


def format_weeks_days(fa_days: int) -> str:
    weeks, days = fa_to_weeks_days(fa_days)
    return f"{weeks} + {days}"


# --------------------------------------------------------------------------
# Measurements and cohorts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Measurement:
    """One scan: foetal age (days) and crown-rump length (mm)."""

    pregnancy_id: str
    exam_date: _dt.date | None
    fa_days: float
    crl_mm: float
    weight: float = 1.0
    source: Source = Source.SPONTANEOUS
    flags: tuple[tuple[str, bool], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "source", Source(self.source))
        for name in ("fa_days", "crl_mm", "weight"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise DomainError(f"{name} must be finite and positive, got {v!r} "
                                  f"(pregnancy {self.pregnancy_id!r})")

    @property
    def age(self) -> Age:
        return Age(self.fa_days, AgeKind.FA)

    def flag(self, name: str) -> bool | None:
        for key, value in self.flags:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class Cohort:
    """Immutable ordered collection of measurements.

    Column arrays (``fa``, ``crl``, ``weights``) are computed once and
    returned read-only.
    """

    measurements: tuple[Measurement, ...] = ()
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "measurements", tuple(self.measurements))

    def __len__(self) -> int:
        return len(self.measurements)

    def __iter__(self) -> Iterator[Measurement]:
        return iter(self.measurements)

    def __getitem__(self, i: int) -> Measurement:
        return self.measurements[i]

    @staticmethod
    def _readonly(values) -> np.ndarray:
        a = np.asarray(values, dtype=float)
        a.flags.writeable = False
        return a

    @cached_property
    def fa(self) -> np.ndarray:
        return self._readonly([m.fa_days for m in self.measurements])

    @cached_property
    def crl(self) -> np.ndarray:
        return self._readonly([m.crl_mm for m in self.measurements])

    @cached_property
    def weights(self) -> np.ndarray:
        return self._readonly([m.weight for m in self.measurements])

    @property
    def ids(self) -> list[str]:
        return [m.pregnancy_id for m in self.measurements]

    def column(self, covariate: Covariate | str) -> np.ndarray:
        covariate = Covariate(covariate)
        if covariate is Covariate.FA:
            return self.fa
        if covariate is Covariate.GA:
            return self.fa + GA_OFFSET_DAYS
        return self.crl

    def subset(self, indices: Iterable[int], provenance: str | None = None) -> "Cohort":
        ms = tuple(self.measurements[i] for i in indices)
        return Cohort(ms, self.provenance if provenance is None else provenance)

    def with_weights(self, weights: Sequence[float], provenance: str | None = None) -> "Cohort":
        if len(weights) != len(self):
            raise ValueError("weights length does not match cohort size")
        ms = tuple(replace(m, weight=float(w)) for m, w in zip(self.measurements, weights))
        return Cohort(ms, self.provenance if provenance is None else provenance)

    @classmethod
    def from_arrays(cls, fa, crl, weights=None, ids=None, source=Source.SPONTANEOUS,
                    exam_date: _dt.date | None = None, provenance: str = "") -> "Cohort":
        fa = np.asarray(fa, dtype=float)
        crl = np.asarray(crl, dtype=float)
        if fa.shape != crl.shape:
            raise ValueError("fa and crl must have the same length")
        n = fa.size
        weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        if ids is None:
            width = max(5, len(str(n)))
            ids = [f"p{i:0{width}d}" for i in range(1, n + 1)]
        ms = tuple(
            Measurement(str(pid), exam_date, float(f), float(c), float(w), source)
            for pid, f, c, w in zip(ids, fa, crl, weights)
        )
        return cls(ms, provenance)


# --------------------------------------------------------------------------
# Bases and models
# --------------------------------------------------------------------------

TERMS = ("1", "x", "x2", "sqrtx")

_TERM_FUNCS = {
    "1": lambda x: np.ones_like(x),
    "x": lambda x: x,
    "x2": lambda x: x * x,
    "sqrtx": np.sqrt,
}


@dataclass(frozen=True)
class BasisSpec:
    """Ordered regression terms in one covariate."""

    covariate: Covariate
    terms: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "covariate", Covariate(self.covariate))
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ValueError("basis needs at least one term")
        unknown = [t for t in self.terms if t not in _TERM_FUNCS]
        if unknown:
            raise ValueError(f"unknown basis terms {unknown}; allowed: {list(TERMS)}")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError(f"duplicate basis terms in {self.terms}")

    def __len__(self) -> int:
        return len(self.terms)

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if "sqrtx" in self.terms and np.any(x < 0):
            raise DomainError("square-root term evaluated at a negative covariate")
        return np.column_stack([_TERM_FUNCS[t](x) for t in self.terms]) if x.ndim else \
            np.array([_TERM_FUNCS[t](x) for t in self.terms], dtype=float)

    def drop_last(self) -> "BasisSpec":
        return BasisSpec(self.covariate, self.terms[:-1])

    def describe(self, coefficients: Sequence[float]) -> str:
        var = self.covariate.value
        names = {"1": "", "x": f" {var}", "x2": f" {var}^2", "sqrtx": f" sqrt({var})"}
        parts = [f"{c:+.6g}{names[t]}" for c, t in zip(coefficients, self.terms)]
        return " ".join(parts)


def quadratic_basis(covariate: Covariate | str = Covariate.FA) -> BasisSpec:
    return BasisSpec(Covariate(covariate), ("1", "x", "x2"))


def dating_basis() -> BasisSpec:
    return BasisSpec(Covariate.CRL, ("1", "sqrtx", "x"))


@dataclass(frozen=True)
class MeanModel:
    """Linear combination of basis terms, optionally squared on output.

    Evaluated at the basis' own covariate (GA for a GA-based curve).
    """

    basis: BasisSpec
    coefficients: tuple[float, ...]
    response_transform: ResponseTransform = ResponseTransform.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, "response_transform", ResponseTransform(self.response_transform))
        if len(self.coefficients) != len(self.basis):
            raise ValueError(f"{len(self.coefficients)} coefficients for {len(self.basis)} basis terms")

    def linear(self, x):
        return self.basis.design(x) @ np.asarray(self.coefficients)

    def __call__(self, x):
        inner = self.linear(x)
        if self.response_transform is ResponseTransform.SQUARE:
            if np.any(inner < 0):
                raise DomainError("square-root-scale model is negative here; squaring it is meaningless")
            return inner * inner
        return inner


@dataclass(frozen=True)
class VarianceModel:
    """Polynomial model of the residual variance."""

    basis: BasisSpec
    coefficients: tuple[float, ...]
    floor: float = VARIANCE_FLOOR
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if len(self.coefficients) != len(self.basis):
            raise ValueError(f"{len(self.coefficients)} coefficients for {len(self.basis)} basis terms")
        if not self.floor > 0:
            raise ValueError("variance floor must be positive")

    def variance(self, x):
        return self.basis.design(x) @ np.asarray(self.coefficients)

    def sd(self, x):
        """sqrt(max(variance, floor)); never raises (see GrowthChart.evaluate)."""
        return np.sqrt(np.maximum(self.variance(x), self.floor))


# --------------------------------------------------------------------------
# Charts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrectiveFactor:
    """Subtract ``absolute + relative * raw`` from the raw prediction."""

    absolute: float
    relative: float

    def apply(self, raw):
        return raw - (self.absolute + self.relative * raw)


@dataclass(frozen=True)
class GrowthChart:
    """Mean curve plus optional variance curve over a closed domain.

    ``domain`` is expressed in the chart's public input: FA days for
    ``CRL_from_FA`` charts and CRL mm for ``FA_from_CRL`` charts.  When the
    mean basis is written in GA (literature curves), inputs are shifted by
    14 days before evaluation; ``response_age`` = GA shifts outputs back.
    """

    name: str
    mean: MeanModel
    variance: VarianceModel | None = None
    kappa: float = 1.96
    domain: tuple[float, float] = (26.0, 85.0)
    predicts: Predicts = Predicts.CRL_FROM_FA
    citation: str = ""
    response_age: AgeKind = AgeKind.FA
    corrective_factor: CorrectiveFactor | None = None

    def __post_init__(self):
        object.__setattr__(self, "predicts", Predicts(self.predicts))
        object.__setattr__(self, "response_age", AgeKind(self.response_age))
        lo, hi = (float(v) for v in self.domain)
        object.__setattr__(self, "domain", (lo, hi))
        if not lo < hi:
            raise ValueError(f"chart {self.name!r}: domain lower bound must be below upper bound")
        if not self.kappa > 0:
            raise ValueError(f"chart {self.name!r}: kappa must be positive")
        expected = (Covariate.CRL,) if self.predicts is Predicts.FA_FROM_CRL else (Covariate.FA, Covariate.GA)
        for model in (self.mean, self.variance):
            if model is not None and model.basis.covariate not in expected:
                raise ValueError(f"chart {self.name!r}: basis covariate {model.basis.covariate.value} "
                                 f"does not fit a {self.predicts.value} chart")

    @property
    def input_covariate(self) -> Covariate:
        return Covariate.CRL if self.predicts is Predicts.FA_FROM_CRL else Covariate.FA

    @property
    def response_covariate(self) -> Covariate:
        return Covariate.FA if self.predicts is Predicts.FA_FROM_CRL else Covariate.CRL

    def _check_domain(self, x: np.ndarray) -> None:
        lo, hi = self.domain
        bad = ~((x >= lo) & (x <= hi))
        if np.any(bad):
            first = x[bad].flat[0]
            raise DomainError(f"chart {self.name!r}: {self.input_covariate.value}={first:g} "
                              f"is outside the domain [{lo:g}, {hi:g}]")

    def _to_basis(self, x: np.ndarray, basis: BasisSpec) -> np.ndarray:
        if basis.covariate is Covariate.GA:
            return x + GA_OFFSET_DAYS
        return x

    def mean_at(self, x, apply_correction: bool = False):
        x = np.asarray(x, dtype=float)
        self._check_domain(x)
        y = self.mean(self._to_basis(x, self.mean.basis))
        if apply_correction:
            if self.corrective_factor is None:
                raise ValueError(f"chart {self.name!r} has no corrective factor")
            y = self.corrective_factor.apply(y)
        if self.response_age is AgeKind.GA:
            y = y - GA_OFFSET_DAYS
        return y

    def variance_at(self, x):
        if self.variance is None:
            return None
        x = np.asarray(x, dtype=float)
        self._check_domain(x)
        return self.variance.variance(self._to_basis(x, self.variance.basis))

    def sd_at(self, x):
        """Standard deviation; raises on variance at or below the floor."""
        v = self.variance_at(x)
        if v is None:
            return None
        v = np.asarray(v)
        if np.any(v <= self.variance.floor):
            xa = np.asarray(x, dtype=float)
            where = xa[v <= self.variance.floor].flat[0] if xa.ndim else float(xa)
            raise DegenerateVarianceError(f"chart {self.name!r}: variance {float(v.min()):.3g} is at or below "
                                          f"the floor {self.variance.floor:g} at x={where:g}")
        return np.sqrt(v)


def evaluate(chart: GrowthChart, x, apply_correction: bool = False):
    """Mean and standard deviation of ``chart`` at ``x``.

    Returns ``(mean, sd)``; ``sd`` is None for charts without a variance
    model.  Scalars in, floats out; arrays in, arrays out.
    """
    mean = chart.mean_at(x, apply_correction=apply_correction)
    sd = chart.sd_at(x)
    if np.ndim(x) == 0:
        return float(mean), (None if sd is None else float(sd))
    return mean, sd


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------

_Q = ("1", "x", "x2")
_D = ("1", "sqrtx", "x")
_FA_DOMAIN = (26.0, 85.0)
_CRL_DOMAIN = (1.0, 84.0)


def _crl_chart(name, coefs, var=None, *, covariate=Covariate.FA, kappa=1.96, domain=_FA_DOMAIN,
               citation="", transform=ResponseTransform.IDENTITY, corrective=None) -> GrowthChart:
    basis = BasisSpec(covariate, _Q)
    variance = VarianceModel(basis, var) if var is not None else None
    return GrowthChart(name, MeanModel(basis, coefs, transform), variance, kappa, domain,
                       Predicts.CRL_FROM_FA, citation, corrective_factor=corrective)


def _fa_chart(name, coefs, var=None, *, terms=_D, response_age=AgeKind.FA, citation="") -> GrowthChart:
    basis = BasisSpec(Covariate.CRL, terms)
    variance = VarianceModel(BasisSpec(Covariate.CRL, _D), var) if var is not None else None
    return GrowthChart(name, MeanModel(basis, coefs), variance, 1.96, _CRL_DOMAIN,
                       Predicts.FA_FROM_CRL, citation, response_age=response_age)


def _builtin_charts() -> list[GrowthChart]:
    return [
        _crl_chart("eq1_ivf_crl", (-3.3108, -0.2087, 1.5250e-2), (46.2354, -2.0194, 0.0230),
                   citation="IVF cohort, robust regression, CRL from FA (R2 = 73.79%)"),
        _crl_chart("eq2_spont_crl", (-4.1212, -0.1824, 0.0148), (-53.1054, 2.5634, -0.0189), kappa=1.85,
                   citation="Spontaneous cohort, heteroskedastic regression, CRL from FA (R2 = 78.48%). "
                            "kappa = 1.85 from calibration; the companion figure draws the band with kappa = 1.96."),
        _fa_chart("eq3_spont_fa", (19.1732, 6.0266, 0.0955), (33.1275, -4.9440, 0.2270),
                  citation="Spontaneous cohort, heteroskedastic regression, FA from CRL (R2 = 99.71%)"),
        _fa_chart("eq4_ivf_fa", (18.0739, 5.6925, 0.1549), (7.3281, -1.6397, 0.1688),
                  citation="IVF cohort, heteroskedastic regression, FA from CRL (R2 = 99.87%)"),
        _fa_chart("eq7_ivf_fa_robust", (17.8994, 5.7617, 0.1471), (7.3281, -1.6397, 0.1688),
                  citation="IVF cohort, robust regression, FA from CRL"),
        _fa_chart("eq8_spont_fa_robust", (19.2702, 5.7804, 0.1271), (41.8353, -8.3486, 0.5198),
                  citation="Spontaneous cohort, robust regression, FA from CRL"),
        _crl_chart("robinson_crl", (7.295, -0.6444, 0.0144), covariate=Covariate.GA,
                   corrective=CorrectiveFactor(1.0, 0.037),
                   citation="Robinson (1973), CRL from GA. Original corrective factor (1 mm + 3.7%) "
                            "is available as an evaluation flag, off by default."),
        _fa_chart("robinson_fa", (23.73, 8.052), terms=("1", "sqrtx"), response_age=AgeKind.GA,
                  citation="Robinson (1975), GA from CRL"),
        _crl_chart("papaioannou_crl", (-6.662367, 0.246741, -0.001046), covariate=Covariate.GA,
                   transform=ResponseTransform.SQUARE, domain=(26.0, 61.0),
                   citation="Papaioannou et al. (2010), sqrt(CRL) from GA; fitted on GA 40-75 d"),
        _fa_chart("papaioannou_ga", (39.811963, 1.155896, -0.006429), terms=_Q, response_age=AgeKind.GA,
                  citation="Papaioannou et al. (2010), GA from CRL"),
        _crl_chart("pexsters_crl", (-9.09, -0.26, 0.012), covariate=Covariate.GA,
                   citation="Pexsters et al. (2010), CRL from GA"),
        _crl_chart("verwoerd_crl", (9.0963, -0.751165, 0.015508), (0.2814, -0.006087, 0.000043),
                   covariate=Covariate.GA, citation="Verwoerd-Dikkeboom et al. (2010), CRL from GA, 3D"),
    ]


class ReferenceRegistry:
    """Read-only name -> chart mapping."""

    def __init__(self, charts: Iterable[GrowthChart]):
        self._charts = {c.name: c for c in charts}

    def __contains__(self, name: str) -> bool:
        return name in self._charts

    def __iter__(self):
        return iter(self._charts)

    def __len__(self) -> int:
        return len(self._charts)

    def names(self) -> list[str]:
        return list(self._charts)

    def lookup(self, name: str) -> GrowthChart:
        from .errors import NotFoundError

        try:
            return self._charts[name]
        except KeyError:
            raise NotFoundError(f"no chart named {name!r}; available: {', '.join(self._charts)}") from None


REGISTRY = ReferenceRegistry(_builtin_charts())


def lookup(name: str, registry: ReferenceRegistry | None = None) -> GrowthChart:
    return (registry or REGISTRY).lookup(name)


# --------------------------------------------------------------------------
# Curve intersection
# --------------------------------------------------------------------------


def _bisect(f, lo: float, hi: float, tol: float) -> float:
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0:
            return mid
        if (fmid < 0) == (flo < 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def curve_intersection(a: MeanModel, b: MeanModel, lo: float, hi: float, *,
                       step: float = 0.01, tol: float = 1e-9) -> float | None:
    """Single crossing of two mean curves inside [lo, hi].

    Sign changes of ``a - b`` are bracketed on a grid of ``step`` and
    refined by bisection.  Returns None when the curves never cross.
    """
    if a.basis.covariate is not b.basis.covariate:
        raise ValueError("curves are written in different covariates")
    if ResponseTransform.SQUARE in (a.response_transform, b.response_transform):
        raise ValueError("intersection requires identity response transforms")
    if not hi > lo:
        raise ValueError("degenerate search range")

    n = max(1, math.ceil((hi - lo) / step - 1e-9))
    xs = np.linspace(lo, hi, n + 1)
    d = np.asarray(a(xs) - b(xs))
    s = np.sign(d)
    if not np.any(s):
        return None

    roots: list[float] = []
    brackets: list[tuple[float, float]] = []
    i = 0
    while i < len(xs):
        if s[i] == 0:
            j = i
            while j + 1 < len(xs) and s[j + 1] == 0:
                j += 1
            roots.append(float(xs[i]) if i == j else 0.5 * float(xs[i] + xs[j]))
            brackets.append((float(xs[max(i - 1, 0)]), float(xs[min(j + 1, len(xs) - 1)])))
            i = j + 1
            continue
        if i + 1 < len(xs) and s[i] * s[i + 1] < 0:
            brackets.append((float(xs[i]), float(xs[i + 1])))
            roots.append(math.nan)
        i += 1

    if not brackets:
        return None
    if len(brackets) > 1:
        raise AmbiguityError(f"{len(brackets)} crossings in [{lo:g}, {hi:g}]: {brackets}", brackets)
    if not math.isnan(roots[0]):
        return roots[0]

    def diff(x: float) -> float:
        return float(a(np.array(x)) - b(np.array(x)))

    return _bisect(diff, *brackets[0], tol)
