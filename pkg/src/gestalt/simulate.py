"""Seeded synthetic cohorts drawn from a growth chart.

Generator algorithm (fixed; changing it changes every simulated file):

1. ``rng = numpy.random.default_rng(seed)`` (PCG64).
2. Covariates: ``rng.uniform(lo, hi, n)`` or, for an empirical list,
   ``rng.choice(values, n, replace=True)``.
3. Standard noise ``e = rng.standard_normal(n)`` (``rng.uniform(-sqrt(3),
   sqrt(3), n)`` for uniform noise, which has unit variance), scaled by
   the chart sd or the constant sd, added to the chart mean.
4. Non-positive responses are redrawn, in index order, from the same
   stream until positive (a truncated normal at zero).
5. ``perm = rng.permutation(n)``; the first ``round(fraction * n)``
   indices of ``perm`` (halves away from zero) get ``+offset``.
"""

from __future__ import annotations

import datetime as dt
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .charts_io import chart_from_dict
from .core import Cohort, GrowthChart, Predicts, Source, lookup
from .errors import ConfigError, DomainError, UnsupportedOperationError
from .pipeline import round_half_away

#: Exam date stamped on every simulated record.
SIM_EXAM_DATE = dt.date(2000, 1, 1)
_MAX_REDRAWS = 1000


class NoiseKind(str, enum.Enum):
    CHART_VARIANCE = "chart_variance"
    CONSTANT_SD = "constant_sd"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class CovariateDist:
    """``uniform`` on [lo, hi] or ``empirical`` resampling of ``values``."""

    kind: str = "uniform"
    lo: float | None = None
    hi: float | None = None
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("uniform", "empirical"):
            raise ValueError(f"unknown covariate distribution {self.kind!r}")
        if self.kind == "empirical":
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
            if not self.values:
                raise ValueError("empirical distribution needs at least one value")

    def bounds(self, domain: tuple[float, float]) -> tuple[float, float]:
        if self.kind == "empirical":
            return min(self.values), max(self.values)
        lo = domain[0] if self.lo is None else float(self.lo)
        hi = domain[1] if self.hi is None else float(self.hi)
        return lo, hi


@dataclass(frozen=True)
class SimSpec:
    chart: GrowthChart
    n: int
    covariate_dist: CovariateDist = field(default_factory=CovariateDist)
    noise: NoiseKind = NoiseKind.CHART_VARIANCE
    noise_sd: float = 0.0
    contamination_fraction: float = 0.0
    contamination_offset: float = 0.0
    seed: int = 0
    source: Source = Source.SPONTANEOUS

    def __post_init__(self):
        object.__setattr__(self, "noise", NoiseKind(self.noise))
        object.__setattr__(self, "source", Source(self.source))
        if int(self.n) != self.n or self.n <= 0:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if not 0 <= self.contamination_fraction < 0.5:
            raise ValueError("contamination fraction must lie in [0, 0.5)")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.noise is NoiseKind.CONSTANT_SD and not self.noise_sd >= 0:
            raise ValueError("constant noise sd must be non-negative")
        if self.noise is not NoiseKind.CONSTANT_SD and self.chart.variance is None:
            raise UnsupportedOperationError(f"chart {self.chart.name!r} has no variance model for {self.noise.value} noise")
        lo, hi = self.covariate_dist.bounds(self.chart.domain)
        dlo, dhi = self.chart.domain
        if not (dlo <= lo <= hi <= dhi):
            raise DomainError(f"covariate range [{lo:g}, {hi:g}] leaves chart {self.chart.name!r} "
                              f"domain [{dlo:g}, {dhi:g}]")

    @property
    def contaminated_count(self) -> int:
        return round_half_away(self.contamination_fraction * self.n)


@dataclass(frozen=True, eq=False)
class Simulation:
    cohort: Cohort
    covariate: np.ndarray
    response: np.ndarray
    contaminated: np.ndarray  # indices that received the offset


def simulate(spec: SimSpec) -> Simulation:
    """Draw a cohort from ``spec`` and report which records were contaminated."""
    chart, n = spec.chart, int(spec.n)
    rng = np.random.default_rng(int(spec.seed))
    dist = spec.covariate_dist
    if dist.kind == "uniform":
        lo, hi = dist.bounds(chart.domain)
        x = rng.uniform(lo, hi, n)
    else:
        x = rng.choice(np.asarray(dist.values), n, replace=True)

    mean = np.asarray(chart.mean_at(x), dtype=float)
    if spec.noise is NoiseKind.CONSTANT_SD:
        sd = np.full(n, float(spec.noise_sd))
    else:
        sd = np.asarray(chart.sd_at(x), dtype=float)

    def draw(size: int) -> np.ndarray:
        if spec.noise is NoiseKind.UNIFORM:
            return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)
        return rng.standard_normal(size)

    y = mean + sd * draw(n)
    for _ in range(_MAX_REDRAWS):
        bad = np.flatnonzero(y <= 0)
        if bad.size == 0:
            break
        y[bad] = mean[bad] + sd[bad] * draw(bad.size)
    else:
        raise DomainError(f"could not draw positive responses for {int((y <= 0).sum())} records")

    perm = rng.permutation(n)
    hit = np.sort(perm[:spec.contaminated_count])
    y[hit] += spec.contamination_offset
    if np.any(y <= 0):
        raise DomainError("contamination offset drives responses to non-positive values")

    if chart.predicts is Predicts.CRL_FROM_FA:
        fa, crl = x, y
    else:
        # mean_at already reports FA for GA-response charts
        fa, crl = y, x
    cohort = Cohort.from_arrays(fa, crl, source=spec.source, exam_date=SIM_EXAM_DATE,
                                provenance=f"simulated from {chart.name} (seed {spec.seed})")
    return Simulation(cohort, x, y, hit)


def simulate_cohort(spec: SimSpec) -> Cohort:
    return simulate(spec).cohort


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

_SPEC_KEYS = {"chart", "n", "covariate_dist", "noise", "contamination", "seed", "source"}


def _only(doc: dict, allowed: set[str], where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")


def simspec_from_dict(doc: dict[str, Any], seed: int | None = None) -> SimSpec:
    """Build a :class:`SimSpec` from parsed JSON; ``seed`` overrides the file.

    ``chart`` is a registry name or an inline chart document.  Example::

        {"chart": "eq2_spont_crl", "n": 513,
         "covariate_dist": {"kind": "uniform", "lo": 26, "hi": 85},
         "noise": {"kind": "chart_variance"},
         "contamination": {"fraction": 0.1, "offset": 30.0}}
    """
    _only(doc, _SPEC_KEYS, "simulation spec")
    if "chart" not in doc or "n" not in doc:
        raise ConfigError("simulation spec needs 'chart' and 'n'")
    chart = lookup(doc["chart"]) if isinstance(doc["chart"], str) else chart_from_dict(doc["chart"])

    cd = doc.get("covariate_dist", {"kind": "uniform"})
    _only(cd, {"kind", "lo", "hi", "values"}, "covariate_dist")
    noise = doc.get("noise", {"kind": "chart_variance"})
    _only(noise, {"kind", "sd"}, "noise")
    cont = doc.get("contamination", {})
    _only(cont, {"fraction", "offset"}, "contamination")
    if seed is None:
        if "seed" not in doc:
            raise ConfigError("no seed given")
        seed = doc["seed"]
    try:
        return SimSpec(
            chart=chart,
            n=doc["n"],
            covariate_dist=CovariateDist(cd.get("kind", "uniform"), cd.get("lo"), cd.get("hi"),
                                         tuple(cd.get("values", ()))),
            noise=NoiseKind(noise.get("kind", "chart_variance")),
            noise_sd=float(noise.get("sd", 0.0)),
            contamination_fraction=float(cont.get("fraction", 0.0)),
            contamination_offset=float(cont.get("offset", 0.0)),
            seed=int(seed),
            source=Source(str(doc.get("source", "SPONTANEOUS")).upper()),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise ConfigError(f"invalid simulation spec: {exc}") from exc


def load_simspec(path, seed: int | None = None) -> SimSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return simspec_from_dict(doc, seed)


def uniform_spec(chart: GrowthChart, n: int, seed: int, *, lo: float | None = None, hi: float | None = None,
                 noise: NoiseKind | str = NoiseKind.CHART_VARIANCE, noise_sd: float = 0.0,
                 fraction: float = 0.0, offset: float = 0.0) -> SimSpec:
    """Shorthand for the common uniform-covariate spec."""
    return SimSpec(chart, n, CovariateDist("uniform", lo, hi), NoiseKind(noise), noise_sd,
                   fraction, offset, seed)
