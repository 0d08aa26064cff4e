"""Strict JSON configuration for the cleaning and fitting pipeline."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .core import BasisSpec, Cohort, Covariate, Predicts, dating_basis, quadratic_basis
from .errors import ConfigError
from .pipeline import TrimReport, dedup_first_exam, reweight_split, select_eligible, trim_outliers
from .validation import FIT_METHODS


@dataclass(frozen=True)
class SelectConfig:
    enabled: bool = True
    max_crl: float = 85.0
    require_flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrimConfig:
    enabled: bool = True
    lower_frac: float = 0.045
    upper_frac: float = 0.039


@dataclass(frozen=True)
class ReweightConfig:
    enabled: bool = False
    threshold_crl: float = 45.0


@dataclass(frozen=True)
class FitConfig:
    method: str = "gls"
    predicts: str = "CRL_from_FA"
    mean_terms: tuple[str, ...] | None = None
    variance_terms: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.method not in FIT_METHODS:
            raise ConfigError(f"fit.method must be one of {FIT_METHODS}, got {self.method!r}")
        try:
            Predicts(self.predicts)
        except ValueError:
            raise ConfigError(f"fit.predicts must be one of {[p.value for p in Predicts]}") from None

    def bases(self) -> tuple[BasisSpec, BasisSpec]:
        if Predicts(self.predicts) is Predicts.CRL_FROM_FA:
            cov, default = Covariate.FA, quadratic_basis()
        else:
            cov, default = Covariate.CRL, dating_basis()
        try:
            mean = default if self.mean_terms is None else BasisSpec(cov, tuple(self.mean_terms))
            var = default if self.variance_terms is None else BasisSpec(cov, tuple(self.variance_terms))
        except ValueError as exc:
            raise ConfigError(f"fit: {exc}") from exc
        return mean, var


@dataclass(frozen=True)
class KappaConfig:
    policy: str = "fixed"  # or "calibrate"
    value: float = 1.96
    coverage: float = 0.95

    def __post_init__(self):
        if self.policy not in ("fixed", "calibrate"):
            raise ConfigError(f"kappa.policy must be 'fixed' or 'calibrate', got {self.policy!r}")
        if not 0 < self.coverage < 1:
            raise ConfigError("kappa.coverage must lie in (0, 1)")


@dataclass(frozen=True)
class OutputConfig:
    chart: str | None = None
    diagnostics: str | None = None
    cleaned: str | None = None
    trim_report: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    dedup: bool = True
    select: SelectConfig = field(default_factory=SelectConfig)
    trim: TrimConfig = field(default_factory=TrimConfig)
    reweight: ReweightConfig = field(default_factory=ReweightConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    kappa: KappaConfig = field(default_factory=KappaConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)


def _coerce(value: Any, hint: Any, where: str) -> Any:
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, where)
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if origin is tuple:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{where} must be a list of strings")
        return tuple(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    raise ConfigError(f"{where}: unsupported type")


def _build(cls, doc: Any, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}") for k, v in doc.items()}
    return cls(**kwargs)


def config_from_dict(doc: dict[str, Any]) -> PipelineConfig:
    """Parse a config document; unknown keys and wrong types are rejected."""
    return _build(PipelineConfig, doc, "config")


def load_config(path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc)


@dataclass(frozen=True)
class CleanResult:
    cohort: Cohort
    trim: TrimReport | None
    counts: dict[str, int]


def run_stages(cohort: Cohort, cfg: PipelineConfig) -> CleanResult:
    """dedup -> select -> trim -> reweight, each stage switchable."""
    counts = {"loaded": len(cohort)}
    if cfg.dedup:
        cohort = dedup_first_exam(cohort)
        counts["dedup"] = len(cohort)
    if cfg.select.enabled:
        cohort = select_eligible(cohort, cfg.select.max_crl, cfg.select.require_flags)
        counts["select"] = len(cohort)
    report = None
    if cfg.trim.enabled:
        mean_basis, _ = cfg.fit.bases()
        report = trim_outliers(cohort, mean_basis, cfg.trim.lower_frac, cfg.trim.upper_frac)
        cohort = report.kept
        counts["trim"] = len(cohort)
    if cfg.reweight.enabled:
        cohort = reweight_split(cohort, cfg.reweight.threshold_crl)
    return CleanResult(cohort, report, counts)
