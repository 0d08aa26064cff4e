"""Cohort ingestion and the data-preparation chain.

Stages run in a fixed order: load -> dedup -> select -> trim -> reweight.
Each returns a new :class:`~gestalt.core.Cohort`; inputs are never touched.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import BasisSpec, Cohort, Measurement, Source, quadratic_basis
from .errors import DomainError, ImbalanceWarning, LoadError, ReweightError
from .regression import BISQUARE_TUNING, fit_robust

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("pregnancy_id", "exam_date", "fa_days", "crl_mm", "source")
OPTIONAL_COLUMNS = ("weight",)
#: Optional eligibility columns; see :func:`select_eligible`.
FLAG_COLUMNS = ("regular_cycle", "no_contraception")

_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}

#: Largest per-record weight reweight_split accepts without a warning.
IMBALANCE_LIMIT = 10.0


def round_half_away(value: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _parse_flag(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_row(row: dict[str, str], has_weight: bool, flag_cols: list[str]) -> Measurement:
    pid = row["pregnancy_id"].strip()
    if not pid:
        raise ValueError("empty pregnancy_id")
    date_text = row["exam_date"].strip()
    exam_date = dt.date.fromisoformat(date_text) if date_text else None
    fa = float(row["fa_days"])
    crl = float(row["crl_mm"])
    if not (math.isfinite(fa) and fa > 0):
        raise ValueError(f"fa_days must be positive, got {row['fa_days']!r}")
    if not (math.isfinite(crl) and crl > 0):
        raise ValueError(f"crl_mm must be positive, got {row['crl_mm']!r}")
    source = Source(row["source"].strip().upper())
    weight = 1.0
    if has_weight and row["weight"].strip():
        weight = float(row["weight"])
    flags = tuple((c, _parse_flag(row[c])) for c in flag_cols if row[c].strip())
    return Measurement(pid, exam_date, fa, crl, weight, source, flags)


def load_cohort(path, strict: bool = True) -> Cohort:
    """Read a cohort CSV.

    Header: ``pregnancy_id,exam_date,fa_days,crl_mm,source[,weight]`` plus
    optional ``regular_cycle`` / ``no_contraception`` boolean columns.  In
    strict mode any bad row aborts the load; otherwise bad rows are skipped
    with a warning naming their line.
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise LoadError(f"{path}: empty file, header row required") from None
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise LoadError(f"{path}: duplicate header columns: {', '.join(dupes)}")
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise LoadError(f"{path}: missing required columns: {', '.join(missing)}")
        has_weight = "weight" in header
        flag_cols = [c for c in FLAG_COLUMNS if c in header]

        measurements: list[Measurement] = []
        problems: list[str] = []
        for lineno, values in enumerate(reader, start=2):
            if not values or all(not v.strip() for v in values):
                continue
            if len(values) != len(header):
                msg = f"line {lineno}: expected {len(header)} fields, got {len(values)}"
            else:
                try:
                    measurements.append(_parse_row(dict(zip(header, values)), has_weight, flag_cols))
                    continue
                except (ValueError, DomainError) as exc:
                    msg = f"line {lineno}: {exc}"
            if strict:
                raise LoadError(f"{path}: {msg}")
            problems.append(msg)

    for msg in problems:
        warnings.warn(f"{path}: skipped {msg}", stacklevel=2)
    if not measurements:
        warnings.warn(f"{path}: cohort is empty", stacklevel=2)
    return Cohort(tuple(measurements), provenance=f"loaded from {path.name}")


def write_cohort(cohort: Cohort, path_or_handle) -> None:
    """Write ``cohort`` in the CSV schema read by :func:`load_cohort`."""
    flag_cols = [c for c in FLAG_COLUMNS if any(m.flag(c) is not None for m in cohort)]
    header = list(REQUIRED_COLUMNS) + ["weight"] + flag_cols

    def _write(handle):
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(header)
        for m in cohort:
            row = [m.pregnancy_id, m.exam_date.isoformat() if m.exam_date else "",
                   repr(m.fa_days), repr(m.crl_mm), m.source.value, repr(m.weight)]
            for c in flag_cols:
                v = m.flag(c)
                row.append("" if v is None else str(v).lower())
            w.writerow(row)

    if hasattr(path_or_handle, "write"):
        _write(path_or_handle)
    else:
        with open(path_or_handle, "w", newline="", encoding="utf-8") as handle:
            _write(handle)


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def dedup_first_exam(cohort: Cohort) -> Cohort:
    """Keep one record per pregnancy: earliest exam, then smallest CRL,
    then first in input order.  Kept records stay in input order."""
    best: dict[str, int] = {}
    for i, m in enumerate(cohort):
        if m.exam_date is None:
            raise DomainError(f"record {i} ({m.pregnancy_id!r}) has no exam date")
        j = best.get(m.pregnancy_id)
        if j is None:
            best[m.pregnancy_id] = i
            continue
        cur = cohort[j]
        if (m.exam_date, m.crl_mm) < (cur.exam_date, cur.crl_mm):
            best[m.pregnancy_id] = i
    keep = sorted(best.values())
    return cohort.subset(keep)


def select_eligible(cohort: Cohort, max_crl: float = 85.0, require_flags: Iterable[str] = ()) -> Cohort:
    """Keep records with ``crl < max_crl``.

    Each name in ``require_flags`` drops records whose flag is explicitly
    false; records without that column are kept.
    """
    require_flags = tuple(require_flags)
    keep = []
    for i, m in enumerate(cohort):
        if not m.crl_mm < max_crl:
            continue
        if any(m.flag(f) is False for f in require_flags):
            continue
        keep.append(i)
    return cohort.subset(keep)


@dataclass(frozen=True)
class TrimReport:
    n_in: int
    removed_low: int
    removed_high: int
    kept: Cohort
    removed_low_ids: tuple[str, ...] = ()
    removed_high_ids: tuple[str, ...] = ()

    @property
    def removed_low_fraction(self) -> float:
        return self.removed_low / self.n_in if self.n_in else 0.0

    @property
    def removed_high_fraction(self) -> float:
        return self.removed_high / self.n_in if self.n_in else 0.0

    @property
    def total_removed_fraction(self) -> float:
        return self.removed_low_fraction + self.removed_high_fraction

    def to_dict(self) -> dict:
        return {
            "n_in": self.n_in,
            "removed_low": {"count": self.removed_low, "fraction": self.removed_low_fraction,
                            "ids": list(self.removed_low_ids)},
            "removed_high": {"count": self.removed_high, "fraction": self.removed_high_fraction,
                             "ids": list(self.removed_high_ids)},
            "total_removed_fraction": self.total_removed_fraction,
            "kept_ids": self.kept.ids,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def trim_outliers(cohort: Cohort, basis: BasisSpec | None = None, lower_frac: float = 0.045,
                  upper_frac: float = 0.039, tuning: float = BISQUARE_TUNING) -> TrimReport:
    """Drop the most extreme residuals of a preliminary robust fit.

    The lowest ``round(lower_frac * n)`` and highest ``round(upper_frac * n)``
    signed residuals are removed (halves rounded away from zero).  Defaults
    remove 4.5% below and 3.9% above.
    """
    basis = quadratic_basis() if basis is None else basis
    if lower_frac < 0 or upper_frac < 0 or lower_frac + upper_frac >= 0.5:
        raise ValueError("need non-negative fractions with lower_frac + upper_frac < 0.5")
    n = len(cohort)
    n_low = round_half_away(lower_frac * n)
    n_high = round_half_away(upper_frac * n)
    if n_low == 0 and n_high == 0:
        return TrimReport(n, 0, 0, cohort)
    fit = fit_robust(cohort, basis, tuning)
    order = np.argsort(fit.residuals, kind="stable")
    low = order[:n_low]
    high = order[n - n_high:] if n_high else order[:0]
    removed = set(low.tolist()) | set(high.tolist())
    kept = cohort.subset([i for i in range(n) if i not in removed])
    ids = cohort.ids
    return TrimReport(n, n_low, n_high, kept,
                      tuple(ids[i] for i in low), tuple(ids[i] for i in high))


def reweight_split(cohort: Cohort, threshold_crl: float = 45.0) -> Cohort:
    """Give the CRL < threshold and CRL >= threshold groups equal total weight.

    Each record in group g gets N / (2 n_g), so both groups sum to N/2.
    """
    crl = np.asarray(cohort.crl)
    below = crl < threshold_crl
    n = len(cohort)
    n_below = int(below.sum())
    n_above = n - n_below
    if n_below == 0 or n_above == 0:
        raise ReweightError(f"all {n} records fall on one side of CRL {threshold_crl:g} mm; cannot reweight")
    w_below = n / (2.0 * n_below)
    w_above = n / (2.0 * n_above)
    if max(w_below, w_above) > IMBALANCE_LIMIT:
        warnings.warn(f"group sizes {n_below}/{n_above} around {threshold_crl:g} mm give weights "
                      f"{w_below:.4g}/{w_above:.4g}", ImbalanceWarning, stacklevel=2)
    weights = np.where(below, w_below, w_above)
    return cohort.with_weights(weights)
