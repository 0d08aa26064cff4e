"""JSON persistence for growth charts.

Floats are written with ``repr`` precision (17 significant digits), so a
save/load round trip reproduces every coefficient bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .core import (
    AgeKind,
    BasisSpec,
    CorrectiveFactor,
    Covariate,
    GrowthChart,
    MeanModel,
    Predicts,
    ResponseTransform,
    VarianceModel,
    VARIANCE_FLOOR,
)
from .errors import SchemaError

SCHEMA_VERSION = 1

_REQUIRED = ("name", "predicts", "covariate", "terms", "response_transform",
             "mean_coefficients", "kappa", "domain")


def chart_to_dict(chart: GrowthChart) -> dict[str, Any]:
    var = chart.variance
    return {
        "schema_version": SCHEMA_VERSION,
        "name": chart.name,
        "predicts": chart.predicts.value,
        "covariate": chart.mean.basis.covariate.value,
        "terms": list(chart.mean.basis.terms),
        "response_transform": chart.mean.response_transform.value,
        "mean_coefficients": list(chart.mean.coefficients),
        "variance_terms": None if var is None else list(var.basis.terms),
        "variance_coefficients": None if var is None else list(var.coefficients),
        "variance_floor": VARIANCE_FLOOR if var is None else var.floor,
        "kappa": chart.kappa,
        "domain": list(chart.domain),
        "citation": chart.citation,
        "response_age": chart.response_age.value,
        "corrective_factor": None if chart.corrective_factor is None else {
            "absolute": chart.corrective_factor.absolute,
            "relative": chart.corrective_factor.relative,
        },
    }


def chart_from_dict(doc: dict[str, Any]) -> GrowthChart:
    if not isinstance(doc, dict):
        raise SchemaError("chart document must be a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"chart schema version {version!r} is not supported (expected {SCHEMA_VERSION})")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise SchemaError(f"chart document is missing fields: {', '.join(missing)}")
    try:
        covariate = Covariate(doc["covariate"])
        basis = BasisSpec(covariate, tuple(doc["terms"]))
        mean = MeanModel(basis, doc["mean_coefficients"], ResponseTransform(doc["response_transform"]))
        variance = None
        if doc.get("variance_coefficients") is not None:
            vterms = doc.get("variance_terms") or doc["terms"]
            variance = VarianceModel(BasisSpec(covariate, tuple(vterms)), doc["variance_coefficients"],
                                     float(doc.get("variance_floor", VARIANCE_FLOOR)))
        cf = doc.get("corrective_factor")
        lo, hi = doc["domain"]
        return GrowthChart(
            name=str(doc["name"]),
            mean=mean,
            variance=variance,
            kappa=float(doc["kappa"]),
            domain=(float(lo), float(hi)),
            predicts=Predicts(doc["predicts"]),
            citation=str(doc.get("citation", "")),
            response_age=AgeKind(doc.get("response_age", "FA")),
            corrective_factor=None if cf is None else CorrectiveFactor(float(cf["absolute"]), float(cf["relative"])),
        )
    except SchemaError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise SchemaError(f"invalid chart document: {exc}") from exc


def dumps_chart(chart: GrowthChart, extra: dict[str, Any] | None = None) -> str:
    doc = chart_to_dict(chart)
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2)


def save_chart(chart: GrowthChart, path, extra: dict[str, Any] | None = None) -> None:
    Path(path).write_text(dumps_chart(chart, extra) + "\n", encoding="utf-8")


def load_chart(path) -> GrowthChart:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return chart_from_dict(doc)
