"""``gestalt`` command-line interface.

Data goes to files or stdout; diagnostics go to stderr.  Exit status is 0
on success, 2 on usage errors and 1 when a computation fails.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .charts_io import dumps_chart, load_chart
from .config import FitConfig, PipelineConfig, SelectConfig, TrimConfig, load_config, run_stages
from .core import REGISTRY, GrowthChart, Predicts, format_weeks_days, lookup
from .errors import GestaltError
from .mixture import find_breakpoint, fit_mixture
from .pipeline import load_cohort, write_cohort
from .prediction import (
    calibrate_kappa,
    coverage,
    optimal_window,
    predict_with_ci,
    table_to_csv,
    table_to_text,
    tabulate,
    zscore,
)
from .regression import (
    fit_heteroskedastic,
    fit_least_squares,
    fit_robust,
    fit_to_chart,
    fit_variance_model,
    highest_degree_test,
)
from .simulate import load_simspec, simulate
from .validation import ModelUnderTest, loocv_compare


class UsageError(GestaltError):
    code = "E_USAGE"
    exit_status = 2


def _resolve_chart(ref: str) -> GrowthChart:
    """Registry name, or a path to a chart JSON file."""
    if ref in REGISTRY:
        return REGISTRY.lookup(ref)
    if ref.endswith(".json") or Path(ref).exists():
        if not Path(ref).exists():
            raise UsageError(f"chart file not found: {ref}")
        return load_chart(ref)
    return lookup(ref)


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _diag(obj) -> None:
    sys.stderr.write(json.dumps(obj, indent=2) + "\n")


def _json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def _fit_chart(cohort, cfg: PipelineConfig, name: str, kappa: float | None):
    mean_basis, var_basis = cfg.fit.bases()
    method = cfg.fit.method
    if method == "gls":
        fit = fit_heteroskedastic(cohort, mean_basis, var_basis)
    elif method == "robust":
        fit = fit_robust(cohort, mean_basis)
    else:
        fit = fit_least_squares(cohort, mean_basis)
    chart = fit_to_chart(fit, name)
    if fit.variance is None:
        # outliers downweighted by the robust fit stay out of the variance model
        vm = fit_variance_model(fit.residuals, fit.x, var_basis, cohort.weights * fit.robust_weights)
        chart = GrowthChart(chart.name, chart.mean, vm, chart.kappa, chart.domain, chart.predicts)
    if kappa is None and cfg.kappa.policy == "calibrate":
        kappa = calibrate_kappa(chart, cohort, cfg.kappa.coverage)
    elif kappa is None:
        kappa = cfg.kappa.value
    chart = GrowthChart(chart.name, chart.mean, chart.variance, kappa, chart.domain, chart.predicts,
                        f"fitted by {method} on {len(cohort)} records")
    return fit, chart


def cmd_fit(args) -> int:
    # without a config the CSV is fitted as given
    cfg = load_config(args.config) if args.config else PipelineConfig(
        dedup=False, select=SelectConfig(enabled=False), trim=TrimConfig(enabled=False))
    if args.method or args.predicts:
        fit_cfg = replace(cfg.fit, method=args.method or cfg.fit.method,
                          predicts=args.predicts or cfg.fit.predicts)
        cfg = replace(cfg, fit=fit_cfg)
    cohort = load_cohort(args.csv)
    cleaned = run_stages(cohort, cfg)
    fit, chart = _fit_chart(cleaned.cohort, cfg, args.name, args.kappa)
    test = highest_degree_test(fit)
    diag = {
        "stage_counts": cleaned.counts,
        "fit": {k: v for k, v in fit.diagnostics().items() if k != "robust_weights"},
        "highest_degree_test": {"statistic": test.statistic, "p_value": test.p_value, "df": list(test.df)},
        "variance_degenerate": bool(chart.variance is not None and chart.variance.degenerate),
    }
    _emit(dumps_chart(chart) + "\n", args.output or cfg.outputs.chart)
    diag_path = args.diagnostics or cfg.outputs.diagnostics
    if diag_path:
        Path(diag_path).write_text(_json(diag), encoding="utf-8")
    else:
        _diag(diag)
    return 0


def cmd_clean(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    cleaned = run_stages(load_cohort(args.csv), cfg)
    out = args.output or cfg.outputs.cleaned
    if out:
        write_cohort(cleaned.cohort, out)
    else:
        write_cohort(cleaned.cohort, sys.stdout)
    report = cleaned.trim.to_dict() if cleaned.trim else {}
    report["stage_counts"] = cleaned.counts
    rpath = args.report or cfg.outputs.trim_report
    if rpath:
        Path(rpath).write_text(_json(report), encoding="utf-8")
    else:
        _diag(report)
    return 0


def cmd_predict(args) -> int:
    chart = _resolve_chart(args.chart)
    if chart.variance is None:
        mean = float(chart.mean_at(args.x, apply_correction=args.correct))
        _emit(_json({"x": args.x, "mean": mean}), args.output)
        return 0
    p = predict_with_ci(chart, args.x, args.kappa)
    doc = p.to_dict()
    if args.correct:
        doc["mean_corrected"] = float(chart.mean_at(args.x, apply_correction=True))
    _emit(_json(doc), args.output)
    return 0


def cmd_date(args) -> int:
    chart = _resolve_chart(args.chart)
    if chart.predicts is not Predicts.FA_FROM_CRL:
        raise UsageError(f"chart {chart.name!r} predicts CRL; dating needs an FA-from-CRL chart")
    mean = float(chart.mean_at(args.crl))
    doc = {"crl_mm": args.crl, "fa_days": mean, "ga_days": mean + 14.0,
           "weeks_days": format_weeks_days(int(math.floor(mean)))}
    if chart.variance is not None:
        p = predict_with_ci(chart, args.crl, args.kappa)
        doc.update({"sd": p.sd, "lower": p.lower, "upper": p.upper, "kappa_used": p.kappa_used})
    _emit(_json(doc), args.output)
    return 0


def cmd_zscore(args) -> int:
    chart = _resolve_chart(args.chart)
    z = zscore(chart, args.x, args.observed)
    _emit(_json({"x": args.x, "observed": args.observed, "z": z}), args.output)
    return 0


def cmd_tabulate(args) -> int:
    chart = _resolve_chart(args.chart)
    rows = tabulate(chart, args.start, args.stop, args.step, with_band=args.with_band, kappa=args.kappa)
    if args.format == "text":
        text = table_to_text(rows, chart, args.digits)
    else:
        text = table_to_csv(rows, args.digits)
    _emit(text, args.output)
    return 0


def cmd_window(args) -> int:
    chart = _resolve_chart(args.chart)
    domain = None if args.lo is None and args.hi is None else (
        chart.domain[0] if args.lo is None else args.lo, chart.domain[1] if args.hi is None else args.hi)
    _emit(_json(optimal_window(chart, domain).to_dict()), args.output)
    return 0


def _parse_models(args) -> list[ModelUnderTest]:
    models = [ModelUnderTest.fixed(_resolve_chart(ref)) for ref in args.fixed or ()]
    for token in args.refit or ():
        label, _, method = token.partition("=")
        method = method or label
        mean_basis, var_basis = FitConfig(method, args.predicts).bases()
        models.append(ModelUnderTest.refit(label, mean_basis, method, var_basis))
    if len(models) < 2:
        raise UsageError("crossval needs at least two models (--fixed CHART, --refit LABEL=METHOD)")
    return models


def cmd_crossval(args) -> int:
    cohort = load_cohort(args.csv)
    report = loocv_compare(cohort, _parse_models(args), threads=args.threads)
    _emit(report.render_text() + "\n" if args.format == "text" else report.to_json() + "\n", args.output)
    return 0


def cmd_breakpoint(args) -> int:
    cohort = load_cohort(args.csv)
    fit = fit_mixture(cohort, seed=args.seed, restarts=args.restarts, threads=args.threads)
    bp = find_breakpoint(fit, args.lo, args.hi)
    _emit(fit.to_json(bp) + "\n", args.output)
    return 0


def cmd_calibrate(args) -> int:
    chart = _resolve_chart(args.chart)
    cohort = load_cohort(args.csv)
    k = calibrate_kappa(chart, cohort, args.coverage)
    _emit(_json({"chart": chart.name, "kappa": k, "target_coverage": args.coverage,
                 "achieved_coverage": coverage(chart, cohort, k), "n": len(cohort)}), args.output)
    return 0


def cmd_simulate(args) -> int:
    spec = load_simspec(args.spec, seed=args.seed)
    sim = simulate(spec)
    if args.output:
        write_cohort(sim.cohort, args.output)
    else:
        write_cohort(sim.cohort, sys.stdout)
    _diag({"n": len(sim.cohort), "seed": spec.seed, "chart": spec.chart.name,
           "contaminated": [int(i) for i in sim.contaminated]})
    return 0


def cmd_registry(args) -> int:
    if args.action == "list":
        lines = [f"{c.name}\t{c.predicts.value}\t{c.citation}" for c in (REGISTRY.lookup(n) for n in REGISTRY.names())]
        _emit("\n".join(lines) + "\n", None)
        return 0
    if not args.name:
        raise UsageError("registry show needs a chart name")
    _emit(dumps_chart(REGISTRY.lookup(args.name)) + "\n", None)
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gestalt", description="Embryonic growth charts and dating curves.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def out(sp):
        sp.add_argument("-o", "--output", help="write data here instead of stdout")

    s = sub.add_parser("fit", help="fit a growth chart from a cohort CSV")
    s.add_argument("csv")
    s.add_argument("--config")
    s.add_argument("--method", choices=("ols", "gls", "robust"))
    s.add_argument("--predicts", choices=[x.value for x in Predicts])
    s.add_argument("--name", default="fitted")
    s.add_argument("--kappa", type=float)
    s.add_argument("--diagnostics")
    out(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("clean", help="dedup, select, trim and reweight a cohort CSV")
    s.add_argument("csv")
    s.add_argument("--config")
    s.add_argument("--report", help="trim report JSON path")
    out(s)
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("predict", help="mean and confidence band at one covariate value")
    s.add_argument("--chart", required=True)
    s.add_argument("--x", type=float, required=True)
    s.add_argument("--kappa", type=float)
    s.add_argument("--correct", action="store_true", help="apply the chart's corrective factor")
    out(s)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("date", help="foetal age from a CRL measurement")
    s.add_argument("--chart", required=True)
    s.add_argument("--crl", type=float, required=True)
    s.add_argument("--kappa", type=float)
    out(s)
    s.set_defaults(func=cmd_date)

    s = sub.add_parser("zscore", help="Z-score of an observation")
    s.add_argument("--chart", required=True)
    s.add_argument("--x", type=float, required=True)
    s.add_argument("--observed", type=float, required=True)
    out(s)
    s.set_defaults(func=cmd_zscore)

    s = sub.add_parser("tabulate", help="table of mean and sd on a grid")
    s.add_argument("--chart", required=True)
    s.add_argument("--from", dest="start", type=float, required=True)
    s.add_argument("--to", dest="stop", type=float, required=True)
    s.add_argument("--step", type=float, default=1.0)
    s.add_argument("--format", choices=("csv", "text"), default="csv")
    s.add_argument("--with-band", action="store_true", help="add lower/upper band columns")
    s.add_argument("--kappa", type=float)
    s.add_argument("--digits", type=int, default=6, help="significant digits")
    out(s)
    s.set_defaults(func=cmd_tabulate)

    s = sub.add_parser("window", help="covariate value with the narrowest band")
    s.add_argument("--chart", required=True)
    s.add_argument("--lo", type=float)
    s.add_argument("--hi", type=float)
    out(s)
    s.set_defaults(func=cmd_window)

    s = sub.add_parser("crossval", help="leave-one-out model comparison")
    s.add_argument("csv")
    s.add_argument("--fixed", action="append", metavar="CHART")
    s.add_argument("--refit", action="append", metavar="LABEL=METHOD")
    s.add_argument("--predicts", choices=[x.value for x in Predicts], default=Predicts.FA_FROM_CRL.value)
    s.add_argument("--format", choices=("json", "text"), default="json")
    s.add_argument("--threads", type=int)
    out(s)
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("breakpoint", help="two-regime mixture fit and crossing point")
    s.add_argument("csv")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--lo", type=float)
    s.add_argument("--hi", type=float)
    s.add_argument("--threads", type=int)
    out(s)
    s.set_defaults(func=cmd_breakpoint)

    s = sub.add_parser("calibrate-kappa", help="kappa giving the target coverage on a cohort")
    s.add_argument("csv")
    s.add_argument("--chart", required=True)
    s.add_argument("--coverage", type=float, default=0.95)
    out(s)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="synthetic cohort CSV from a simulation spec")
    s.add_argument("spec")
    s.add_argument("--seed", type=int, required=True)
    out(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("registry", help="list or show built-in charts")
    s.add_argument("action", choices=("list", "show"))
    s.add_argument("name", nargs="?")
    s.set_defaults(func=cmd_registry)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        warnings.showwarning = _show_warning
        try:
            return args.func(args)
        except GestaltError as exc:
            sys.stderr.write(f"gestalt: error [{exc.code}]: {exc}\n")
            return exc.exit_status
        except (ValueError, OSError) as exc:
            sys.stderr.write(f"gestalt: error: {exc}\n")
            return 1


def _show_warning(message, category, filename, lineno, file=None, line=None):
    sys.stderr.write(f"gestalt: warning: {message}\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
