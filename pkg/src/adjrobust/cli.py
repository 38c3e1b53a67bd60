"""Command-line entry points: ``adjrobust analyze`` and ``adjrobust simulate``.

Exit codes: 0 success, 1 input or validation error, 2 the tilt has no usable
solution (the result JSON is still written, with its status).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import simlab
from .ar_core import ar_estimate_aipw, contrast_panel
from .ar_lm import DEFAULT_BOOTSTRAP, ar_estimate_lm
from .baselines import aipw_ci, naive_hull, ols_ci
from .data import dumps_json, load_csv, parse_adjustment_config
from .errors import (
    AdjRobustError,
    Infeasible,
    InputError,
    SingularGram,
    SingularHessian,
    TooManyDegenerateResamples,
)
from .nuisance import crossfit

log = logging.getLogger("adjrobust")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2
HIST_BINS = 20


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; that code is reserved for infeasibility
    def error(self, message):
        raise _UsageError(message)


# ------------------------------------------------------------------ analyze


def _read_config(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON config: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    alpha = cfg.get("alpha", 0.05)
    method = cfg.get("method", "lm")
    folds = cfg.get("folds", 5)
    bootstrap = cfg.get("bootstrap", DEFAULT_BOOTSTRAP)
    seed = cfg.get("seed", 0)
    if not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
        raise InputError(f"alpha must lie in (0, 1), got {alpha!r}")
    if method not in ("lm", "aipw"):
        raise InputError(f"method must be 'lm' or 'aipw', got {method!r}")
    for key, value, low in (("folds", folds, 2), ("bootstrap", bootstrap, 100), ("seed", seed, 0)):
        if not isinstance(value, int) or isinstance(value, bool) or value < low:
            raise InputError(f"{key} must be an integer >= {low}, got {value!r}")
    covariates = cfg.get("covariates")
    if covariates is not None and (
        not isinstance(covariates, list) or not all(isinstance(c, str) for c in covariates)
    ):
        raise InputError("covariates must be a list of column names")
    return text, cfg, float(alpha), method, folds, bootstrap, seed, covariates


def _weight_summary(w):
    return {
        "min": float(w.min()),
        "max": float(w.max()),
        "mean": float(w.mean()),
        "ess": float(w.sum() ** 2 / np.sum(w**2)),
    }


def _histograms(table, columns, weights):
    """Binned counts of each shared covariate, raw and under the tilt weights."""
    out = {}
    for j in columns:
        col = table.x[:, j]
        edges = np.histogram_bin_edges(col, bins=HIST_BINS)
        raw, _ = np.histogram(col, bins=edges)
        entry = {"edges": edges.tolist(), "original": raw.tolist(), "reweighted": None}
        if weights is not None:
            entry["reweighted"] = np.histogram(col, bins=edges, weights=weights)[0].tolist()
        out[table.col_names[j]] = entry
    return out


def cmd_analyze(args) -> int:
    text, cfg, alpha, method, folds, bootstrap, seed, covariates = _read_config(args.config)
    table = load_csv(args.data, args.outcome, args.treatment)
    if covariates is not None:
        table = table.select(covariates)
    spec = parse_adjustment_config(text, table)
    names = [[table.col_names[j] for j in s] for s in spec.sets]

    if method == "lm":
        baseline = [ols_ci(table, s, alpha) for s in spec.sets]
    else:
        nuis = crossfit(table, spec, folds=folds, seed=seed)
        baseline = [aipw_ci(table, k, nuis, alpha) for k in range(spec.k)]
    hull = naive_hull([(lo, hi) for _, lo, hi in baseline])

    result = {
        "method": method,
        "n": table.n,
        "level": 1 - alpha,
        "adjustment_sets": names,
        "per_set_baseline_cis": [
            {"set": nm, "estimate": est, "ci": [lo, hi]} for nm, (est, lo, hi) in zip(names, baseline)
        ],
        "naive_hull_ci": list(hull),
        "estimate": None,
        "variance": None,
        "ci": None,
        "per_set_reweighted": None,
        "nu": None,
        "bias_correction": None,
        "lambda": None,
        "weight_summary": None,
        "bootstrap_skipped": None,
        "feasibility_status": "feasible",
        "message": None,
    }
    code = EXIT_OK
    weights = None
    try:
        if method == "lm":
            est = ar_estimate_lm(table, spec, alpha, bootstrap=bootstrap, seed=seed)
        else:
            est = ar_estimate_aipw(table, spec, nuis, alpha, panel=contrast_panel(table, nuis))
    except Infeasible as exc:
        log.error("infeasible: %s", exc)
        result.update(feasibility_status="infeasible", message=str(exc))
        if exc.solution is not None:
            result["lambda"] = exc.solution.lam.tolist()
        code = EXIT_INFEASIBLE
    except (SingularHessian, SingularGram, TooManyDegenerateResamples) as exc:
        log.error("degenerate: %s", exc)
        result.update(feasibility_status="degenerate", message=str(exc))
        code = EXIT_INFEASIBLE
    else:
        weights = est.weights
        result.update(
            estimate=est.estimate,
            variance=est.variance,
            ci=[est.ci_lo, est.ci_hi],
            per_set_reweighted=est.per_set_reweighted.tolist(),
            nu=est.nu.tolist(),
            bias_correction=est.bias_correction,
            bootstrap_skipped=est.bootstrap_skipped if method == "lm" else None,
            weight_summary=_weight_summary(weights),
        )
        result["lambda"] = est.lam.tolist()
    result["covariate_histograms"] = _histograms(table, spec.intersection, weights)
    Path(args.out).write_text(dumps_json(result), encoding="utf-8")
    return code


# ----------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    if args.n < 10:
        raise InputError("--n must be at least 10")
    if args.reps < 1:
        raise InputError("--reps must be at least 1")
    if not 0 < args.alpha < 1:
        raise InputError("--alpha must lie in (0, 1)")
    if args.bootstrap < 100:
        raise InputError("--bootstrap must be at least 100")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    unknown = sorted(set(methods) - set(simlab.ALL_METHODS))
    if unknown or not methods:
        raise InputError(f"unknown methods {unknown}; choose from {', '.join(simlab.ALL_METHODS)}")
    report = simlab.replicate(
        args.example,
        n=args.n,
        reps=args.reps,
        alpha=args.alpha,
        methods=methods,
        base_seed=args.seed,
        bootstrap=args.bootstrap,
        folds=args.folds,
        workers=args.workers,
    )
    out = Path(args.out)
    out.write_text(dumps_json(report.to_dict()), encoding="utf-8")
    out.with_suffix(".txt").write_text(simlab.format_table([report]), encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adjrobust", description="Assumption-robust ATE inference.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    an = sub.add_parser("analyze", help="estimate from a CSV file and a JSON config")
    an.add_argument("--data", required=True, help="CSV with a header row")
    an.add_argument("--config", required=True, help="JSON config with adjustment_sets")
    an.add_argument("--out", required=True, help="where to write the result JSON")
    an.add_argument("--outcome", default="y", help="outcome column (default y)")
    an.add_argument("--treatment", default="a", help="treatment column (default a)")
    an.set_defaults(func=cmd_analyze)

    si = sub.add_parser("simulate", help="coverage study on a built-in design")
    si.add_argument("--example", required=True, choices=[e.value for e in simlab.Example])
    si.add_argument("--n", type=int, default=1000)
    si.add_argument("--reps", type=int, default=1000)
    si.add_argument("--alpha", type=float, default=0.05)
    si.add_argument("--seed", type=int, default=0)
    si.add_argument("--out", required=True, help="report JSON; the text table goes next to it as .txt")
    si.add_argument("--methods", default=",".join(simlab.LM_METHODS), help="comma-separated method names")
    si.add_argument("--bootstrap", type=int, default=simlab.TABLE_BOOTSTRAP)
    si.add_argument("--folds", type=int, default=5)
    si.add_argument("--workers", type=int, default=1, help="processes for replications")
    si.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"adjrobust: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (InputError, OSError) as exc:
        print(f"adjrobust: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AdjRobustError as exc:
        print(f"adjrobust: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
