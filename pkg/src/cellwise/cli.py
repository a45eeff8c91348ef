"""Command-line front end: CSV in, JSON (or CSV) reports out, optional SVG cellmaps.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .breakdown import (ESTIMATORS, ContaminationSpec, OutlierGenerator, contaminate,
                        empirical_breakdown)
from .cellmcd import CellMcdConfig, fit_cellmcd
from .cellpca import CellPcaConfig, fit_cellpca
from .data import (DEFAULT_NA_TOKENS, DataMatrix, column_summaries, read_csv,
                   summaries_to_json, to_csv_text)
from .detect import DEFAULT_CUTOFF, ddc, flag_marginal
from .errors import ConfigError, DataError, NumericalError
from .precision import glasso, pairwise_cov, psd_fix
from .regression import fit_cellreg, predict_many
from .render import CellmapSpec, render_cellmap

DEFAULT_SEED = 0
COMMANDS = ("summarize", "detect", "cellmcd", "cellpca", "regress", "precision",
            "simulate", "breakdown", "cellmap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_sanitize(obj), indent=2, allow_nan=False) + "\n"


def _common(p, needs_input=True):
    p.add_argument("--input", required=needs_input, help="input CSV file")
    p.add_argument("--output", help="output file (default: standard output)")
    p.add_argument("--na-token", action="append", dest="na_tokens",
                   help="extra token read as missing (repeatable)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--svg", help="write a cellmap to this SVG file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cellwise", description="Cellwise robust statistics toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("summarize", help="robust per-column summaries")
    _common(p)

    p = sub.add_parser("detect", help="flag outlying cells")
    _common(p)
    p.add_argument("--method", choices=("ddc", "marginal"), default="ddc")
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    p.add_argument("--min-abs-corr", type=float, default=0.5)

    p = sub.add_parser("cellmcd", help="cellwise MCD location and covariance")
    _common(p)
    p.add_argument("--h-fraction", type=float, default=0.75)
    p.add_argument("--max-iter", type=int, default=100)

    p = sub.add_parser("cellpca", help="cellwise robust PCA")
    _common(p)
    p.add_argument("--k", type=int, default=2)

    p = sub.add_parser("regress", help="plug-in cellwise robust regression")
    _common(p)
    p.add_argument("--response", help="response column name (default: last column)")
    p.add_argument("--predict", help="CSV of regressor rows to predict")
    p.add_argument("--h-fraction", type=float, default=0.75)

    p = sub.add_parser("precision", help="robust sparse precision matrix")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--corr", choices=("gauss_rank", "spearman"), default="gauss_rank")
    p.add_argument("--scale", choices=("qn", "mad"), default="qn")

    p = sub.add_parser("simulate", help="contaminate clean data")
    _common(p, needs_input=False)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--eps-case", type=float, default=0.0)
    p.add_argument("--eps-cell", type=float, default=0.1)
    p.add_argument("--eps-obs", type=float, default=0.0)
    p.add_argument("--outlier-value", type=float, default=10.0)

    p = sub.add_parser("breakdown", help="empirical breakdown sweeps")
    _common(p, needs_input=False)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--estimator", choices=ESTIMATORS, action="append", dest="estimators")
    p.add_argument("--m", type=int, action="append", dest="m_values")
    p.add_argument("--magnitudes", type=float, nargs="+", default=[1e3, 1e6, 1e9])
    p.add_argument("--placement", choices=("random", "hyperplane", "single_column"), default="random")
    p.add_argument("--k", type=int)
    p.add_argument("--curves-csv", help="write displacement curves to this CSV file")

    p = sub.add_parser("cellmap", help="render a residual cellmap")
    _common(p)
    p.add_argument("--method", choices=("ddc", "marginal", "cellmcd"), default="ddc")
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    p.add_argument("--max-cells", type=int, default=100)
    return parser


def _load(args) -> DataMatrix:
    tokens = set(DEFAULT_NA_TOKENS) | set(args.na_tokens or [])
    try:
        return read_csv(args.input, tokens)
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc


def _cellmap(args, residuals, X, shades=None, cutoff=DEFAULT_CUTOFF):
    if args.svg:
        spec = CellmapSpec(np.asarray(residuals, dtype=float), ~X.observed, shades, cutoff,
                           [str(i + 1) for i in range(X.n)], list(X.column_names))
        render_cellmap(spec, args.svg)


def _meta(args):
    return {"command": args.command, "seed": args.seed, "version": __version__}


def _emit(args, payload, csv_text=None):
    if args.format == "csv":
        if csv_text is None:
            raise ConfigError(f"--format csv is not available for {args.command}")
        text = csv_text
    else:
        text = dumps(payload)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _matrix_csv(names, M):
    X = DataMatrix.from_array(M, column_names=names)
    return to_csv_text(X)


def cmd_summarize(args):
    X = _load(args)
    s = column_summaries(X)
    lines = ["name,median,mad_scale,qn_scale,n_observed"]
    lines += [f"{c.name},{c.median!r},{c.mad_scale!r},{c.qn_scale!r},{c.n_observed}" for c in s]
    _emit(args, {"meta": _meta(args), **summaries_to_json(s)}, "\n".join(lines) + "\n")


def cmd_detect(args):
    X = _load(args)
    if args.method == "ddc":
        res = ddc(X, min_abs_corr=args.min_abs_corr, cutoff=args.cutoff)
    else:
        res = flag_marginal(X, args.cutoff)
    _cellmap(args, res.std_residuals, X, cutoff=args.cutoff)
    _emit(args, {"meta": _meta(args), "columns": list(X.column_names), **res.to_dict()},
          _matrix_csv(X.column_names, res.imputed))


def cmd_cellmcd(args):
    X = _load(args)
    model = fit_cellmcd(X, CellMcdConfig(h_fraction=args.h_fraction, max_iter=args.max_iter))
    _cellmap(args, model.std_cell_residuals, X)
    _emit(args, {"meta": _meta(args), "columns": list(X.column_names), **model.to_dict(),
                 "imputed": model.imputed, "std_cell_residuals": model.std_cell_residuals},
          _matrix_csv(X.column_names, model.imputed))


def cmd_cellpca(args):
    X = _load(args)
    model = fit_cellpca(X, args.k, CellPcaConfig(seed=args.seed))
    _cellmap(args, model.std_residuals, X, shades=1.0 - model.w_case)
    _emit(args, {"meta": _meta(args), "columns": list(X.column_names), **model.to_dict()},
          _matrix_csv(X.column_names, model.imputed))


def cmd_regress(args):
    X = _load(args)
    names = list(X.column_names)
    resp = args.response if args.response is not None else names[-1]
    if resp not in names:
        raise ConfigError(f"response column {resp!r} not found")
    j = names.index(resp)
    xcols = [c for c in range(X.d) if c != j]
    if not xcols:
        raise ConfigError("need at least one regressor column")
    Xr = DataMatrix(X.values[:, xcols], X.observed[:, xcols], tuple(names[c] for c in xcols))
    model = fit_cellreg(Xr, X.values[:, j], CellMcdConfig(h_fraction=args.h_fraction))
    preds = []
    if args.predict:
        tokens = set(DEFAULT_NA_TOKENS) | set(args.na_tokens or [])
        try:
            P = read_csv(args.predict, tokens)
        except OSError as exc:
            raise DataError(f"cannot read {args.predict}: {exc}") from exc
        if P.d == X.d and list(P.column_names) == names:
            P = DataMatrix(P.values[:, xcols], P.observed[:, xcols], Xr.column_names)
        if P.d != len(xcols):
            raise DataError(f"prediction file has {P.d} columns, expected {len(xcols)}")
        preds = [p.to_dict() for p in predict_many(model, P)]
    payload = {"meta": _meta(args), "response": resp, "regressors": list(Xr.column_names),
               "alpha": model.alpha, "beta": model.beta, "predictions": preds}
    csv_text = "y_hat\n" + "".join(f"{p['y_hat']!r}\n" for p in preds)
    _emit(args, payload, csv_text)


def cmd_precision(args):
    X = _load(args)
    S = psd_fix(pairwise_cov(X, scale=args.scale, corr=args.corr))
    model = glasso(S, args.lam)
    _emit(args, {"meta": _meta(args), "columns": list(X.column_names), "corr": args.corr,
                 "scale": args.scale, "sigma_hat": S, **model.to_dict()},
          _matrix_csv(X.column_names, model.theta))


def cmd_simulate(args):
    if args.input:
        X = _load(args)
    else:
        if args.n < 1 or args.d < 1:
            raise ConfigError("--n and --d must be positive")
        rng = np.random.default_rng(args.seed)
        X = DataMatrix.from_array(rng.standard_normal((args.n, args.d)))
    spec = ContaminationSpec(args.eps_case, args.eps_cell, args.eps_obs,
                             OutlierGenerator("point", args.outlier_value), args.seed)
    Xe, truth = contaminate(X, spec)
    counts = {lab: int((truth == lab).sum()) for lab in ("clean", "case", "cell", "missing")}
    payload = {"meta": _meta(args), "columns": list(Xe.column_names), "data": Xe.values,
               "truth": truth.tolist(), "counts": counts}
    _emit(args, payload, to_csv_text(Xe))


def cmd_breakdown(args):
    if args.input:
        X = _load(args)
    else:
        rng = np.random.default_rng(args.seed)
        X = DataMatrix.from_array(rng.standard_normal((args.n, args.d)))
    estimators = args.estimators or ["coordwise_median", "sample_mean", "sample_cov"]
    m_values = args.m_values or [1, max(1, X.n // 10)]
    options = {"k": args.k} if args.k is not None else {}
    reports = []
    for est in estimators:
        reports += empirical_breakdown(est, X, m_values, args.magnitudes, args.placement,
                                       args.seed, options)
    if args.curves_csv:
        lines = ["estimator,m,magnitude,displacement"]
        for r in reports:
            for mag, disp in zip(r.magnitude_sweep, r.displacement):
                lines.append(f"{r.estimator_name},{r.m_per_column},{mag!r},{disp!r}")
        Path(args.curves_csv).write_text("\n".join(lines) + "\n")
    payload = {"meta": _meta(args), "reports": [r.to_dict() for r in reports]}
    csv_lines = ["estimator,placement,m,broke,bound"]
    csv_lines += [f"{r.estimator_name},{r.placement},{r.m_per_column},{int(r.broke)},{r.bound!r}"
                  for r in reports]
    _emit(args, payload, "\n".join(csv_lines) + "\n")


def cmd_cellmap(args):
    X = _load(args)
    if args.method == "ddc":
        res = ddc(X, cutoff=args.cutoff).std_residuals
    elif args.method == "marginal":
        res = flag_marginal(X, args.cutoff).std_residuals
    else:
        res = fit_cellmcd(X).std_cell_residuals
    target = args.svg or args.output
    if not target:
        raise ConfigError("cellmap needs --svg (or --output) for the SVG file")
    spec = CellmapSpec(res, ~X.observed, None, args.cutoff,
                       [str(i + 1) for i in range(X.n)], list(X.column_names), args.max_cells)
    render_cellmap(spec, target)
    if args.svg and args.output is None:
        sys.stdout.write(dumps({"meta": _meta(args), "svg": args.svg, "n": X.n, "d": X.d}))


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        if getattr(args, "h_fraction", None) is not None and not 0.5 < args.h_fraction <= 1:
            raise ConfigError(f"--h-fraction must lie in (0.5, 1], got {args.h_fraction}")
        HANDLERS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(str(exc) if str(exc).endswith("\n") else f"{exc}\n")
        return 1
    except ConfigError as exc:
        sys.stderr.write(f"cellwise: configuration error: {exc}\n")
        return 1
    except DataError as exc:
        sys.stderr.write(f"cellwise: data error: {exc}\n")
        return 2
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(f"cellwise: numerical failure: {exc}\n")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
