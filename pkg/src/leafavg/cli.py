"""Command-line interface.

Subcommands:
  gen         sample a dataset CSV from a configured model
  fit         train one estimator and serialize it to plain text
  bounds      tabulate the theoretical bounds for a configured model
  experiment  run the full sweep described by a config file
  rate        fit a log-log convergence rate from a results CSV
  plotdata    summarize results (plus bound curves) for plotting

By default ``experiment`` zeroes the fit_seconds column so that reruns of
the same config are byte-identical; pass --timings to keep wall times.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .bounds import (
    additive_lower_bound,
    boolean_lower_bound,
    linear_lower_bound_cube,
    sparse_additive_upper_bound,
)
from .harness import (
    ConfigError,
    build_estimator,
    emit_plot_data,
    emit_results,
    estimate_risk,
    fit_params_from_config,
    fit_rate,
    format_float,
    load_config,
    model_from_config,
    read_results,
    records_to_points,
    run_experiment,
)
from .models import Dataset, sample_dataset
from .trees import estimator_to_text

BOUNDS_HEADER = "formula,params,value,optimizer_D,clamped"


def _write_dataset_csv(data: Dataset, path: Path) -> None:
    d = data.dimension
    header = ",".join([f"x_{j + 1}" for j in range(d)] + ["y"])
    lines = [header]
    for i in range(data.n):
        row = [format_float(v) for v in data.x[i]]
        row.append(format_float(data.y[i]))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _read_dataset_csv(path: Path) -> Dataset:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = lines[0].split(",")
    if header[-1] != "y" or any(not h.startswith("x_") for h in header[:-1]):
        raise ValueError(f"{path}: expected header x_1,...,x_d,y")
    rows = [ln.split(",") for ln in lines[1:] if ln.strip()]
    values = np.array([[float(v) for v in row] for row in rows])
    if values.shape[1] != len(header):
        raise ValueError(f"{path}: row width does not match the header")
    return Dataset(values[:, :-1], values[:, -1])


def _cmd_gen(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model = model_from_config(config)
    data = sample_dataset(model, args.n, args.seed)
    _write_dataset_csv(data, Path(args.out))
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model = model_from_config(config)
    params = fit_params_from_config(config)
    structure = _read_dataset_csv(Path(args.data))
    honest = _read_dataset_csv(Path(args.honest_data)) if args.honest_data else None
    estimator = build_estimator(
        args.estimator, structure, params, model, honest=honest, seed=args.seed
    )
    Path(args.out).write_text(
        estimator_to_text(estimator), encoding="utf-8", newline="\n"
    )
    if args.report_risk:
        risk = estimate_risk(estimator, model, config.test_size, args.seed)
        print(f"test_mse={format_float(risk.mse)}")
    return 0


def _bound_rows(config, n: int) -> list[tuple[str, str, float, float | None, bool]]:
    model = model_from_config(config)
    s = model.sparsity
    sigma2 = config.noise_variance
    beta = abs(config.coefficient)
    rows = []
    if config.distribution == "uniform":
        if s >= 1:
            if config.component_kind == "linear":
                res = linear_lower_bound_cube(s, beta, 0.0, sigma2, n)
                rows.append((res.formula, f"s={s};beta0={beta};h=0;sigma2={sigma2};n={n}", res.value, res.distortion, res.clamped))
            res = additive_lower_bound(
                noise_variance=sigma2, n=n, mode="sparse", sparsity=s, beta0=beta
            )
            rows.append((res.formula, f"s={s};beta0={beta};sigma2={sigma2};n={n}", res.value, res.distortion, res.clamped))
            betas = np.abs(model.coefficients)
            res = additive_lower_bound(
                noise_variance=sigma2, n=n, mode="general", betas=betas
            )
            rows.append((res.formula, f"d={config.dimension};s={s};sigma2={sigma2};n={n}", res.value, res.distortion, res.clamped))
            upper = sparse_additive_upper_bound(s, beta, 1.0, sigma2, n)
            rows.append(("sparse_additive_upper", f"s={s};beta_max={beta};q_sup=1.0;sigma2={sigma2};n={n}", upper.value, upper.distortion, False))
    else:
        pis = [config.bernoulli_p] * config.dimension
        betas = np.abs(model.coefficients)
        res = boolean_lower_bound(
            noise_variance=sigma2, n=n, mode="general", betas=betas, pis=pis
        )
        rows.append((res.formula, f"d={config.dimension};p={config.bernoulli_p};sigma2={sigma2};n={n}", res.value, res.distortion, res.clamped))
        if s >= 2:
            res = boolean_lower_bound(
                noise_variance=sigma2,
                n=n,
                mode="sparse",
                sparsity=s,
                beta0=beta,
                p=config.bernoulli_p,
            )
            rows.append((res.formula, f"s={s};beta0={beta};p={config.bernoulli_p};sigma2={sigma2};n={n}", res.value, res.distortion, res.clamped))
    return rows


def _cmd_bounds(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    n_values = args.n if args.n else list(config.n_grid)
    print(BOUNDS_HEADER)
    for n in n_values:
        for formula, params, value, distortion, clamped in _bound_rows(config, n):
            d_text = "" if distortion is None else format_float(distortion)
            print(
                f"{formula},{params},{format_float(value)},{d_text},{str(clamped).lower()}"
            )
    return 0


def _cmd_experiment(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = run_experiment(config)
    if not args.timings:
        records = [replace(r, fit_seconds=0.0) for r in records]
    emit_results(records, args.out)
    return 0


def _cmd_rate(args: argparse.Namespace) -> int:
    records = read_results(args.infile)
    points = records_to_points(records, args.estimator)
    if not points:
        raise ValueError(f"no records for estimator {args.estimator!r}")
    fit = fit_rate(points)
    print(
        f"estimator={args.estimator} slope={format_float(fit.slope)} "
        f"intercept={format_float(fit.intercept)} stderr={format_float(fit.stderr)}"
    )
    return 0


def _cmd_plotdata(args: argparse.Namespace) -> int:
    records = read_results(args.infile)
    config = load_config(args.config) if args.config else None
    emit_plot_data(records, args.out, config=config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leafavg",
        description="Leaf-averaging tree estimators and risk bounds for sparse additive models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a dataset CSV from the configured model")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("fit", help="train one estimator and serialize it")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="training CSV from `leafavg gen`")
    p.add_argument(
        "--estimator", required=True, choices=list(harness.ESTIMATOR_IDS)
    )
    p.add_argument("--honest-data", help="independent CSV for honest relabeling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--report-risk",
        action="store_true",
        help="print a Monte Carlo test MSE after fitting",
    )
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("bounds", help="print the bound table as CSV")
    p.add_argument("--config", required=True)
    p.add_argument(
        "--n",
        type=int,
        action="append",
        help="sample size (repeatable; defaults to the config n_grid)",
    )
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("experiment", help="run the configured sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--timings",
        action="store_true",
        help="record wall-clock fit times (breaks byte-for-byte reproducibility)",
    )
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("rate", help="fit a convergence rate from results")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--estimator", required=True)
    p.set_defaults(func=_cmd_rate)

    p = sub.add_parser("plotdata", help="summarize results for plotting")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True, help="CSV path, or .svg for a chart")
    p.add_argument("--config", help="config file enabling bound overlays")
    p.set_defaults(func=_cmd_plotdata)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
