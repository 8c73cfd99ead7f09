"""Experiment harness: configs, risk estimation, rate fits, result files.

An experiment sweeps estimators over a grid of training sizes with
replicated draws.  Every record's randomness derives from
(config seed, estimator id, n, replicate), so results are reproducible
bit for bit and independent of execution order; the optional THREADS
environment variable only changes how the records are scheduled.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._rng import derive_seed
from .bounds import (
    additive_lower_bound,
    boolean_lower_bound,
    sparse_additive_upper_bound,
)
from .geometry import oracle_tessellation
from .models import (
    AdditiveModel,
    Dataset,
    boolean_product,
    eval_f,
    linear,
    sample_covariates,
    sample_dataset,
    square,
    uniform_cube,
    zero,
)
from .trees import (
    Estimator,
    FitParams,
    fit_cart,
    fit_forest,
    honest_relabel,
    partition_estimator,
    predict,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentRecord",
    "RiskEstimate",
    "RateFit",
    "load_config",
    "config_from_dict",
    "model_from_config",
    "fit_params_from_config",
    "build_estimator",
    "estimate_risk",
    "run_experiment",
    "fit_rate",
    "records_to_points",
    "emit_results",
    "read_results",
    "emit_plot_data",
    "format_float",
]

ESTIMATOR_IDS = ("cart", "forest", "honest_cart", "oracle_partition")

DEFAULT_N_GRID = (500, 1000, 2000, 4000, 8000, 16000)


class ConfigError(ValueError):
    """Raised when a configuration document is malformed."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Model, sweep and fitting parameters for one experiment."""

    dimension: int
    sparsity: int
    component_kind: str
    coefficient: float
    noise_variance: float
    distribution: str = "uniform"
    bernoulli_p: float = 0.5
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    replicates: int = 25
    test_size: int = 500
    estimators: tuple[str, ...] = ("honest_cart",)
    seed: int = 0
    min_samples_leaf: int = 5
    max_depth: int | None = None
    n_trees: int = 100
    mtry: int | None = None
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.component_kind not in ("linear", "square"):
            raise ConfigError(
                f"component_kind must be 'linear' or 'square', got {self.component_kind!r}"
            )
        if self.distribution not in ("uniform", "boolean"):
            raise ConfigError(
                f"distribution must be 'uniform' or 'boolean', got {self.distribution!r}"
            )
        if not 0 <= self.sparsity <= self.dimension:
            raise ConfigError("sparsity must lie in [0, dimension]")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ConfigError("n_grid must list positive integers")
        if any(a >= b for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigError("n_grid must be strictly ascending")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.test_size < 1:
            raise ConfigError("test_size must be >= 1")
        for name in self.estimators:
            if name not in ESTIMATOR_IDS:
                raise ConfigError(
                    f"unknown estimator {name!r}; choose from {ESTIMATOR_IDS}"
                )
        if self.distribution == "boolean" and "oracle_partition" in self.estimators:
            raise ConfigError("oracle_partition requires the uniform distribution")


_CONFIG_FIELDS = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}
_REQUIRED_FIELDS = (
    "dimension",
    "sparsity",
    "component_kind",
    "coefficient",
    "noise_variance",
)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from a parsed document; unknown keys are errors."""
    unknown = sorted(set(raw) - _CONFIG_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in _REQUIRED_FIELDS if k not in raw]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    data = dict(raw)
    for key in ("n_grid", "estimators"):
        if key in data:
            data[key] = tuple(data[key])
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a JSON experiment config from disk."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(raw)


def model_from_config(config: ExperimentConfig) -> AdditiveModel:
    """The generative model described by the config.

    The first ``sparsity`` coordinates carry the chosen component with the
    common coefficient; the rest are noise coordinates.
    """
    make = linear if config.component_kind == "linear" else square
    components = tuple(
        make(config.coefficient) if j < config.sparsity else zero()
        for j in range(config.dimension)
    )
    if config.distribution == "boolean":
        dist = boolean_product(config.bernoulli_p, config.dimension)
    else:
        dist = uniform_cube(config.dimension)
    return AdditiveModel(
        components=components, distribution=dist, noise_variance=config.noise_variance
    )


def fit_params_from_config(config: ExperimentConfig) -> FitParams:
    return FitParams(
        min_samples_leaf=config.min_samples_leaf,
        max_depth=config.max_depth,
        n_trees=config.n_trees,
        mtry=config.mtry,
        bootstrap=config.bootstrap,
    )


@dataclass(frozen=True, slots=True)
class RiskEstimate:
    """Monte Carlo estimate of the risk against the noiseless target."""

    mse: float
    std_error: float


@dataclass(frozen=True, slots=True)
class ExperimentRecord:
    estimator: str
    n: int
    replicate: int
    seed_used: int
    test_mse: float
    fit_seconds: float


@dataclass(frozen=True, slots=True)
class RateFit:
    """OLS fit of log2(mse) on log2(n): mse ~ c * n^slope."""

    slope: float
    intercept: float
    stderr: float


def estimate_risk(
    estimator: Estimator, model: AdditiveModel, test_size: int, seed: int
) -> RiskEstimate:
    """Mean squared prediction error against f on a fresh covariate sample.

    The test points are noiseless: the target is the regression function
    itself.  ``std_error`` is the standard error of the reported mean.
    """
    if test_size < 1:
        raise ValueError("test_size must be >= 1")
    x = sample_covariates(model, test_size, seed)
    truth = eval_f(model, x)
    squared = (np.asarray(predict(estimator, x)) - truth) ** 2
    mse = float(squared.mean())
    if test_size == 1:
        return RiskEstimate(mse=mse, std_error=0.0)
    stderr = float(squared.std(ddof=1) / math.sqrt(test_size))
    return RiskEstimate(mse=mse, std_error=stderr)


def build_estimator(
    name: str,
    structure: Dataset,
    params: FitParams,
    model: AdditiveModel,
    *,
    honest: Dataset | None = None,
    seed: int = 0,
) -> Estimator:
    """Fit one named estimator on the given training data.

    ``oracle_partition`` tessellates the model's true support with the
    side target prescribed by the constructive upper bound at n equal to
    the structure-sample size, then averages within cells.
    """
    if name == "cart":
        return fit_cart(structure, params)
    if name == "honest_cart":
        if honest is None:
            raise ValueError("honest_cart needs an honest sample")
        return honest_relabel(fit_cart(structure, params), honest)
    if name == "forest":
        return fit_forest(structure, params, seed)
    if name == "oracle_partition":
        if model.distribution.is_boolean:
            raise ValueError("oracle_partition requires the uniform distribution")
        support = model.support
        if not support:
            raise ValueError("oracle_partition needs a model with nonempty support")
        beta_max = float(np.max(np.abs(model.coefficients)))
        prescription = sparse_additive_upper_bound(
            model.sparsity, beta_max, 1.0, model.noise_variance, structure.n
        )
        cells = oracle_tessellation(
            support, prescription.side_target, model.dimension
        )
        return partition_estimator(structure, cells)
    raise ValueError(f"unknown estimator {name!r}")


def _run_one(
    config: ExperimentConfig,
    model: AdditiveModel,
    params: FitParams,
    name: str,
    n: int,
    replicate: int,
) -> ExperimentRecord:
    seed_used = derive_seed(config.seed, name, n, replicate)
    structure = sample_dataset(model, n, derive_seed(seed_used, "structure"))
    honest = (
        sample_dataset(model, n, derive_seed(seed_used, "honest"))
        if name == "honest_cart"
        else None
    )
    start = time.perf_counter()
    estimator = build_estimator(
        name,
        structure,
        params,
        model,
        honest=honest,
        seed=derive_seed(seed_used, "fit"),
    )
    fit_seconds = time.perf_counter() - start
    risk = estimate_risk(
        estimator, model, config.test_size, derive_seed(seed_used, "test")
    )
    return ExperimentRecord(
        estimator=name,
        n=n,
        replicate=replicate,
        seed_used=seed_used,
        test_mse=risk.mse,
        fit_seconds=fit_seconds,
    )


def _thread_count() -> int:
    raw = os.environ.get("THREADS", "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"THREADS must be an integer, got {raw!r}") from exc
    return max(value, 1)


def run_experiment(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Run the full sweep and return records sorted by (estimator, n, replicate).

    Every record is an independent job with its own derived seeds, so the
    output is invariant to the number of worker threads (THREADS).
    """
    model = model_from_config(config)
    params = fit_params_from_config(config)
    jobs = [
        (name, n, r)
        for name in sorted(config.estimators)
        for n in sorted(config.n_grid)
        for r in range(config.replicates)
    ]
    workers = _thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(
                pool.map(lambda j: _run_one(config, model, params, *j), jobs)
            )
    else:
        records = [_run_one(config, model, params, *job) for job in jobs]
    records.sort(key=lambda r: (r.estimator, r.n, r.replicate))
    return records


def records_to_points(
    records: Iterable[ExperimentRecord], estimator: str
) -> list[tuple[int, float]]:
    """(n, test_mse) pairs for one estimator, in record order."""
    return [(r.n, r.test_mse) for r in records if r.estimator == estimator]


def fit_rate(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares convergence rate from (n, mse) samples.

    Replicates are averaged per n first, then log2(mean mse) is regressed
    on log2(n).  Requires at least three distinct n values and positive
    mse averages; the standard error is the usual OLS slope error.
    """
    by_n: dict[float, list[float]] = {}
    for n, mse in points:
        by_n.setdefault(float(n), []).append(float(mse))
    if len(by_n) < 3:
        raise ValueError("need at least three distinct n values")
    xs, ys = [], []
    for n in sorted(by_n):
        mean_mse = math.fsum(by_n[n]) / len(by_n[n])
        if not n > 0 or not mean_mse > 0:
            raise ValueError("n and averaged mse must be positive")
        xs.append(math.log2(n))
        ys.append(math.log2(mean_mse))
    x = np.array(xs)
    y = np.array(ys)
    m = x.size
    x_center = x - x.mean()
    sxx = float(np.sum(x_center * x_center))
    slope = float(np.sum(x_center * y) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    residuals = y - (intercept + slope * x)
    ssr = float(np.sum(residuals * residuals))
    stderr = math.sqrt(max(ssr, 0.0) / (m - 2) / sxx) if m > 2 else 0.0
    return RateFit(slope=slope, intercept=intercept, stderr=stderr)


def format_float(value: float) -> str:
    """Shortest decimal string that round-trips to the same float."""
    return repr(float(value))


RESULTS_HEADER = "estimator,n,replicate,seed_used,test_mse,fit_seconds"


def emit_results(records: Iterable[ExperimentRecord], path: str | Path) -> None:
    """Write records as CSV; identical records yield identical bytes."""
    lines = [RESULTS_HEADER]
    for r in records:
        lines.append(
            ",".join(
                (
                    r.estimator,
                    str(r.n),
                    str(r.replicate),
                    str(r.seed_used),
                    format_float(r.test_mse),
                    format_float(r.fit_seconds),
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_results(path: str | Path) -> list[ExperimentRecord]:
    """Parse a results CSV written by :func:`emit_results`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != RESULTS_HEADER:
        raise ValueError(f"unrecognized results header in {path}")
    records = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        est, n, rep, seed, mse, secs = ln.split(",")
        records.append(
            ExperimentRecord(
                estimator=est,
                n=int(n),
                replicate=int(rep),
                seed_used=int(seed),
                test_mse=float(mse),
                fit_seconds=float(secs),
            )
        )
    return records


def _mean_series(records: Sequence[ExperimentRecord]) -> dict[str, list[tuple[int, float]]]:
    grouped: dict[str, dict[int, list[float]]] = {}
    for r in records:
        grouped.setdefault(r.estimator, {}).setdefault(r.n, []).append(r.test_mse)
    return {
        name: [
            (n, math.fsum(values) / len(values))
            for n, values in sorted(by_n.items())
        ]
        for name, by_n in sorted(grouped.items())
    }


def _bound_series(
    config: ExperimentConfig, n_values: Sequence[int]
) -> dict[str, list[tuple[int, float]]]:
    """Theoretical curves evaluated on the experiment's n grid."""
    model = model_from_config(config)
    s = model.sparsity
    if s == 0:
        return {}
    beta = float(np.max(np.abs(model.coefficients)))
    out: dict[str, list[tuple[int, float]]] = {}
    if config.distribution == "uniform":
        lower = [
            (
                n,
                additive_lower_bound(
                    noise_variance=config.noise_variance,
                    n=n,
                    mode="sparse",
                    sparsity=s,
                    beta0=beta,
                ).value,
            )
            for n in n_values
        ]
        upper = [
            (
                n,
                sparse_additive_upper_bound(
                    s, beta, 1.0, config.noise_variance, n
                ).value,
            )
            for n in n_values
        ]
        out["additive_lower_sparse"] = lower
        out["sparse_additive_upper"] = upper
    else:
        pis = [config.bernoulli_p] * config.dimension
        betas = [abs(c.coefficient) for c in model.components]
        out["boolean_lower_general"] = [
            (
                n,
                boolean_lower_bound(
                    noise_variance=config.noise_variance,
                    n=n,
                    mode="general",
                    betas=betas,
                    pis=pis,
                ).value,
            )
            for n in n_values
        ]
    return out


def emit_plot_data(
    records: Sequence[ExperimentRecord],
    path: str | Path,
    *,
    config: ExperimentConfig | None = None,
) -> None:
    """Write replicate-averaged series (plus bound curves) for plotting.

    The output is a long-format CSV ``series,n,value``; estimator series
    are replicate means, bound series (present when a config is supplied)
    are labeled by formula identifier.  A path ending in ``.svg`` renders
    a log-log chart instead (requires matplotlib).
    """
    series = _mean_series(records)
    if config is not None:
        n_values = sorted({r.n for r in records})
        series.update(_bound_series(config, n_values))
    path = Path(path)
    if path.suffix.lower() == ".svg":
        _render_svg(series, path)
        return
    lines = ["series,n,value"]
    for name in sorted(series):
        for n, value in series[name]:
            lines.append(f"{name},{n},{format_float(value)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _render_svg(series: dict[str, list[tuple[int, float]]], path: Path) -> None:
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - matplotlib is an extra
        raise RuntimeError(
            "SVG output needs matplotlib (pip install leafavg[plot])"
        ) from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name in sorted(series):
        pts = series[name]
        ax.plot([n for n, _ in pts], [v for _, v in pts], marker="o", label=name)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", base=2)
    ax.set_xlabel("n")
    ax.set_ylabel("mean squared error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
