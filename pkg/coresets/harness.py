"""Experiment harness.

Runs the (method, coreset size, trial) grid against a full-data reference,
writes ``results.csv`` row by row, then ``summary.csv`` with the median and
quartiles per (method, size, metric). Also hosts the sensitivity sweep and
the numerical theorem checks behind ``verify-theorems``.
"""
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np
import pandas as pd

from coreqn import settings

from .coreset import init_weights, run_qnc, uniform_subsample, unif_baseline
from .datasets import build_model, generate_synthetic_gaussian, load_dataset
from .errors import ConfigError, InvalidArgumentError, PreconditionError
from .helpers import derive_seed
from .metrics import (
    MetricsRow,
    fit_gaussian,
    gaussian_kl,
    ksd_imq,
    mmd_imq,
    relative_moment_errors,
)
from .models import GaussianLocation
from .oracle import affine_projection, coreset_kl, solve_exact_weights, verify_convergence_theorem
from .sampler import laplace_approximation, sample_coreset_posterior

logger = logging.getLogger(__name__)

RESULT_COLUMNS = (
    "method",
    "coreset_size",
    "trial",
    "reverse_kl",
    "forward_kl",
    "rel_mean_err",
    "rel_cov_err",
    "mmd",
    "ksd",
    "build_time_s",
    "sample_time_per_draw_s",
    "seed",
    "status",
)
SUMMARY_COLUMNS = ("method", "coreset_size", "metric", "median", "p25", "p75", "n_trials")
SUMMARY_METRICS = (
    "reverse_kl",
    "forward_kl",
    "rel_mean_err",
    "rel_cov_err",
    "rel_logvar_err",
    "mmd",
    "ksd",
    "build_time_s",
    "sample_time_per_draw_s",
)
SWEEP_PARAMETERS = {"S": int, "tau": float, "K_tune": int}

_SCORE_CHUNK = 256


@dataclass(frozen=True)
class ExperimentResult:
    method: str
    coreset_size: int
    trial: int
    metrics: MetricsRow = None
    build_time_s: float = math.nan
    sample_time_per_draw_s: float = math.nan
    seed: int = 0
    status: str = "ok"

    def as_row(self):
        row = {
            "method": self.method,
            "coreset_size": self.coreset_size,
            "trial": self.trial,
            "build_time_s": self.build_time_s,
            "sample_time_per_draw_s": self.sample_time_per_draw_s,
            "seed": self.seed,
            "status": self.status,
        }
        for name in ("reverse_kl", "forward_kl", "rel_mean_err", "rel_cov_err", "rel_logvar_err", "mmd", "ksd"):
            row[name] = getattr(self.metrics, name) if self.metrics is not None else math.nan
        return row


@dataclass(frozen=True)
class FullReference:
    """Full-data posterior: exact for conjugate models, a Gaussian fit of HMC draws otherwise."""

    posterior: object
    draws: np.ndarray
    exact: bool


def cell_seed(master_seed, method, size, trial):
    return derive_seed(master_seed, method, size, trial)


def build_reference(model, config):
    seed = derive_seed(config.seed, "full-reference")
    if model.conjugate:
        posterior = model.conjugate_coreset_posterior(None)
        draws = posterior.sample(config.metrics.eval_samples, np.random.default_rng(seed))
        return FullReference(posterior, draws, True)
    logger.info("Sampling the full-data reference with HMC (%s draws)", config.metrics.full_hmc_draws)
    batch = sample_coreset_posterior(model, None, config.metrics.full_hmc_draws, seed, config.sampler)
    return FullReference(fit_gaussian(batch.draws), batch.draws, False)


def _full_data_score(model):
    def score(thetas):
        return np.vstack([
            model.score(thetas[start:start + _SCORE_CHUNK], None)
            for start in range(0, thetas.shape[0], _SCORE_CHUNK)
        ])

    return score


def evaluate(model, approx, draws, reference, metric_config):
    """Compare one approximation (and its evaluation draws) with the full-data reference."""
    truth = reference.posterior
    errors = relative_moment_errors(approx, truth)
    mmd = mmd_imq(draws, reference.draws, metric_config.imq_scale) if metric_config.mmd else math.nan
    ksd = (
        ksd_imq(draws, _full_data_score(model), metric_config.imq_scale, metric_config.ksd_beta)
        if metric_config.ksd
        else math.nan
    )
    return MetricsRow(
        reverse_kl=gaussian_kl(approx, truth),
        forward_kl=gaussian_kl(truth, approx),
        rel_mean_err=errors.rel_mean_err,
        rel_cov_err=errors.rel_cov_err,
        rel_logvar_err=errors.rel_logvar_err,
        mmd=mmd,
        ksd=ksd,
        n_samples=draws.shape[0],
        n_reference=reference.draws.shape[0],
    )


def _coreset_approximation(model, w, config, seed):
    started = time.perf_counter()
    batch = sample_coreset_posterior(
        model, w, config.metrics.eval_samples, derive_seed(seed, "eval"), config.sampler
    )
    per_draw = (time.perf_counter() - started) / batch.size
    approx = model.conjugate_coreset_posterior(w) if model.conjugate else fit_gaussian(batch.draws)
    return approx, batch.draws, per_draw


def _gaussian_draws(distribution, n_draws, seed):
    started = time.perf_counter()
    draws = distribution.sample(n_draws, np.random.default_rng(derive_seed(seed, "eval")))
    return draws, (time.perf_counter() - started) / n_draws


def write_trace(trace, output_dir, method, size, trial):
    path = Path(output_dir) / f"trace_{method}_{size}_{trial}.json"
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(trace.to_dict(), fp, indent=2)
    return path


def build_approximation(model, reference, config, method, size, trial, seed):
    """Return (approx, eval draws, build seconds, sampling seconds per draw) for one cell."""
    if method in ("QNC", "UNIF"):
        started = time.perf_counter()
        if method == "QNC":
            sampler = partial(sample_coreset_posterior, config=config.sampler)
            w, trace = run_qnc(model, sampler, replace(config.qnc, M=size, seed=seed))
        else:
            w, trace = unif_baseline(model.n_data, size, derive_seed(seed, "subsample")), None
        build_time = time.perf_counter() - started
        if trace is not None:
            write_trace(trace, config.output_dir, method, size, trial)
        approx, draws, per_draw = _coreset_approximation(model, w, config, seed)
        return approx, draws, build_time, per_draw

    n_eval = config.metrics.eval_samples
    if method == "LAP":
        started = time.perf_counter()
        approx = laplace_approximation(model, None)
        build_time = time.perf_counter() - started
        draws, per_draw = _gaussian_draws(approx, n_eval, seed)
        return approx, draws, build_time, per_draw
    if method == "FULL":
        if reference.exact:
            draws, per_draw = _gaussian_draws(reference.posterior, n_eval, seed)
            return reference.posterior, draws, 0.0, per_draw
        # fit-vs-fit against the reference batch: the Monte Carlo noise floor
        started = time.perf_counter()
        batch = sample_coreset_posterior(model, None, n_eval, derive_seed(seed, "eval"), config.sampler)
        per_draw = (time.perf_counter() - started) / batch.size
        return fit_gaussian(batch.draws), batch.draws, 0.0, per_draw
    raise InvalidArgumentError(f"unknown method {method!r}")


def run_cell(model, reference, config, method, size, trial):
    """One (method, M, trial) cell; failures become error rows instead of exceptions."""
    seed = cell_seed(config.seed, method, size, trial)
    try:
        approx, draws, build_time, per_draw = build_approximation(
            model, reference, config, method, size, trial, seed
        )
        metrics = evaluate(model, approx, draws, reference, config.metrics)
    except Exception as exc:
        logger.exception("Cell %s M=%s trial=%s failed", method, size, trial)
        iteration = getattr(exc, "iteration", None)
        where = f" (iteration {iteration})" if iteration is not None else ""
        return ExperimentResult(method, size, trial, seed=seed, status=f"error: {exc}{where}")
    logger.debug("Cell %s M=%s trial=%s: reverse KL %.4g", method, size, trial, metrics.reverse_kl)
    return ExperimentResult(method, size, trial, metrics, build_time, per_draw, seed)


class ResultWriter:
    """Writes results.csv one row at a time; each row is flushed and synced before the next."""

    def __init__(self, path, columns=RESULT_COLUMNS):
        self.path = Path(path)
        self.columns = list(columns)
        self._fp = open(self.path, "w", encoding="utf-8", newline="")
        self._fp.write(pd.DataFrame(columns=self.columns).to_csv(index=False, lineterminator="\n"))
        self._sync()

    def write(self, result):
        frame = pd.DataFrame([result.as_row()], columns=self.columns)
        self._fp.write(frame.to_csv(index=False, header=False, lineterminator="\n"))
        self._sync()

    def _sync(self):
        self._fp.flush()
        os.fsync(self._fp.fileno())

    def close(self):
        if not self._fp.closed:
            self._fp.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def run_experiment(config):
    """Run every (method, M, trial) cell and return the result table.

    Writes results.csv incrementally, then summary.csv, under
    ``config.output_dir``. Cells run on ``config.threads`` worker threads
    and are written in grid order.
    """
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config.data, derive_seed(config.seed, "data"))
    model = build_model(config.data, dataset, config.seed)
    for i, size in enumerate(config.coreset_sizes):
        if size > model.n_data:
            raise ConfigError(f"coreset_sizes[{i}]", f"size {size} exceeds N={model.n_data}")

    cells = [
        (method, size, trial)
        for size in config.coreset_sizes
        for method in config.methods
        for trial in range(config.trials)
    ]
    logger.info(
        "Experiment: %s on N=%s P=%s, %s cells, %s threads",
        type(model).__name__, model.n_data, model.dim, len(cells), config.threads,
    )
    reference = build_reference(model, config)

    results = []
    with ResultWriter(output_dir / "results.csv") as writer, \
            ThreadPoolExecutor(max_workers=config.threads) as executor:
        for result in executor.map(lambda cell: run_cell(model, reference, config, *cell), cells):
            writer.write(result)
            results.append(result)

    table = pd.DataFrame([result.as_row() for result in results],
                         columns=list(RESULT_COLUMNS) + ["rel_logvar_err"])
    summarize(table).to_csv(output_dir / "summary.csv", index=False)
    failed = int((table["status"] != "ok").sum())
    logger.info("Experiment finished: %s cells, %s failed; results in %s", len(cells), failed, output_dir)
    return table


def break_even_draws(build_time, per_draw, full_per_draw):
    """Draw count n at which build_time + n * per_draw equals n * full_per_draw (inf if never)."""
    saving = full_per_draw - per_draw
    if not saving > 0:
        return math.inf
    return build_time / saving


def _quantile_row(method, size, metric, values):
    return {
        "method": method,
        "coreset_size": size,
        "metric": metric,
        "median": float(values.median()),
        "p25": float(values.quantile(0.25)),
        "p75": float(values.quantile(0.75)),
        "n_trials": int(values.size),
    }


def summarize(table):
    """Median and 25th/75th percentiles (linear interpolation) per (method, M, metric)."""
    ok = table[table["status"] == "ok"]
    metrics = [name for name in SUMMARY_METRICS if name in ok.columns]
    rows = []
    for (method, size), group in ok.groupby(["method", "coreset_size"], sort=True):
        for metric in metrics:
            values = group[metric].dropna()
            if not values.empty:
                rows.append(_quantile_row(method, size, metric, values))

    full = ok[ok["method"] == "FULL"]["sample_time_per_draw_s"].dropna()
    if not full.empty:
        full_per_draw = float(full.median())
        for (method, size), group in ok[ok["method"] != "FULL"].groupby(["method", "coreset_size"], sort=True):
            value = break_even_draws(
                float(group["build_time_s"].median()),
                float(group["sample_time_per_draw_s"].median()),
                full_per_draw,
            )
            # one value per cell from medians; quantiles of inf would be NaN
            rows.append({
                "method": method,
                "coreset_size": size,
                "metric": "break_even_draws",
                "median": value,
                "p25": value,
                "p75": value,
                "n_trials": int(len(group)),
            })
    return pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))


def summarize_file(path, output=None):
    """Summarize a results.csv; writes summary.csv next to it unless ``output`` is given."""
    path = Path(path)
    table = pd.read_csv(path)
    missing = [name for name in ("method", "coreset_size", "status") if name not in table.columns]
    if missing:
        raise InvalidArgumentError(f"{path} is not a results file; missing columns {missing}")
    summary = summarize(table)
    output = Path(output) if output else path.with_name("summary.csv")
    summary.to_csv(output, index=False)
    return summary, output


def run_sensitivity_sweep(config, parameter, values):
    """Rerun the QNC cells once per value of ``parameter`` (S, tau or K_tune).

    Each value gets its own subdirectory; the combined table is written to
    ``sweep_<parameter>.csv`` in the configured output directory.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError("parameter", f"must be one of {tuple(SWEEP_PARAMETERS)}")
    cast = SWEEP_PARAMETERS[parameter]
    output_dir = Path(config.output_dir)
    frames = []
    for value in values:
        value = cast(value)
        try:
            qnc = replace(config.qnc, **{parameter: value})
        except InvalidArgumentError as exc:
            raise ConfigError(f"qnc.{parameter}", str(exc)) from exc
        logger.info("Sweep: %s = %s", parameter, value)
        table = run_experiment(replace(
            config,
            methods=("QNC",),
            qnc=qnc,
            output_dir=output_dir / f"sweep_{parameter}_{value}",
        ))
        table.insert(0, parameter, value)
        frames.append(table)
    combined = pd.concat(frames, ignore_index=True)
    output_dir.mkdir(parents=True, exist_ok=True)
    combined.to_csv(output_dir / f"sweep_{parameter}.csv", index=False)
    return combined


@dataclass
class TheoremVerification:
    convergence: object
    convergence_setup: dict
    feasibility: list = field(default_factory=list)
    feasibility_setup: dict = field(default_factory=dict)
    required_feasible: int = 9
    ratio_bound: float = 1.01
    kl_tolerance: float = 1e-8

    @property
    def feasible_count(self):
        return sum(1 for entry in self.feasibility if entry["feasible"] and entry["kl"] <= self.kl_tolerance)

    def holds(self):
        return self.convergence.holds(self.ratio_bound) and self.feasible_count >= self.required_feasible

    def to_dict(self):
        return {
            "convergence": {**self.convergence_setup, **self.convergence.to_dict()},
            "feasibility": {**self.feasibility_setup, "trials": self.feasibility,
                            "feasible_count": self.feasible_count,
                            "required": self.required_feasible},
            "holds": self.holds(),
        }


def find_interior_support(model, m, seed, attempts=20):
    """First subsample whose N/M start projects onto the optimal set without clamping."""
    for attempt in range(attempts):
        support = uniform_subsample(model.n_data, m, derive_seed(seed, "support", attempt))
        _, feasible = solve_exact_weights(model, support)
        if feasible and np.all(affine_projection(model, init_weights(model.n_data, support)) > 0):
            return support
    raise PreconditionError(f"no interior feasible support of size {m} found in {attempts} attempts")


def verify_theorems(seed, dim=5, n_data=1000, m=50, gamma=1.0, tau=1e-8, steps=20,
                    feasibility_dim=10, feasibility_n=10000, feasibility_trials=10):
    """Exact-moment convergence check plus the exact-coreset existence check."""
    data = generate_synthetic_gaussian(
        n_data, dim, settings.GAUSSIAN_DATA_MEAN_VAR, settings.GAUSSIAN_NOISE_VAR,
        derive_seed(seed, "convergence-data"),
    )
    model = GaussianLocation(0.0, settings.GAUSSIAN_PRIOR_VAR, settings.GAUSSIAN_NOISE_VAR, data.features)
    support = find_interior_support(model, m, seed)
    report = verify_convergence_theorem(model, support, gamma, tau, steps)

    m_exact = 3 * (feasibility_dim + 1) * math.ceil(math.log(feasibility_n))
    feasibility = []
    for trial in range(feasibility_trials):
        trial_seed = derive_seed(seed, "feasibility", trial)
        data = generate_synthetic_gaussian(
            feasibility_n, feasibility_dim, settings.GAUSSIAN_DATA_MEAN_VAR,
            settings.GAUSSIAN_NOISE_VAR, trial_seed,
        )
        exact_model = GaussianLocation(
            0.0, settings.GAUSSIAN_PRIOR_VAR, settings.GAUSSIAN_NOISE_VAR, data.features
        )
        w_star, feasible = solve_exact_weights(
            exact_model, uniform_subsample(feasibility_n, m_exact, derive_seed(trial_seed, "support"))
        )
        feasibility.append({
            "trial": trial,
            "feasible": feasible,
            "kl": coreset_kl(exact_model, w_star),
            "active_size": w_star.active_size,
        })

    result = TheoremVerification(
        convergence=report,
        convergence_setup={"d": dim, "N": n_data, "M": m, "gamma": gamma, "tau": tau, "K": steps},
        feasibility=feasibility,
        feasibility_setup={"d": feasibility_dim, "N": feasibility_n, "M": m_exact},
        required_feasible=math.ceil(0.9 * feasibility_trials),
    )
    logger.info("Theorem checks %s", "hold" if result.holds() else "FAILED")
    return result
