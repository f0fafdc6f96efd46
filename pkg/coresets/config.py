"""Experiment configuration.

An experiment is one JSON document::

    {
      "data": {"kind": "synthetic_gaussian", "n": 50000, "d": 20},
      "methods": ["QNC", "UNIF", "LAP", "FULL"],
      "coreset_sizes": [50, 100, 200, 500],
      "trials": 10,
      "qnc": {"S": 500, "tau": 0.01, "K_tune": 1},
      "sampler": {"warmup_steps": 500},
      "metrics": {"eval_samples": 1000},
      "seed": 0
    }

Every key is optional. Unknown keys and invalid values raise ConfigError
naming the dotted path of the offending field.
"""
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from coreqn import settings

from .coreset import TAU_MODES, QncConfig
from .errors import ConfigError
from .sampler import HmcConfig

logger = logging.getLogger(__name__)

DATA_KINDS = ("synthetic_gaussian", "synthetic_logistic", "synthetic_rbf", "csv")
CSV_SCHEMAS = ("regression", "classification")
CSV_MODELS = ("linear_regression", "logistic_regression")
METHODS = ("QNC", "UNIF", "LAP", "FULL")

_DEFAULT_SIZES = {
    "synthetic_gaussian": (settings.GAUSSIAN_N, settings.GAUSSIAN_D),
    "synthetic_logistic": (settings.LOGISTIC_N, settings.LOGISTIC_D),
    "synthetic_rbf": (settings.RBF_N, 2),
}


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic_gaussian"
    n: int = None
    d: int = None
    data_mean_var: float = settings.GAUSSIAN_DATA_MEAN_VAR
    noise_var: float = None
    prior_mean: float = 0.0
    prior_var: float = settings.GAUSSIAN_PRIOR_VAR
    prior_scale: float = settings.LOGISTIC_PRIOR_SCALE
    path: str = None
    schema: str = None
    model: str = None


@dataclass(frozen=True)
class MetricConfig:
    imq_scale: float = settings.IMQ_SCALE
    ksd_beta: float = settings.KSD_BETA
    eval_samples: int = settings.EVAL_SAMPLES
    full_hmc_draws: int = settings.FULL_HMC_DRAWS
    mmd: bool = True
    ksd: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    methods: tuple
    coreset_sizes: tuple
    trials: int
    qnc: QncConfig
    sampler: HmcConfig
    metrics: MetricConfig
    seed: int
    output_dir: Path
    threads: int

    def with_overrides(self, seed=None, output_dir=None, threads=None):
        """Apply command-line overrides; ``None`` keeps the configured value."""
        changes = {}
        if seed is not None:
            changes["seed"] = _check_seed(seed, "seed")
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads", "must be >= 1")
            changes["threads"] = threads
        return replace(self, **changes) if changes else self


@dataclass(frozen=True)
class ConfigKey:
    name: str
    kinds: tuple
    default: object
    help: str
    check: object = None
    message: str = ""


def _positive(value):
    return value > 0


def _at_least(bound):
    return lambda value: value >= bound


def _check_seed(value, path):
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2 ** 64:
        raise ConfigError(path, "must be an integer in [0, 2^64)")
    return value


DATA_KEYS = (
    ConfigKey("kind", (str,), "synthetic_gaussian", f"one of {', '.join(DATA_KINDS)}",
              lambda v: v in DATA_KINDS, f"must be one of {DATA_KINDS}"),
    ConfigKey("n", (int,), None, "number of synthetic data points (default depends on kind)",
              _at_least(1), "must be >= 1"),
    ConfigKey("d", (int,), None, "synthetic data dimension (default depends on kind)",
              _at_least(1), "must be >= 1"),
    ConfigKey("data_mean_var", (float,), settings.GAUSSIAN_DATA_MEAN_VAR,
              "variance of the true Gaussian mean per coordinate", _positive, "must be positive"),
    ConfigKey("noise_var", (float,), None,
              "likelihood noise variance (Gaussian default 100; omitted for CSV regression means empirical)",
              _positive, "must be positive"),
    ConfigKey("prior_mean", (float,), 0.0, "prior mean of every coordinate (Gaussian and linear models)"),
    ConfigKey("prior_var", (float,), settings.GAUSSIAN_PRIOR_VAR, "isotropic prior variance",
              _positive, "must be positive"),
    ConfigKey("prior_scale", (float,), settings.LOGISTIC_PRIOR_SCALE,
              "Cauchy prior scale of the logistic model", _positive, "must be positive"),
    ConfigKey("path", (str,), None, "CSV dataset path (kind = csv)"),
    ConfigKey("schema", (str,), None, f"CSV schema, one of {', '.join(CSV_SCHEMAS)}",
              lambda v: v in CSV_SCHEMAS, f"must be one of {CSV_SCHEMAS}"),
    ConfigKey("model", (str,), None, f"model fitted to a CSV dataset, one of {', '.join(CSV_MODELS)}",
              lambda v: v in CSV_MODELS, f"must be one of {CSV_MODELS}"),
)

QNC_KEYS = (
    ConfigKey("S", (int,), settings.QNC_SAMPLES, "Monte Carlo draws per Newton step",
              _at_least(2), "must be >= 2"),
    ConfigKey("K", (int,), settings.QNC_MAX_STEPS, "maximum Newton steps", _at_least(1), "must be >= 1"),
    ConfigKey("K_tune", (int,), settings.QNC_TUNE_STEPS, "iterations k <= K_tune use the line search",
              _at_least(0), "must be >= 0"),
    ConfigKey("gamma", (float,), settings.QNC_GAMMA, "base step size",
              lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]"),
    ConfigKey("tau", (float,), settings.QNC_TAU, "Tikhonov regularization of G", _positive,
              "must be positive"),
    ConfigKey("stop_patience", (int,), settings.QNC_STOP_PATIENCE,
              "iterations without improvement before stopping", _at_least(1), "must be >= 1"),
    ConfigKey("stop_factor", (float,), settings.QNC_STOP_FACTOR,
              "required relative improvement of the gradient norm", lambda v: 0.0 < v < 1.0,
              "must lie in (0, 1)"),
    ConfigKey("tau_mode", (str,), "fixed", f"one of {', '.join(TAU_MODES)}",
              lambda v: v in TAU_MODES, f"must be one of {TAU_MODES}"),
    ConfigKey("max_condition", (float,), settings.QNC_MAX_CONDITION,
              "condition-number cap used when tau_mode = condition", lambda v: v > 1.0,
              "must exceed 1"),
)

SAMPLER_KEYS = (
    ConfigKey("warmup_steps", (int,), settings.HMC_WARMUP_STEPS, "HMC warmup transitions",
              _at_least(1), "must be >= 1"),
    ConfigKey("leapfrog_steps", (int,), settings.HMC_LEAPFROG_STEPS, "leapfrog steps per transition",
              _at_least(1), "must be >= 1"),
    ConfigKey("target_accept", (float,), settings.HMC_TARGET_ACCEPT,
              "dual-averaging acceptance target", lambda v: 0.0 < v < 1.0, "must lie in (0, 1)"),
    ConfigKey("initial_step_size", (float,), settings.HMC_INITIAL_STEP_SIZE, "initial leapfrog step",
              _positive, "must be positive"),
)

METRIC_KEYS = (
    ConfigKey("imq_scale", (float,), settings.IMQ_SCALE, "IMQ kernel scale c", _positive,
              "must be positive"),
    ConfigKey("ksd_beta", (float,), settings.KSD_BETA, "IMQ exponent of the Stein kernel",
              lambda v: -1.0 < v < 0.0, "must lie in (-1, 0)"),
    ConfigKey("eval_samples", (int,), settings.EVAL_SAMPLES, "draws used to evaluate each method",
              _at_least(2), "must be >= 2"),
    ConfigKey("full_hmc_draws", (int,), settings.FULL_HMC_DRAWS,
              "HMC draws of the full-data reference for non-conjugate models", _at_least(2),
              "must be >= 2"),
    ConfigKey("mmd", (bool,), True, "compute the IMQ maximum mean discrepancy"),
    ConfigKey("ksd", (bool,), True, "compute the IMQ kernel Stein discrepancy"),
)

TOP_KEYS = (
    ConfigKey("methods", (list,), list(settings.DEFAULT_METHODS), f"subset of {', '.join(METHODS)}"),
    ConfigKey("coreset_sizes", (list,), list(settings.DEFAULT_CORESET_SIZES),
              "coreset sizes M, each <= N"),
    ConfigKey("trials", (int,), settings.DEFAULT_TRIALS, "trials per (method, M)", _at_least(1),
              "must be >= 1"),
    ConfigKey("seed", (int,), settings.DEFAULT_SEED, "master seed, unsigned 64-bit"),
    ConfigKey("output_dir", (str,), None, "output directory (default COREQN_OUTPUT_DIR or ./results)"),
    ConfigKey("threads", (int,), None, "concurrent cells (default COREQN_THREADS or 1)",
              _at_least(1), "must be >= 1"),
)

SECTIONS = {
    "data": DATA_KEYS,
    "qnc": QNC_KEYS,
    "sampler": SAMPLER_KEYS,
    "metrics": METRIC_KEYS,
}


def describe_config_keys():
    """Plain-text listing of every configuration key and its default."""
    lines = ["configuration keys (JSON):"]
    for key in TOP_KEYS:
        lines.append(f"  {key.name} (default {key.default}): {key.help}")
    for section, keys in SECTIONS.items():
        for key in keys:
            lines.append(f"  {section}.{key.name} (default {key.default}): {key.help}")
    return "\n".join(lines)


def _coerce(value, key, path):
    if value is None and key.default is None:
        return None
    if isinstance(value, bool) and bool not in key.kinds:
        raise ConfigError(path, f"expected {key.kinds[0].__name__}, got bool")
    if float in key.kinds and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, key.kinds):
        raise ConfigError(path, f"expected {key.kinds[0].__name__}, got {type(value).__name__}")
    if key.check is not None and not key.check(value):
        raise ConfigError(path, key.message or "invalid value")
    return value


def _read_section(raw, keys, prefix=""):
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a JSON object")
    known = {key.name: key for key in keys}
    unknown = [name for name in raw if name not in known]
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown key")
    return {
        name: _coerce(raw[name], key, f"{prefix}{name}") if name in raw else key.default
        for name, key in known.items()
    }


def _parse_data(raw):
    values = _read_section(raw, DATA_KEYS, "data.")
    kind = values["kind"]
    if kind == "csv":
        for name in ("path", "schema", "model"):
            if values[name] is None:
                raise ConfigError(f"data.{name}", "required when data.kind is csv")
        expected = "logistic_regression" if values["schema"] == "classification" else "linear_regression"
        if values["model"] != expected:
            raise ConfigError("data.model", f"a {values['schema']} dataset needs model {expected}")
    else:
        default_n, default_d = _DEFAULT_SIZES[kind]
        values["n"] = values["n"] or default_n
        values["d"] = default_d if kind == "synthetic_rbf" else values["d"] or default_d
        if kind == "synthetic_gaussian" and values["noise_var"] is None:
            values["noise_var"] = settings.GAUSSIAN_NOISE_VAR
    return DataConfig(**values)


def _parse_methods(raw):
    if not raw:
        raise ConfigError("methods", "must name at least one method")
    for i, method in enumerate(raw):
        if method not in METHODS:
            raise ConfigError(f"methods[{i}]", f"unknown method {method!r}; expected one of {METHODS}")
    if len(set(raw)) != len(raw):
        raise ConfigError("methods", "methods must be distinct")
    return tuple(raw)


def _parse_sizes(raw, n_data):
    if not raw:
        raise ConfigError("coreset_sizes", "must list at least one size")
    for i, size in enumerate(raw):
        if isinstance(size, bool) or not isinstance(size, int) or size < 1:
            raise ConfigError(f"coreset_sizes[{i}]", "must be a positive integer")
        if n_data is not None and size > n_data:
            raise ConfigError(f"coreset_sizes[{i}]", f"size {size} exceeds N={n_data}")
    return tuple(raw)


def _env_threads():
    if not settings.THREADS:
        return 1
    try:
        threads = int(settings.THREADS)
    except ValueError:
        threads = 0
    if threads < 1:
        raise ConfigError("threads", f"COREQN_THREADS must be a positive integer, got {settings.THREADS!r}")
    return threads


def parse_config(raw):
    """Validate a decoded JSON document and build an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    top_raw = {key: value for key, value in raw.items() if key not in SECTIONS}
    top = _read_section(top_raw, TOP_KEYS)

    data = _parse_data(raw.get("data", {}))
    methods = _parse_methods(top["methods"])
    sizes = _parse_sizes(top["coreset_sizes"], data.n if data.kind != "csv" else None)
    seed = _check_seed(top["seed"], "seed")

    qnc_values = _read_section(raw.get("qnc", {}), QNC_KEYS, "qnc.")
    sampler_values = _read_section(raw.get("sampler", {}), SAMPLER_KEYS, "sampler.")
    metric_values = _read_section(raw.get("metrics", {}), METRIC_KEYS, "metrics.")

    threads = top["threads"]
    if threads is None:
        threads = _env_threads()

    return ExperimentConfig(
        data=data,
        methods=methods,
        coreset_sizes=sizes,
        trials=top["trials"],
        qnc=QncConfig(M=max(sizes), seed=seed, **qnc_values),
        sampler=HmcConfig(**sampler_values),
        metrics=MetricConfig(**metric_values),
        seed=seed,
        output_dir=Path(top["output_dir"]) if top["output_dir"] else Path(settings.OUTPUT_DIR),
        threads=threads,
    )


def load_config(path):
    """Read and validate a JSON experiment configuration file."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fp:
            raw = json.load(fp)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON in {path}: {exc}") from exc
    config = parse_config(raw)
    logger.debug("Loaded configuration from %s", path)
    return config
