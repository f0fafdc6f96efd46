"""Datasets for the experiment harness: synthetic generators, CSV ingestion and model construction."""
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from coreqn import settings

from .errors import DatasetError, InvalidArgumentError
from .helpers import derive_seed
from .models import (
    BayesLinReg,
    GaussianLocation,
    LogisticRegression,
    RbfBasisSpec,
    empirical_prior_from_responses,
    rbf_featurize,
)

logger = logging.getLogger(__name__)

_PARSER_LINE_RE = re.compile(r"line (\d+)")


@dataclass(frozen=True)
class Dataset:
    """Rows of ``features`` with optional ``targets``; schema is points, regression or classification."""

    features: np.ndarray
    targets: np.ndarray = None
    schema: str = "points"
    source: str = ""

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]


def generate_synthetic_gaussian(n, d, data_mean_var, noise_var, seed):
    """mu ~ N(0, data_mean_var I), then x_n ~ N(mu, noise_var I)."""
    if n < 1 or d < 1:
        raise InvalidArgumentError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if data_mean_var < 0 or noise_var < 0:
        raise InvalidArgumentError("variances must be nonnegative")
    rng = np.random.default_rng(seed)
    mu = rng.normal(0.0, np.sqrt(data_mean_var), size=d)
    data = mu + np.sqrt(noise_var) * rng.standard_normal((n, d))
    return Dataset(data, None, "points", "synthetic_gaussian")


def generate_synthetic_logistic(n, d, seed):
    """Standard normal features, standard normal true coefficients, labels in {-1, +1}."""
    if n < 1 or d < 1:
        raise InvalidArgumentError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, d))
    coefficients = rng.standard_normal(d)
    labels = np.where(rng.uniform(size=n) < expit(features @ coefficients), 1.0, -1.0)
    return Dataset(features, labels, "classification", "synthetic_logistic")


def generate_synthetic_rbf(n, seed, noise_scale=settings.RBF_NOISE_SCALE):
    """Points uniform on [0, 10]^2 with responses sin(x1) cos(x2) plus Gaussian noise."""
    if n < 2:
        raise InvalidArgumentError(f"need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    points = rng.uniform(0.0, 10.0, size=(n, 2))
    responses = np.sin(points[:, 0]) * np.cos(points[:, 1]) + noise_scale * rng.standard_normal(n)
    return Dataset(points, responses, "regression", "synthetic_rbf")


def make_rbf_basis(points, seed, scales=settings.RBF_SCALES,
                   per_scale=settings.RBF_CENTERS_PER_SCALE):
    """Centers drawn from the data for every scale, plus one near-constant basis at the data mean."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    centers = []
    widths = []
    for scale in scales:
        chosen = rng.choice(n, size=per_scale, replace=n < per_scale)
        centers.append(points[chosen])
        widths.extend([scale] * per_scale)
    centers.append(points.mean(axis=0, keepdims=True))
    widths.append(settings.RBF_CONSTANT_SCALE)
    return RbfBasisSpec(np.vstack(centers), np.asarray(widths))


def build_rbf_regression(points, responses, seed):
    """Bayesian linear regression on RBF features with the empirical prior of the responses."""
    basis = make_rbf_basis(points, seed)
    design = rbf_featurize(points, basis)
    prior_mean, prior_var, noise_var = empirical_prior_from_responses(responses)
    logger.info("RBF regression: N=%s features=%s noise_var=%.4g", design.shape[0], basis.size, noise_var)
    return BayesLinReg(design, responses, prior_mean, prior_var, noise_var)


def _first_undecodable_line(path):
    with open(path, "rb") as fp:
        for number, raw in enumerate(fp, start=1):
            try:
                raw.decode("utf-8")
            except UnicodeDecodeError:
                return number
    return None


def _read_frame(path):
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True,
                           encoding="utf-8")
    except FileNotFoundError as exc:
        raise DatasetError(f"dataset file not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise DatasetError(
            f"{path}: not valid UTF-8 ({exc.reason})", line=_first_undecodable_line(path)
        ) from exc
    except pd.errors.EmptyDataError as exc:
        raise DatasetError(f"{path}: file is empty", line=1) from exc
    except pd.errors.ParserError as exc:
        match = _PARSER_LINE_RE.search(str(exc))
        line = int(match.group(1)) if match else None
        raise DatasetError(f"{path}: malformed row: {exc}", line=line) from exc


def load_csv_dataset(path, schema):
    """Parse a header-first numeric CSV; the last column is the response or label.

    Line numbers in errors count the header as line 1. Classification labels
    in {0, 1} are remapped to {-1, +1}.
    """
    if schema not in ("regression", "classification"):
        raise InvalidArgumentError(f"unknown schema {schema!r}")
    path = Path(path)
    frame = _read_frame(path)
    if frame.shape[1] < 2:
        raise DatasetError(f"{path}: need at least one feature column and one response column", line=1)
    if frame.shape[0] == 0:
        raise DatasetError(f"{path}: no data rows", line=1)

    values = np.empty(frame.shape)
    for j, column in enumerate(frame.columns):
        raw = frame[column].str.strip()
        numeric = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(numeric))
        if bad.size:
            row = int(bad[0])
            raise DatasetError(
                f"{path}: line {row + 2}, column {column!r}: "
                f"non-numeric or non-finite value {raw.iloc[row]!r}",
                line=row + 2,
                column=column,
            )
        values[:, j] = numeric

    features, targets = values[:, :-1], values[:, -1]
    if schema == "classification":
        targets = _normalize_labels(targets, path, frame.columns[-1])
    logger.info("Loaded %s rows x %s features from %s", features.shape[0], features.shape[1], path)
    return Dataset(features, targets, schema, str(path))


def _normalize_labels(labels, path, column):
    if np.all(np.abs(labels) == 1.0):
        return labels
    if np.all((labels == 0.0) | (labels == 1.0)):
        logger.warning("%s: labels in {0, 1} remapped to {-1, +1}", path)
        return 2.0 * labels - 1.0
    row = int(np.flatnonzero(np.abs(labels) != 1.0)[0])
    raise DatasetError(
        f"{path}: line {row + 2}, column {column!r}: label {labels[row]:g} is not in {{-1, 1}} or {{0, 1}}",
        line=row + 2,
        column=column,
    )


def load_dataset(data, seed):
    """Materialize the dataset described by a DataConfig."""
    if data.kind == "synthetic_gaussian":
        return generate_synthetic_gaussian(data.n, data.d, data.data_mean_var, data.noise_var, seed)
    if data.kind == "synthetic_logistic":
        return generate_synthetic_logistic(data.n, data.d, seed)
    if data.kind == "synthetic_rbf":
        return generate_synthetic_rbf(data.n, seed)
    if data.kind == "csv":
        return load_csv_dataset(data.path, data.schema)
    raise InvalidArgumentError(f"unknown data kind {data.kind!r}")


def build_model(data, dataset, seed):
    """Wrap a dataset in the Bayesian model its DataConfig asks for."""
    if data.kind == "synthetic_gaussian":
        return GaussianLocation(data.prior_mean, data.prior_var, data.noise_var, dataset.features)
    if data.kind == "synthetic_logistic" or data.model == "logistic_regression":
        return LogisticRegression(dataset.features, dataset.targets, data.prior_scale)
    if data.kind == "synthetic_rbf":
        return build_rbf_regression(dataset.features, dataset.targets, derive_seed(seed, "rbf-basis"))
    if data.noise_var is None:
        prior_mean, prior_var, noise_var = empirical_prior_from_responses(dataset.targets)
    else:
        prior_mean, prior_var, noise_var = data.prior_mean, data.prior_var, data.noise_var
    return BayesLinReg(dataset.features, dataset.targets, prior_mean, prior_var, noise_var)
