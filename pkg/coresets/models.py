"""Bayesian models consumed by the coreset optimizer, samplers and metrics.

Every model exposes per-datum potentials ``f_n(theta) = log p(x_n | theta)``
(normalizing constants included), the prior log-density and exact gradients
of both. Weighted targets ``log pi_0(theta) + sum_n w_n f_n(theta)`` only
touch the support of ``w``.

Variance convention: every ``*_var`` field is a variance, never a standard
deviation.
"""
import abc
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from scipy.special import expit

from coreqn import settings

from .errors import (
    DataIndexError,
    DimensionMismatchError,
    InsufficientDataError,
    InvalidModelError,
    LinearAlgebraError,
    UnsupportedModelError,
)

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_CHUNK_ROWS = 4096


@dataclass(frozen=True)
class GaussianDistribution:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionMismatchError(
                f"covariance shape {cov.shape} does not match mean of length {mean.size}"
            )
        scale = max(np.max(np.abs(cov)), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise InvalidModelError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        trace = float(np.trace(cov))
        if np.linalg.eigvalsh(cov)[0] < -1e-10 * max(trace, 0.0) / mean.size:
            raise InvalidModelError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self):
        return self.mean.size

    def sample(self, size, rng):
        """Draw ``size`` rows by a Cholesky transform of standard normals."""
        try:
            chol = linalg.cholesky(self.covariance, lower=True)
        except linalg.LinAlgError:
            # semidefinite covariance: fall back to the symmetric square root
            eigvals, eigvecs = np.linalg.eigh(self.covariance)
            chol = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ chol.T


@dataclass(frozen=True)
class RbfBasisSpec:
    centers: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        scales = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if centers.shape != (scales.size, 2):
            raise DimensionMismatchError(
                f"expected {scales.size}x2 centers, got {centers.shape}"
            )
        if np.any(scales <= 0):
            raise InvalidModelError("RBF scales must be strictly positive")
        if np.count_nonzero(scales == settings.RBF_CONSTANT_SCALE) != 1:
            raise InvalidModelError(
                f"exactly one basis must have scale {settings.RBF_CONSTANT_SCALE:g}"
            )
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "scales", scales)

    @property
    def size(self):
        return self.scales.size


def _support_and_values(w, n_data):
    """Unpack a weight vector; ``None`` means the full data with unit weights."""
    if w is None:
        return np.arange(n_data), np.ones(n_data)
    if w.full_dim != n_data:
        raise DimensionMismatchError(
            f"weight vector has full dimension {w.full_dim}, model has N={n_data}"
        )
    return w.support, w.values


class BayesianModel(abc.ABC):
    """Common interface; subclasses implement the vectorized blocks."""

    conjugate = False

    @property
    @abc.abstractmethod
    def n_data(self):
        ...

    @property
    @abc.abstractmethod
    def dim(self):
        ...

    @abc.abstractmethod
    def _potential_block(self, thetas, indices):
        """(S, P) parameters x index array -> (S, len(indices)) potentials."""

    @abc.abstractmethod
    def _weighted_grad_block(self, thetas, indices, weights):
        """Sum over indices of weight * grad f_n, shape (S, P)."""

    @abc.abstractmethod
    def _prior_block(self, thetas):
        ...

    @abc.abstractmethod
    def _prior_grad_block(self, thetas):
        ...

    # -- validation -----------------------------------------------------

    def _rows(self, thetas):
        arr = np.asarray(thetas, dtype=float)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"theta has shape {np.shape(thetas)}, expected trailing dimension {self.dim}"
            )
        return arr

    def _check_index(self, n):
        if not 0 <= n < self.n_data:
            raise DataIndexError(f"datum index {n} out of range [0, {self.n_data})")

    # -- per-datum potentials ---------------------------------------------

    def potential(self, n, theta):
        self._check_index(n)
        return float(self._potential_block(self._rows(theta), np.array([n]))[0, 0])

    def potential_grad_theta(self, n, theta):
        self._check_index(n)
        return self._weighted_grad_block(self._rows(theta), np.array([n]), np.ones(1))[0]

    def potentials(self, thetas, indices=None):
        """Potentials of ``indices`` (default: all data) at each row of ``thetas``."""
        rows = self._rows(thetas)
        if indices is None:
            indices = np.arange(self.n_data)
        return self._potential_block(rows, np.asarray(indices, dtype=int))

    def total_potential(self, thetas):
        """``sum_n f_n(theta_s)`` for every row, streamed over the data in chunks."""
        rows = self._rows(thetas)
        total = np.zeros(rows.shape[0])
        for start in range(0, self.n_data, _CHUNK_ROWS):
            chunk = np.arange(start, min(start + _CHUNK_ROWS, self.n_data))
            total += self._potential_block(rows, chunk).sum(axis=1)
        return total

    # -- prior ------------------------------------------------------------

    def prior_logdensity(self, theta):
        values = self._prior_block(self._rows(theta))
        return float(values[0]) if np.ndim(theta) == 1 else values

    def prior_grad(self, theta):
        grads = self._prior_grad_block(self._rows(theta))
        return grads[0] if np.ndim(theta) == 1 else grads

    # -- weighted target log pi_0 + w^T f ---------------------------------

    def log_target(self, theta, w=None):
        rows = self._rows(theta)
        support, values = _support_and_values(w, self.n_data)
        logp = self._prior_block(rows)
        if support.size:
            logp = logp + self._potential_block(rows, support) @ values
        return float(logp[0]) if np.ndim(theta) == 1 else logp

    def score(self, theta, w=None):
        """Gradient of the weighted target log-density."""
        rows = self._rows(theta)
        support, values = _support_and_values(w, self.n_data)
        grad = self._prior_grad_block(rows)
        if support.size:
            grad = grad + self._weighted_grad_block(rows, support, values)
        return grad[0] if np.ndim(theta) == 1 else grad

    def log_target_and_grad(self, theta, w=None):
        return self.log_target(theta, w), self.score(theta, w)

    def conjugate_coreset_posterior(self, w):
        raise UnsupportedModelError(
            f"{type(self).__name__} has no closed-form coreset posterior"
        )


def _gaussian_prior_block(thetas, prior_mean, prior_var):
    dim = thetas.shape[1]
    sq = np.sum((thetas - prior_mean) ** 2, axis=1)
    return -0.5 * dim * (_LOG_2PI + math.log(prior_var)) - 0.5 * sq / prior_var


def _check_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise InvalidModelError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True, eq=False)
class GaussianLocation(BayesianModel):
    """theta ~ N(prior_mean, prior_var I), x_n ~ N(theta, noise_var I)."""

    prior_mean: np.ndarray
    prior_var: float
    noise_var: float
    data: np.ndarray

    conjugate = True

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidModelError("data must have N >= 1 rows and D >= 1 columns")
        prior_mean = np.broadcast_to(
            np.asarray(self.prior_mean, dtype=float), (data.shape[1],)
        ).copy()
        _check_positive(prior_var=self.prior_var, noise_var=self.noise_var)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "prior_mean", prior_mean)

    @property
    def n_data(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    @cached_property
    def _sufficient_stats(self):
        return self.data.sum(axis=0), float(np.sum(self.data ** 2))

    @property
    def data_sum(self):
        return self._sufficient_stats[0]

    def _potential_block(self, thetas, indices):
        sq = cdist(thetas, self.data[indices], "sqeuclidean")
        const = -0.5 * self.dim * (_LOG_2PI + math.log(self.noise_var))
        return const - 0.5 * sq / self.noise_var

    def _weighted_grad_block(self, thetas, indices, weights):
        weighted_sum = weights @ self.data[indices]
        return (weighted_sum[np.newaxis, :] - np.sum(weights) * thetas) / self.noise_var

    def total_potential(self, thetas):
        rows = self._rows(thetas)
        sum_x, sum_sq = self._sufficient_stats
        n = self.n_data
        quad = sum_sq - 2.0 * rows @ sum_x + n * np.sum(rows ** 2, axis=1)
        const = -0.5 * n * self.dim * (_LOG_2PI + math.log(self.noise_var))
        return const - 0.5 * quad / self.noise_var

    def _prior_block(self, thetas):
        return _gaussian_prior_block(thetas, self.prior_mean, self.prior_var)

    def _prior_grad_block(self, thetas):
        return (self.prior_mean - thetas) / self.prior_var

    def posterior_params(self, w=None):
        """Return (mean, variance) of the isotropic coreset posterior."""
        support, values = _support_and_values(w, self.n_data)
        precision = 1.0 / self.prior_var + np.sum(values) / self.noise_var
        shift = self.prior_mean / self.prior_var + (values @ self.data[support]) / self.noise_var
        variance = 1.0 / precision
        return shift * variance, variance

    def conjugate_coreset_posterior(self, w):
        mean, variance = self.posterior_params(w)
        return GaussianDistribution(mean, variance * np.eye(self.dim))


@dataclass(frozen=True, eq=False)
class BayesLinReg(BayesianModel):
    """y_n = x_n^T theta + eps, eps ~ N(0, noise_var); theta ~ N(prior_mean, prior_var I)."""

    design: np.ndarray
    responses: np.ndarray
    prior_mean: np.ndarray
    prior_var: float
    noise_var: float

    conjugate = True

    def __post_init__(self):
        design = np.atleast_2d(np.asarray(self.design, dtype=float))
        responses = np.asarray(self.responses, dtype=float).ravel()
        if design.shape[0] < 1 or design.shape[1] < 1:
            raise InvalidModelError("design must have N >= 1 rows and D >= 1 columns")
        if responses.size != design.shape[0]:
            raise DimensionMismatchError(
                f"{responses.size} responses for {design.shape[0]} design rows"
            )
        prior_mean = np.broadcast_to(
            np.asarray(self.prior_mean, dtype=float), (design.shape[1],)
        ).copy()
        _check_positive(prior_var=self.prior_var, noise_var=self.noise_var)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "prior_mean", prior_mean)

    @property
    def n_data(self):
        return self.design.shape[0]

    @property
    def dim(self):
        return self.design.shape[1]

    @cached_property
    def _sufficient_stats(self):
        x, y = self.design, self.responses
        return x.T @ x, x.T @ y, float(y @ y)

    def _residuals(self, thetas, indices):
        return self.responses[indices][np.newaxis, :] - thetas @ self.design[indices].T

    def _potential_block(self, thetas, indices):
        resid = self._residuals(thetas, indices)
        return -0.5 * (_LOG_2PI + math.log(self.noise_var)) - 0.5 * resid ** 2 / self.noise_var

    def _weighted_grad_block(self, thetas, indices, weights):
        resid = self._residuals(thetas, indices)
        return (resid * weights) @ self.design[indices] / self.noise_var

    def total_potential(self, thetas):
        rows = self._rows(thetas)
        xtx, xty, yty = self._sufficient_stats
        quad = yty - 2.0 * rows @ xty + np.einsum("si,ij,sj->s", rows, xtx, rows)
        const = -0.5 * self.n_data * (_LOG_2PI + math.log(self.noise_var))
        return const - 0.5 * quad / self.noise_var

    def _prior_block(self, thetas):
        return _gaussian_prior_block(thetas, self.prior_mean, self.prior_var)

    def _prior_grad_block(self, thetas):
        return (self.prior_mean - thetas) / self.prior_var

    def conjugate_coreset_posterior(self, w):
        support, values = _support_and_values(w, self.n_data)
        x = self.design[support]
        precision = np.eye(self.dim) / self.prior_var + (x.T * values) @ x / self.noise_var
        shift = self.prior_mean / self.prior_var + (x.T @ (values * self.responses[support])) / self.noise_var
        try:
            factor = linalg.cho_factor(precision, lower=True)
        except linalg.LinAlgError as exc:
            raise LinearAlgebraError(f"posterior precision is not positive definite: {exc}") from exc
        covariance = linalg.cho_solve(factor, np.eye(self.dim))
        return GaussianDistribution(
            linalg.cho_solve(factor, shift), 0.5 * (covariance + covariance.T)
        )


@dataclass(frozen=True, eq=False)
class LogisticRegression(BayesianModel):
    """Bernoulli(sigmoid(x_n^T theta)) labels in {-1, +1}, independent Cauchy(0, prior_scale) prior."""

    features: np.ndarray
    labels: np.ndarray
    prior_scale: float = field(default=settings.LOGISTIC_PRIOR_SCALE)

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels, dtype=float).ravel()
        if features.shape[0] < 1 or features.shape[1] < 1:
            raise InvalidModelError("features must have N >= 1 rows and D >= 1 columns")
        if labels.size != features.shape[0]:
            raise DimensionMismatchError(
                f"{labels.size} labels for {features.shape[0]} feature rows"
            )
        if not np.all(np.abs(labels) == 1.0):
            raise InvalidModelError("logistic labels must be exactly -1 or +1")
        _check_positive(prior_scale=self.prior_scale)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_data(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def _margins(self, thetas, indices):
        return (thetas @ self.features[indices].T) * self.labels[indices][np.newaxis, :]

    def _potential_block(self, thetas, indices):
        return -np.logaddexp(0.0, -self._margins(thetas, indices))

    def _weighted_grad_block(self, thetas, indices, weights):
        coeff = expit(-self._margins(thetas, indices)) * (weights * self.labels[indices])
        return coeff @ self.features[indices]

    def _prior_block(self, thetas):
        s = self.prior_scale
        return -np.sum(np.log(math.pi * s * (1.0 + (thetas / s) ** 2)), axis=1)

    def _prior_grad_block(self, thetas):
        return -2.0 * thetas / (self.prior_scale ** 2 + thetas ** 2)


def rbf_featurize(points, basis):
    """Entry (n, k) is exp(-||x_n - mu_k||^2 / (2 sigma_k^2))."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != 2:
        raise DimensionMismatchError(f"RBF points must be N x 2, got {points.shape}")
    sq = cdist(points, basis.centers, "sqeuclidean")
    return np.exp(-sq / (2.0 * basis.scales[np.newaxis, :] ** 2))


def empirical_prior_from_responses(responses):
    """Return (prior_mean, prior_var, noise_var) = (mean, second moment, unbiased variance) of y."""
    y = np.asarray(responses, dtype=float).ravel()
    if y.size < 2:
        raise InsufficientDataError(f"need at least 2 responses, got {y.size}")
    prior_mean = float(np.mean(y))
    prior_var = float(np.mean(y ** 2))
    noise_var = float(np.var(y, ddof=1))
    if not noise_var > 0:
        raise InvalidModelError("responses have zero variance; noise variance must be positive")
    logger.debug(
        "Empirical prior: mean=%s second_moment=%s variance=%s", prior_mean, prior_var, noise_var
    )
    return prior_mean, prior_var, noise_var
