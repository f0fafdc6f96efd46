"""Posterior approximation quality metrics.

KL divergences are computed between Gaussians (closed-form posteriors or
Gaussian fits of samples). MMD and KSD use the inverse multi-quadratic
kernel and biased V-statistics, clamped at zero before the square root.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from coreqn import settings

from .errors import InsufficientSamplesError, LinearAlgebraError, NumericError
from .models import GaussianDistribution

logger = logging.getLogger(__name__)

_BLOCK = 1024


@dataclass(frozen=True)
class MomentErrors:
    rel_mean_err: float
    rel_cov_err: float
    rel_logvar_err: float
    mean_is_absolute: bool = False


@dataclass(frozen=True)
class MetricsRow:
    reverse_kl: float
    forward_kl: float
    rel_mean_err: float
    rel_cov_err: float
    rel_logvar_err: float = float("nan")
    mmd: float = float("nan")
    ksd: float = float("nan")
    n_samples: int = 0
    n_reference: int = 0

    def __post_init__(self):
        for name in ("reverse_kl", "forward_kl", "rel_mean_err", "rel_cov_err", "mmd", "ksd"):
            value = getattr(self, name)
            if np.isnan(value) and name in ("mmd", "ksd"):
                continue
            if not np.isfinite(value) or value < -1e-12:
                raise NumericError(f"metric {name} is invalid: {value}")
            object.__setattr__(self, name, max(float(value), 0.0))


def fit_gaussian(samples, jitter=settings.COVARIANCE_JITTER):
    """Sample mean and unbiased covariance with ``jitter * trace / P`` added to the diagonal."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n, p = samples.shape
    if n < p + 2:
        raise InsufficientSamplesError(f"need at least P + 2 = {p + 2} samples, got {n}")
    mean = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples, rowvar=False, ddof=1))
    cov = 0.5 * (cov + cov.T)
    if jitter:
        trace = float(np.trace(cov))
        cov = cov + jitter * (trace / p if trace > 0 else 1.0) * np.eye(p)
    return GaussianDistribution(mean, cov)


def _cholesky(matrix, label):
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError as exc:
        raise LinearAlgebraError(f"{label} covariance is not positive definite: {exc}") from exc


def gaussian_kl(p, q):
    """KL(p || q) between Gaussians via Cholesky factors, clamped at zero."""
    lp = _cholesky(p.covariance, "first")
    lq = _cholesky(q.covariance, "second")
    solved = linalg.solve_triangular(lq, lp, lower=True)
    diff = linalg.solve_triangular(lq, q.mean - p.mean, lower=True)
    logdet_q = 2.0 * np.sum(np.log(np.diag(lq)))
    logdet_p = 2.0 * np.sum(np.log(np.diag(lp)))
    kl = 0.5 * (np.sum(solved ** 2) + diff @ diff - p.dim + logdet_q - logdet_p)
    return max(float(kl), 0.0)


def relative_moment_errors(approx, truth):
    """Relative mean error, Frobenius covariance error and diagonal log-variance error."""
    truth_norm = np.linalg.norm(truth.mean)
    mean_err = np.linalg.norm(approx.mean - truth.mean)
    absolute = truth_norm == 0.0
    rel_mean = float(mean_err if absolute else mean_err / truth_norm)
    rel_cov = float(
        np.linalg.norm(approx.covariance - truth.covariance) / np.linalg.norm(truth.covariance)
    )
    log_truth = np.log(np.diag(truth.covariance))
    log_approx = np.log(np.diag(approx.covariance))
    denom = np.linalg.norm(log_truth)
    logvar_diff = np.linalg.norm(log_approx - log_truth)
    rel_logvar = float(logvar_diff / denom) if denom > 0 else float(logvar_diff)
    return MomentErrors(rel_mean, rel_cov, rel_logvar, absolute)


def _imq_block_mean(x, y, c, beta):
    """Mean of (c^2 + ||x_i - y_j||^2)^beta over all pairs, accumulated in row blocks."""
    total = 0.0
    for start in range(0, x.shape[0], _BLOCK):
        sq = cdist(x[start:start + _BLOCK], y, "sqeuclidean")
        total += np.sum((c * c + sq) ** beta)
    return total / (x.shape[0] * y.shape[0])


def mmd_imq(x, y, c=settings.IMQ_SCALE):
    """Biased MMD between sample sets with kernel (c^2 + ||x - y||^2)^(-1/2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    kxx = _imq_block_mean(x, x, c, -0.5)
    kyy = _imq_block_mean(y, y, c, -0.5)
    kxy = _imq_block_mean(x, y, c, -0.5)
    return float(np.sqrt(max(kxx + kyy - 2.0 * kxy, 0.0)))


def ksd_imq(samples, score_fn, c=settings.IMQ_SCALE, beta=settings.KSD_BETA):
    """Kernel Stein discrepancy (V-statistic) with the IMQ kernel (c^2 + ||x - y||^2)^beta.

    With r = x - y and u = c^2 + ||r||^2 the Stein kernel is
        k s_x.s_y - 2 beta u^(beta-1) (s_x - s_y).r
        - 4 beta (beta - 1) u^(beta-2) ||r||^2 - 2 beta P u^(beta-1).
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    scores = np.atleast_2d(np.asarray(score_fn(x), dtype=float))
    if scores.shape != x.shape:
        raise NumericError(f"score has shape {scores.shape}, expected {x.shape}")
    if not np.all(np.isfinite(scores)):
        raise NumericError("score function returned non-finite values")

    n, p = x.shape
    self_dot = np.sum(scores * x, axis=1)
    total = 0.0
    for start in range(0, n, _BLOCK):
        xb = x[start:start + _BLOCK]
        sb = scores[start:start + _BLOCK]
        sq = cdist(xb, x, "sqeuclidean")
        u = c * c + sq
        # (s_i - s_j).(x_i - x_j) = s_i.x_i - s_i.x_j - s_j.x_i + s_j.x_j
        score_diff_dot = (self_dot[start:start + _BLOCK, None] - sb @ x.T - xb @ scores.T + self_dot[None, :])
        stein = (
            u ** beta * (sb @ scores.T)
            - 2.0 * beta * u ** (beta - 1.0) * score_diff_dot
            - 4.0 * beta * (beta - 1.0) * u ** (beta - 2.0) * sq
            - 2.0 * beta * p * u ** (beta - 1.0)
        )
        total += np.sum(stein)
    return float(np.sqrt(max(total / (n * n), 0.0)))
