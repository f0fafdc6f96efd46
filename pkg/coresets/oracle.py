"""Closed-form moments and exact optimal coresets for the Gaussian location model.

Under pi_w = N(m_w, s_w I) every potential is a quadratic in theta, so
G(w) and H(w)(1 - w) have exact expressions. A weight vector with
sum_m w_m = N and sum_m w_m x_m = sum_n x_n reproduces the full-data
sufficient statistics, hence the full posterior.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .coreset import MomentEstimates, WeightVector, init_weights, newton_direction, project
from .errors import DegenerateMomentsError, PreconditionError, UnsupportedModelError
from .metrics import gaussian_kl
from .models import GaussianLocation

logger = logging.getLogger(__name__)


def _require_gaussian(model):
    if not isinstance(model, GaussianLocation):
        raise UnsupportedModelError(
            f"closed-form moments need a GaussianLocation model, got {type(model).__name__}"
        )


def exact_moments_gaussian(model, w):
    """Return (G, Hw): exact Cov_w[g, g] over the support and H(w)(1 - w)."""
    _require_gaussian(model)
    mean, s = model.posterior_params(w)
    sigma4 = model.noise_var ** 2
    quad = s * s * model.dim / (2.0 * sigma4)

    centered = model.data[w.support] - mean
    G = s / sigma4 * centered @ centered.T + quad

    total_weight = w.total
    residual = (model.data_sum - model.n_data * mean) - (
        w.values @ model.data[w.support] - total_weight * mean
    )
    Hw = s / sigma4 * centered @ residual + quad * (model.n_data - total_weight)
    return G, Hw


def exact_moment_estimates(model, w):
    G, Hw = exact_moments_gaussian(model, w)
    return MomentEstimates(G, Hw)


def exact_moment_source(model):
    """Moment source for ``run_qnc`` that ignores the seed and returns exact moments."""
    _require_gaussian(model)

    def source(w, seed=None):
        return exact_moment_estimates(model, w)

    return source


def coreset_kl(model, w):
    """KL(pi_w || pi) in closed form for a conjugate model."""
    full = model.conjugate_coreset_posterior(WeightVector.ones(model.n_data))
    return gaussian_kl(model.conjugate_coreset_posterior(w), full)


def _matching_system(model, support):
    support = np.asarray(support)
    points = model.data[support]
    A = np.vstack([np.ones(support.size), points.T])
    b = np.concatenate([[float(model.n_data)], model.data_sum])
    return A, b


def solve_exact_weights(model, support):
    """Nonnegative weights on ``support`` matching the full-data sufficient statistics.

    Returns (w_star, feasible); feasible iff the NNLS residual is at most 1e-8 N.
    """
    _require_gaussian(model)
    support = np.sort(np.asarray(support, dtype=np.int64))
    A, b = _matching_system(model, support)
    values, residual = nnls(A, b)
    feasible = bool(residual <= 1e-8 * model.n_data)
    logger.debug("Exact weights on %s points: residual=%.3e feasible=%s", support.size, residual, feasible)
    return WeightVector(model.n_data, support, values), feasible


def affine_projection(model, w):
    """Euclidean projection of the support values onto the statistic-matching affine set (may be negative)."""
    _require_gaussian(model)
    A, b = _matching_system(model, w.support)
    correction = np.linalg.lstsq(A, A @ w.values - b, rcond=None)[0]
    return w.values - correction


def project_onto_solution_set(model, w):
    """Nearest point to ``w`` among nonnegative support weights matching the statistics.

    The affine projection is used directly when it is nonnegative; otherwise
    the equality constraints are imposed by a heavily weighted NNLS.
    """
    affine = affine_projection(model, w)
    if np.all(affine >= 0):
        return w.with_values(affine)
    A, b = _matching_system(model, w.support)
    rho = 1e6 / max(1.0, np.linalg.norm(A))
    stacked = np.vstack([rho * A, np.eye(w.size)])
    target = np.concatenate([rho * b, w.values])
    values, _ = nnls(stacked, target, maxiter=50 * w.size)
    return w.with_values(values)


def compute_xi(G, tau):
    """lambda_min+ / (lambda_min+ + tau) over eigenvalues above 1e-10 trace(G) / M."""
    G = np.asarray(G, dtype=float)
    trace = float(np.trace(G))
    if trace <= 0.0 or not np.any(G):
        raise DegenerateMomentsError("G is identically zero; xi is undefined")
    eigvals = np.linalg.eigvalsh(0.5 * (G + G.T))
    positive = eigvals[eigvals > 1e-10 * trace / G.shape[0]]
    lam = float(positive[0])
    return lam / (lam + tau)


@dataclass
class TheoremCheckReport:
    xi: float
    eta: float
    w_star: WeightVector
    feasible: bool
    kl_at_w_star: float
    contraction_ratios: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    iterate_xis: list = field(default_factory=list)

    def holds(self, bound=1.01):
        return self.feasible and all(ratio <= bound for ratio in self.contraction_ratios)

    def to_dict(self):
        return {
            "xi": self.xi,
            "eta": self.eta,
            "feasible": self.feasible,
            "kl_at_w_star": self.kl_at_w_star,
            "contraction_ratios": list(self.contraction_ratios),
            "distances": list(self.distances),
            "max_ratio": max(self.contraction_ratios, default=0.0),
        }


def verify_convergence_theorem(model, support, gamma, tau, K):
    """Run exact-moment Newton iterations and compare against the linear rate.

    r_k = ||w_k - w*_k|| / ((1 - gamma xi)^k ||w_0 - w*_0||), with w*_k the
    projection of w_k onto the optimal set and xi the smallest value seen over
    the iterates. Distances below 1e-9 (1 + ||w_0||) count as converged.
    """
    _require_gaussian(model)
    w_star, feasible = solve_exact_weights(model, support)
    if not feasible:
        raise PreconditionError("support admits no exact coreset; the theorem check needs a feasible support")

    w = init_weights(model.n_data, w_star.support)
    iterates = [w]
    xis = []
    for _ in range(K):
        moments = exact_moment_estimates(model, w)
        xis.append(compute_xi(moments.G_hat, tau))
        w = project(w, w.values + gamma * newton_direction(moments, tau))
        iterates.append(w)

    xi = min(xis) if xis else 1.0
    eta = 1.0 - gamma * xi
    distances = [
        float(np.linalg.norm(it.values - project_onto_solution_set(model, it).values))
        for it in iterates
    ]
    floor = 1e-9 * (1.0 + np.linalg.norm(iterates[0].values))
    ratios = [
        distances[k] / max(eta ** k * distances[0], floor) for k in range(len(distances))
    ]
    report = TheoremCheckReport(
        xi=xi,
        eta=eta,
        w_star=w_star,
        feasible=feasible,
        kl_at_w_star=coreset_kl(model, w_star),
        contraction_ratios=ratios,
        distances=distances,
        iterate_xis=xis,
    )
    logger.info("Convergence check: xi=%.6f max ratio=%.4f", xi, max(ratios))
    return report
