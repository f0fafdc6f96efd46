"""Draws from coreset posteriors and Gaussian approximations of them.

Conjugate models are sampled exactly; everything else runs Hamiltonian Monte
Carlo with dual-averaging step-size adaptation on the weighted target, which
only evaluates potentials on the support of the weights.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from coreqn import settings

from .errors import (
    InvalidArgumentError,
    LinearAlgebraError,
    OptimizationError,
    SamplerError,
)
from .helpers import central_difference_jacobian, symmetrize
from .models import GaussianDistribution

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HmcConfig:
    warmup_steps: int = settings.HMC_WARMUP_STEPS
    leapfrog_steps: int = settings.HMC_LEAPFROG_STEPS
    target_accept: float = settings.HMC_TARGET_ACCEPT
    initial_step_size: float = settings.HMC_INITIAL_STEP_SIZE

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise InvalidArgumentError("warmup_steps must be >= 1")
        if self.leapfrog_steps < 1:
            raise InvalidArgumentError("leapfrog_steps must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise InvalidArgumentError("target_accept must lie in (0, 1)")
        if not self.initial_step_size > 0:
            raise InvalidArgumentError("initial_step_size must be positive")


@dataclass(frozen=True)
class SampleBatch:
    draws: np.ndarray
    acceptance_rate: float = 1.0
    seed_used: int = 0

    def __post_init__(self):
        draws = np.array(self.draws, dtype=float)
        if draws.ndim != 2 or draws.shape[0] < 2:
            raise InvalidArgumentError(f"a sample batch needs S >= 2 rows, got shape {draws.shape}")
        if not np.all(np.isfinite(draws)):
            raise SamplerError("sample batch contains non-finite draws")
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)

    @property
    def size(self):
        return self.draws.shape[0]


class DualAveragingStepSize:
    """Nesterov dual averaging of log step size toward a target acceptance statistic."""

    def __init__(self, initial_step_size, target_accept, gamma=0.05, t0=10.0, kappa=0.75):
        self.target_accept = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.mu = math.log(initial_step_size)
        self.log_step = math.log(initial_step_size)
        self.log_step_bar = 0.0
        self.h_bar = 0.0
        self.count = 0

    @property
    def step_size(self):
        return math.exp(self.log_step)

    @property
    def final_step_size(self):
        """Averaged step size used once warmup is over."""
        if self.count == 0:
            return self.step_size
        return math.exp(self.log_step_bar)

    def update(self, accept_stat):
        self.count += 1
        eta = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target_accept - accept_stat)
        self.log_step = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        weight = self.count ** -self.kappa
        self.log_step_bar = weight * self.log_step + (1.0 - weight) * self.log_step_bar
        return self.step_size


def adapt_step_size(accept_stats, initial_step_size=settings.HMC_INITIAL_STEP_SIZE,
                    target_accept=settings.HMC_TARGET_ACCEPT):
    """Replay a warmup history of acceptance statistics and return the adapted step size."""
    adapter = DualAveragingStepSize(initial_step_size, target_accept)
    for stat in accept_stats:
        adapter.update(float(stat))
    return adapter.step_size


def leapfrog(log_density_and_grad, theta, momentum, step_size, n_steps, grad=None):
    """Integrate Hamiltonian dynamics with unit mass; returns (theta, momentum, logp, grad)."""
    theta = np.array(theta, dtype=float)
    momentum = np.array(momentum, dtype=float)
    if grad is None:
        _, grad = log_density_and_grad(theta)
    momentum = momentum + 0.5 * step_size * grad
    logp = None
    for i in range(n_steps):
        theta = theta + step_size * momentum
        logp, grad = log_density_and_grad(theta)
        if not (np.isfinite(logp) and np.all(np.isfinite(grad))):
            return theta, momentum, -np.inf, grad
        if i < n_steps - 1:
            momentum = momentum + step_size * grad
    momentum = momentum + 0.5 * step_size * grad
    return theta, momentum, logp, grad


def hamiltonian(logp, momentum):
    return -logp + 0.5 * float(momentum @ momentum)


def hmc_sample(log_density_and_grad, initial, n_draws, rng, config=None):
    """Run adaptive HMC; returns (post-warmup draws, mean acceptance probability)."""
    config = config or HmcConfig()
    theta = np.array(initial, dtype=float)
    logp, grad = log_density_and_grad(theta)
    if not np.isfinite(logp):
        raise SamplerError("initial point has non-finite log density", {"theta": theta.tolist()})

    adapter = DualAveragingStepSize(config.initial_step_size, config.target_accept)
    step_size = config.initial_step_size
    draws = np.empty((n_draws, theta.size))
    accept_total = 0.0
    halvings_total = 0
    jitter = settings.HMC_STEP_JITTER

    for it in range(config.warmup_steps + n_draws):
        warmup = it < config.warmup_steps
        momentum = rng.standard_normal(theta.size)
        current_h = hamiltonian(logp, momentum)
        eps = step_size * rng.uniform(1.0 - jitter, 1.0 + jitter)

        for halving in range(settings.HMC_MAX_HALVINGS + 1):
            new_theta, new_momentum, new_logp, new_grad = leapfrog(
                log_density_and_grad, theta, momentum, eps, config.leapfrog_steps, grad
            )
            proposed_h = hamiltonian(new_logp, new_momentum) if np.isfinite(new_logp) else np.inf
            if np.isfinite(proposed_h):
                break
            if halving == settings.HMC_MAX_HALVINGS:
                raise SamplerError(
                    "HMC trajectory diverged after repeated step-size halving",
                    {
                        "iteration": it,
                        "step_size": eps,
                        "theta": theta.tolist(),
                        "energy": current_h,
                    },
                )
            eps *= 0.5
            halvings_total += 1

        log_ratio = current_h - proposed_h
        accept_prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
        if rng.uniform() < accept_prob:
            theta, logp, grad = new_theta, new_logp, new_grad

        if warmup:
            step_size = adapter.update(accept_prob)
            if it == config.warmup_steps - 1:
                step_size = adapter.final_step_size
        else:
            draws[it - config.warmup_steps] = theta
            accept_total += accept_prob

    if halvings_total:
        logger.warning("HMC halved its step size %s times to recover from divergences", halvings_total)
    acceptance = accept_total / n_draws if n_draws else 0.0
    logger.debug("HMC finished: step_size=%s acceptance=%s", step_size, acceptance)
    return draws, acceptance


def sample_coreset_posterior(model, w, n_samples, seed, config=None, initial=None):
    """Draw ``n_samples`` from pi_w; deterministic given ``seed``."""
    if n_samples < 2:
        raise InvalidArgumentError(f"need at least 2 samples, got {n_samples}")
    rng = np.random.default_rng(seed)

    if model.conjugate:
        posterior = model.conjugate_coreset_posterior(w)
        return SampleBatch(posterior.sample(n_samples, rng), 1.0, seed)

    if initial is None:
        try:
            initial = laplace_approximation(model, w).mean
        except (OptimizationError, LinearAlgebraError) as exc:
            logger.warning("Laplace initialization failed (%s); starting HMC at zero", exc)
            initial = np.zeros(model.dim)

    def log_density_and_grad(theta):
        return model.log_target_and_grad(theta, w)

    draws, acceptance = hmc_sample(log_density_and_grad, initial, n_samples, rng, config)
    return SampleBatch(draws, acceptance, seed)


def _damped_cholesky(matrix):
    """Cholesky factor of ``matrix + lam I`` for the smallest lam in a doubling ladder that works."""
    scale = 1.0 + float(np.max(np.abs(np.diag(matrix))))
    lam = 0.0
    for _ in range(40):
        try:
            return linalg.cho_factor(matrix + lam * np.eye(matrix.shape[0]), lower=True), lam
        except linalg.LinAlgError:
            lam = 1e-8 * scale if lam == 0.0 else 2.0 * lam
    raise OptimizationError("could not damp the Newton system into positive definiteness")


def _negative_hessian(model, theta, w):
    jac = central_difference_jacobian(lambda t: model.score(t, w), theta, step=1e-5)
    return -symmetrize(jac)


def laplace_approximation(model, w=None, tol=settings.LAPLACE_GRAD_TOL,
                          max_iter=settings.LAPLACE_MAX_ITER):
    """Gaussian at the mode of pi_w with the inverse negative Hessian as covariance.

    Damped Newton ascent from theta = 0; the Hessian is a symmetrized central
    finite-difference Jacobian of the exact score.
    """
    theta = np.zeros(model.dim)
    logp = model.log_target(theta, w)
    for iteration in range(max_iter):
        grad = model.score(theta, w)
        if np.linalg.norm(grad) <= tol:
            break
        factor, damping = _damped_cholesky(_negative_hessian(model, theta, w))
        step = linalg.cho_solve(factor, grad)

        t = 1.0
        while t > 1e-12:
            candidate = theta + t * step
            candidate_logp = model.log_target(candidate, w)
            if np.isfinite(candidate_logp) and candidate_logp >= logp - 1e-12 * (1.0 + abs(logp)):
                break
            t *= 0.5
        else:
            raise OptimizationError(
                f"Laplace line search failed at iteration {iteration} (damping {damping:g})"
            )

        moved = np.linalg.norm(candidate - theta)
        theta, logp = candidate, candidate_logp
        if t == 1.0 and moved <= 1e-12 * (1.0 + np.linalg.norm(theta)):
            break
    else:
        raise OptimizationError(
            f"Laplace approximation did not converge in {max_iter} iterations "
            f"(gradient norm {np.linalg.norm(model.score(theta, w)):.3e})"
        )

    neg_hess = _negative_hessian(model, theta, w)
    try:
        factor = linalg.cho_factor(neg_hess, lower=True)
    except linalg.LinAlgError as exc:
        raise LinearAlgebraError(f"negative Hessian at the mode is not positive definite: {exc}") from exc
    covariance = linalg.cho_solve(factor, np.eye(model.dim))
    return GaussianDistribution(theta, symmetrize(covariance))
