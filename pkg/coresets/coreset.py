"""Quasi-Newton coreset construction.

A uniform subsample of M data points starts with weights N/M; each iteration
estimates G = Cov_w[g, g] and H(w)(1 - w) = Cov_w[g, h] from S posterior
draws, takes the regularized step (G + tau I)^{-1} H(w)(1 - w) and clamps the
result at zero. The support never changes after subsampling.
"""
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from coreqn import settings

from .errors import CoresetError, InvalidArgumentError, LinearAlgebraError, NumericError
from .helpers import derive_seed, symmetrize
from .sampler import sample_coreset_posterior

logger = logging.getLogger(__name__)

TAU_MODES = ("fixed", "condition")


@dataclass(frozen=True)
class WeightVector:
    full_dim: int
    support: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        support = np.array(self.support, dtype=np.int64).ravel()
        values = np.array(self.values, dtype=float).ravel()
        if support.size != values.size:
            raise InvalidArgumentError(
                f"{support.size} support indices but {values.size} weight values"
            )
        if support.size and (support[0] < 0 or support[-1] >= self.full_dim):
            raise InvalidArgumentError(f"support indices must lie in [0, {self.full_dim})")
        if np.any(np.diff(support) <= 0):
            raise InvalidArgumentError("support indices must be sorted and distinct")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidArgumentError("weights must be finite and nonnegative")
        support.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "values", values)

    @classmethod
    def ones(cls, n):
        return cls(n, np.arange(n), np.ones(n))

    @property
    def size(self):
        return self.support.size

    @property
    def total(self):
        return float(np.sum(self.values))

    @property
    def active_size(self):
        return int(np.count_nonzero(self.values))

    def dense(self):
        full = np.zeros(self.full_dim)
        full[self.support] = self.values
        return full

    def with_values(self, values):
        return WeightVector(self.full_dim, self.support, values)


@dataclass(frozen=True)
class QncConfig:
    M: int
    S: int = settings.QNC_SAMPLES
    K: int = settings.QNC_MAX_STEPS
    K_tune: int = settings.QNC_TUNE_STEPS
    gamma: float = settings.QNC_GAMMA
    tau: float = settings.QNC_TAU
    stop_patience: int = settings.QNC_STOP_PATIENCE
    stop_factor: float = settings.QNC_STOP_FACTOR
    seed: int = settings.DEFAULT_SEED
    tau_mode: str = "fixed"
    max_condition: float = settings.QNC_MAX_CONDITION

    def __post_init__(self):
        checks = (
            (self.M >= 1, "M must be >= 1"),
            (self.S >= 2, "S must be >= 2"),
            (self.K >= 1, "K must be >= 1"),
            (self.K_tune >= 0, "K_tune must be >= 0"),
            (0.0 <= self.gamma <= 1.0, "gamma must lie in [0, 1]"),
            (self.tau > 0, "tau must be positive"),
            (self.stop_patience >= 1, "stop_patience must be >= 1"),
            (0.0 < self.stop_factor < 1.0, "stop_factor must lie in (0, 1)"),
            (self.tau_mode in TAU_MODES, f"tau_mode must be one of {TAU_MODES}"),
            (self.max_condition > 1.0, "max_condition must exceed 1"),
        )
        for ok, message in checks:
            if not ok:
                raise InvalidArgumentError(message)


@dataclass(frozen=True)
class MomentEstimates:
    """Estimates of G (M x M) and H(w)(1 - w) (length M); grad_norm = ||Hw_hat||."""

    G_hat: np.ndarray
    Hw_hat: np.ndarray
    grad_norm: float = field(init=False)

    def __post_init__(self):
        G = symmetrize(self.G_hat)
        Hw = np.array(self.Hw_hat, dtype=float).ravel()
        if G.shape != (Hw.size, Hw.size):
            raise InvalidArgumentError(f"G_hat shape {G.shape} does not match Hw_hat length {Hw.size}")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(Hw))):
            raise NumericError("moment estimates are not finite")
        object.__setattr__(self, "G_hat", G)
        object.__setattr__(self, "Hw_hat", Hw)
        object.__setattr__(self, "grad_norm", float(np.linalg.norm(Hw)))


@dataclass(frozen=True)
class QncIterate:
    iteration: int
    grad_norm: float
    gamma: float
    step_norm: float
    active_size: int
    tau: float
    wall_time: float


@dataclass
class QncTrace:
    records: list = field(default_factory=list)
    stop_reason: str = "max_steps"

    def __len__(self):
        return len(self.records)

    def append(self, record):
        self.records.append(record)

    @property
    def grad_norms(self):
        return [record.grad_norm for record in self.records]

    def to_dict(self):
        return {
            "stop_reason": self.stop_reason,
            "iterations": [asdict(record) for record in self.records],
        }


def uniform_subsample(n, m, seed):
    """M distinct indices drawn uniformly without replacement, returned sorted."""
    if not 1 <= m <= n:
        raise InvalidArgumentError(f"coreset size M={m} must satisfy 1 <= M <= N={n}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=m, replace=False))


def init_weights(n, support):
    support = np.asarray(support)
    return WeightVector(n, support, np.full(support.size, n / support.size))


def _locate_nonfinite(model, draws, indices):
    """Find the first (datum, sample) pair with a non-finite potential."""
    for start in range(0, len(indices), 4096):
        chunk = indices[start:start + 4096]
        block = model.potentials(draws, chunk)
        bad = np.argwhere(~np.isfinite(block))
        if bad.size:
            s, j = bad[0]
            return int(chunk[j]), int(s)
    return None, None


def estimate_moments(model, w, batch):
    """Monte Carlo estimates of G and H(w)(1 - w) from one batch of draws at w.

    The sum over all N potentials is streamed by the model, so memory beyond
    the S x M block stays O(S).
    """
    draws = batch.draws
    n_samples = draws.shape[0]
    g = model.potentials(draws, w.support)
    if not np.all(np.isfinite(g)):
        datum, sample = _locate_nonfinite(model, draws, w.support)
        raise NumericError(f"non-finite potential for datum {datum} at sample {sample}", datum, sample)
    total = model.total_potential(draws)
    if not np.all(np.isfinite(total)):
        datum, sample = _locate_nonfinite(model, draws, np.arange(model.n_data))
        raise NumericError(f"non-finite potential for datum {datum} at sample {sample}", datum, sample)

    g_centered = g - g.mean(axis=0)
    h = (total - total.mean()) - g_centered @ w.values
    G_hat = g_centered.T @ g_centered / n_samples
    Hw_hat = g_centered.T @ h / n_samples
    return MomentEstimates(G_hat, Hw_hat)


def monte_carlo_moment_source(model, sampler, n_samples):
    """Moment source drawing a fresh batch of ``n_samples`` at each requested w."""

    def source(w, seed):
        return estimate_moments(model, w, sampler(model, w, n_samples, seed))

    return source


def effective_tau(moments, config):
    """Configured tau, raised in "condition" mode until cond(G_hat + tau I) <= max_condition."""
    if config.tau_mode == "fixed":
        return config.tau
    lam_max = float(np.linalg.eigvalsh(moments.G_hat)[-1]) if moments.G_hat.size else 0.0
    return max(config.tau, lam_max / (config.max_condition - 1.0))


def newton_direction(moments, tau):
    """Solve (G_hat + tau I) p = Hw_hat by Cholesky, doubling tau once on failure."""
    identity = np.eye(moments.Hw_hat.size)
    for attempt, reg in enumerate((tau, 2.0 * tau)):
        try:
            factor = linalg.cho_factor(moments.G_hat + reg * identity, lower=True)
        except linalg.LinAlgError:
            if attempt == 0:
                logger.warning("Cholesky of G_hat + tau I failed at tau=%s; retrying with 2 tau", reg)
            continue
        return linalg.cho_solve(factor, moments.Hw_hat)
    raise LinearAlgebraError(f"G_hat + tau I is not positive definite even at tau={2.0 * tau:g}")


def newton_step(w, moments, gamma, tau):
    """Proposed (unprojected) weight values w + gamma (G_hat + tau I)^{-1} Hw_hat on the support."""
    return w.values + gamma * newton_direction(moments, tau)


def project(w, proposed):
    """Clamp proposed support values at zero; off-support entries stay zero."""
    return w.with_values(np.maximum(np.asarray(proposed, dtype=float), 0.0))


@dataclass(frozen=True)
class LineSearchResult:
    gamma: float
    accepted: bool
    trials: int


def line_search_gamma(model, w, direction, base_gamma, sampler, n_samples, seed, reference,
                      moment_source=None, c2=settings.LINE_SEARCH_C2,
                      shrink=settings.LINE_SEARCH_SHRINK,
                      max_halvings=settings.LINE_SEARCH_MAX_HALVINGS):
    """Pick gamma_k with the curvature half of the Wolfe conditions.

    The directional derivative of the KL along ``direction`` at w is
    ``-reference.Hw_hat . direction``; a trial gamma is accepted when the same
    quantity at project(w + gamma p), estimated from a fresh batch, has at most
    ``c2`` times its magnitude. Any failing trial is halved, at most
    ``max_halvings`` times; the last gamma tried is returned if none passes.
    """
    direction = np.asarray(direction, dtype=float)
    if base_gamma == 0.0 or not np.any(direction):
        return LineSearchResult(base_gamma, True, 0)
    if moment_source is None:
        moment_source = monte_carlo_moment_source(model, sampler, n_samples)

    ref_slope = -float(reference.Hw_hat @ direction)
    gamma = base_gamma
    for trial in range(max_halvings + 1):
        candidate = project(w, w.values + gamma * direction)
        moments = moment_source(candidate, derive_seed(seed, "line-search", trial))
        slope = -float(moments.Hw_hat @ direction)
        if abs(slope) <= c2 * abs(ref_slope):
            return LineSearchResult(gamma, True, trial + 1)
        logger.debug(
            "Line search rejects gamma=%s (%s, slope ratio %.3f)",
            gamma, "undershoot" if np.sign(slope) == np.sign(ref_slope) else "overshoot",
            abs(slope) / abs(ref_slope) if ref_slope else np.inf,
        )
        if trial < max_halvings:
            gamma *= shrink
    logger.warning("Line search found no gamma satisfying the curvature condition; using %s", gamma)
    return LineSearchResult(gamma, False, max_halvings + 1)


def run_qnc(model, sampler=None, config=None, support=None, moment_source=None):
    """Build a coreset; returns the final WeightVector and the iteration trace.

    ``sampler(model, w, S, seed)`` returns a SampleBatch (default: exact or HMC
    sampling of pi_w). ``moment_source(w, seed)`` replaces the Monte Carlo
    estimates entirely, e.g. with closed-form moments.
    """
    if config is None:
        raise InvalidArgumentError("run_qnc needs a QncConfig")
    n = model.n_data
    if config.M > n:
        raise InvalidArgumentError(f"coreset size M={config.M} exceeds N={n}")
    sampler = sampler or sample_coreset_posterior
    if moment_source is None:
        moment_source = monte_carlo_moment_source(model, sampler, config.S)
    if support is None:
        support = uniform_subsample(n, config.M, derive_seed(config.seed, "subsample"))

    w = init_weights(n, support)
    trace = QncTrace()
    best = np.inf
    stalled = 0
    logger.info("QNC: N=%s M=%s S=%s K=%s tau=%s", n, w.size, config.S, config.K, config.tau)

    for k in range(config.K):
        started = time.perf_counter()
        try:
            moments = moment_source(w, derive_seed(config.seed, k, "moments"))
            tau_k = effective_tau(moments, config)
            direction = newton_direction(moments, tau_k)
            if k <= config.K_tune:
                gamma_k = line_search_gamma(
                    model, w, direction, config.gamma, sampler, config.S,
                    derive_seed(config.seed, k, "line-search"), moments,
                    moment_source=moment_source,
                ).gamma
            else:
                gamma_k = config.gamma
            new_w = project(w, w.values + gamma_k * direction)
        except CoresetError as exc:
            exc.iteration = k
            logger.error("QNC failed at iteration %s: %s", k, exc)
            raise

        record = QncIterate(
            iteration=k,
            grad_norm=moments.grad_norm,
            gamma=gamma_k,
            step_norm=float(np.linalg.norm(new_w.values - w.values)),
            active_size=new_w.active_size,
            tau=tau_k,
            wall_time=time.perf_counter() - started,
        )
        trace.append(record)
        logger.debug("QNC iteration %s: %s", k, record)
        w = new_w

        if moments.grad_norm == 0.0:
            trace.stop_reason = "stationary"
            break
        if moments.grad_norm < config.stop_factor * best:
            best = moments.grad_norm
            stalled = 0
        else:
            stalled += 1
            if stalled >= config.stop_patience:
                trace.stop_reason = "no_improvement"
                logger.info("QNC stopped early after iteration %s: gradient norm stalled", k)
                break

    return w, trace


def unif_baseline(n, m, seed):
    """Uniform subsample with weights N/M and no optimization."""
    return init_weights(n, uniform_subsample(n, m, seed))
