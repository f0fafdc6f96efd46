import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from coresets.coreset import WeightVector
from coresets.errors import InvalidArgumentError, SamplerError
from coresets.models import BayesLinReg, GaussianLocation, LogisticRegression
from coresets.sampler import (
    DualAveragingStepSize,
    HmcConfig,
    SampleBatch,
    adapt_step_size,
    hamiltonian,
    hmc_sample,
    laplace_approximation,
    leapfrog,
    sample_coreset_posterior,
)


def _standard_normal(theta):
    return -0.5 * float(theta @ theta), -theta


def _gaussian_model(n=10, d=2, seed=0):
    data = np.random.default_rng(seed).normal(size=(n, d))
    return GaussianLocation(0.0, 1.0, 1.0, data)


def test_exact_sampling_matches_conjugate_mean():
    model = _gaussian_model()
    batch = sample_coreset_posterior(model, WeightVector.ones(10), 100_000, seed=3)
    posterior = model.conjugate_coreset_posterior(None)
    tolerance = 5.0 * math.sqrt(posterior.covariance[0, 0] / 100_000)
    assert np.all(np.abs(batch.draws.mean(axis=0) - posterior.mean) < tolerance)
    assert batch.acceptance_rate == 1.0
    assert batch.seed_used == 3


def test_sampling_is_deterministic_in_seed():
    model = _gaussian_model()
    w = WeightVector(10, [1, 4, 7], [2.0, 3.0, 5.0])
    first = sample_coreset_posterior(model, w, 50, seed=11)
    second = sample_coreset_posterior(model, w, 50, seed=11)
    other = sample_coreset_posterior(model, w, 50, seed=12)
    assert_array_equal(first.draws, second.draws)
    assert not np.array_equal(first.draws, other.draws)


def test_hmc_is_deterministic_in_seed():
    config = HmcConfig(warmup_steps=50, leapfrog_steps=5)
    first, _ = hmc_sample(_standard_normal, np.zeros(2), 30, np.random.default_rng(1), config)
    second, _ = hmc_sample(_standard_normal, np.zeros(2), 30, np.random.default_rng(1), config)
    assert_array_equal(first, second)


def test_hmc_standard_normal():
    draws, acceptance = hmc_sample(_standard_normal, np.zeros(5), 2000, np.random.default_rng(0))
    assert draws.shape == (2000, 5)
    assert 0.6 <= acceptance <= 0.95
    assert np.all(np.abs(draws.mean(axis=0)) < 0.2)
    assert np.all(np.abs(draws.var(axis=0) - 1.0) < 0.3)


def test_hmc_recovers_weighted_gaussian_posterior():
    model = _gaussian_model(n=50, seed=2)
    w = WeightVector(50, np.arange(0, 50, 5), np.full(10, 2.0))
    truth = model.conjugate_coreset_posterior(w)

    def log_density_and_grad(theta):
        return model.log_target_and_grad(theta, w)

    config = HmcConfig(warmup_steps=300, leapfrog_steps=10)
    draws, _ = hmc_sample(log_density_and_grad, np.zeros(2), 2000, np.random.default_rng(5), config)
    assert_allclose(draws.mean(axis=0), truth.mean, atol=0.06)
    assert_allclose(draws.var(axis=0), np.diag(truth.covariance), rtol=0.3)


def test_dual_averaging_moves_step_size_with_acceptance():
    growing = DualAveragingStepSize(0.1, 0.8)
    steps = [0.1] + [growing.update(1.0) for _ in range(30)]
    assert all(b > a for a, b in zip(steps, steps[1:]))

    shrinking = DualAveragingStepSize(0.1, 0.8)
    steps = [0.1] + [shrinking.update(0.0) for _ in range(30)]
    assert all(b < a for a, b in zip(steps, steps[1:]))


def test_first_rejection_shrinks_step_size():
    assert adapt_step_size([0.0], initial_step_size=0.1) < 0.1
    assert adapt_step_size([1.0], initial_step_size=0.1) > 0.1


def test_dual_averaging_at_target_keeps_initial_step():
    assert adapt_step_size([0.8] * 50, initial_step_size=0.1, target_accept=0.8) == pytest.approx(0.1)
    assert DualAveragingStepSize(0.3, 0.8).final_step_size == pytest.approx(0.3)


def test_leapfrog_energy_error_is_second_order():
    theta0 = np.array([1.0, 0.5, -0.3])
    p0 = np.array([0.2, -0.7, 1.0])
    logp0, _ = _standard_normal(theta0)
    start = hamiltonian(logp0, p0)

    def energy_error(step_size, n_steps):
        theta, momentum, logp, _ = leapfrog(_standard_normal, theta0, p0, step_size, n_steps)
        return abs(hamiltonian(logp, momentum) - start)

    assert energy_error(0.1, 10) / energy_error(0.05, 20) >= 3.5


def test_leapfrog_is_reversible():
    theta0 = np.array([0.4, -1.2])
    p0 = np.array([1.0, 0.3])
    theta, momentum, _, _ = leapfrog(_standard_normal, theta0, p0, 0.1, 15)
    back, back_momentum, _, _ = leapfrog(_standard_normal, theta, -momentum, 0.1, 15)
    assert_allclose(back, theta0, atol=1e-12)
    assert_allclose(-back_momentum, p0, atol=1e-12)


def test_diverging_trajectory_raises_with_diagnostics():
    origin = np.zeros(2)

    def log_density_and_grad(theta):
        if np.array_equal(theta, origin):
            return 0.0, np.zeros(2)
        return math.nan, np.full(2, math.nan)

    with pytest.raises(SamplerError) as excinfo:
        hmc_sample(log_density_and_grad, origin, 10, np.random.default_rng(0),
                   HmcConfig(warmup_steps=5, leapfrog_steps=3))
    assert {"iteration", "step_size", "theta", "energy"} <= set(excinfo.value.diagnostics)


def test_non_finite_initial_point_is_rejected():
    with pytest.raises(SamplerError):
        hmc_sample(lambda t: (-math.inf, np.zeros(1)), np.zeros(1), 5, np.random.default_rng(0))


def test_laplace_is_exact_for_gaussian_location():
    data = np.random.default_rng(7).normal(size=(20, 3))
    model = GaussianLocation(np.array([0.5, 0.0, -0.5]), 2.0, 1.5, data)
    w = WeightVector(20, [0, 3, 9, 15], [4.0, 1.0, 2.5, 6.0])
    truth = model.conjugate_coreset_posterior(w)
    approx = laplace_approximation(model, w)
    assert_allclose(approx.mean, truth.mean, rtol=1e-6, atol=1e-9)
    assert_allclose(approx.covariance, truth.covariance, rtol=1e-6, atol=1e-9)


def test_laplace_is_exact_for_linear_regression():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(40, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + 0.2 * rng.normal(size=40)
    model = BayesLinReg(x, y, np.zeros(3), 4.0, 0.25)
    truth = model.conjugate_coreset_posterior(None)
    approx = laplace_approximation(model)
    assert_allclose(approx.mean, truth.mean, rtol=1e-6, atol=1e-9)
    assert_allclose(approx.covariance, truth.covariance, rtol=1e-6, atol=1e-9)


def _symmetric_logistic(n_pairs=100, d=2, seed=0):
    features = np.random.default_rng(seed).normal(size=(n_pairs, d))
    labels = np.concatenate([np.ones(n_pairs), -np.ones(n_pairs)])
    return LogisticRegression(np.vstack([features, features]), labels)


def test_symmetric_logistic_posterior_is_centered():
    model = _symmetric_logistic()
    assert_allclose(laplace_approximation(model).mean, 0.0, atol=1e-12)

    batch = sample_coreset_posterior(model, None, 1000, seed=4,
                                     config=HmcConfig(warmup_steps=200, leapfrog_steps=10))
    assert batch.draws.shape == (1000, 2)
    assert 0.0 < batch.acceptance_rate <= 1.0
    assert np.all(np.abs(batch.draws.mean(axis=0)) < 0.05)


def test_sample_batch_validation():
    with pytest.raises(InvalidArgumentError):
        SampleBatch(np.zeros((1, 3)))
    with pytest.raises(SamplerError):
        SampleBatch(np.array([[0.0, 1.0], [math.nan, 0.0]]))
    source = np.zeros((3, 2))
    batch = SampleBatch(source)
    source[0, 0] = 5.0
    assert batch.draws[0, 0] == 0.0
    assert batch.size == 3


def test_invalid_sampler_arguments():
    with pytest.raises(InvalidArgumentError):
        HmcConfig(target_accept=1.0)
    with pytest.raises(InvalidArgumentError):
        HmcConfig(leapfrog_steps=0)
    with pytest.raises(InvalidArgumentError):
        sample_coreset_posterior(_gaussian_model(), None, 1, seed=0)
