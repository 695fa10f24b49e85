import numpy as np
import pytest

from srlfi.simulators import (SLCP, ConjugateGaussian, GridToy, SupportError, TwoMoons,
                              analytic_posterior_gaussian, generate_dataset, get_model,
                              prior_sample, simulate)

MODELS = ["conjugate_gaussian", "two_moons", "slcp", "grid_toy"]


def test_slcp_prior_in_box():
    theta = prior_sample(SLCP(), 10_000, 0)
    assert theta.shape == (10_000, 5) and np.all(np.abs(theta) <= 3)


def test_conjugate_prior_mean():
    theta = prior_sample(ConjugateGaussian(), 100_000, 1)
    assert abs(theta.mean()) < 4 / np.sqrt(100_000)


@pytest.mark.parametrize("name", MODELS)
def test_prior_reproducible(name):
    model = get_model(name)
    np.testing.assert_array_equal(prior_sample(model, 5, 3), prior_sample(model, 5, 3))


@pytest.mark.parametrize("name,dim", [("slcp", 8), ("two_moons", 2), ("conjugate_gaussian", 1),
                                      ("grid_toy", 40)])
def test_output_dimension(name, dim):
    model = get_model(name)
    y = simulate(model, prior_sample(model, 3, 0), 1)
    assert y.shape == (3, dim)


def test_zero_noise_conjugate():
    model = ConjugateGaussian(noise_sd=0.0)
    theta = prior_sample(model, 10, 0)
    np.testing.assert_array_equal(simulate(model, theta, 1), theta)


def test_support_violation():
    with pytest.raises(SupportError):
        simulate(TwoMoons(), np.array([[1.5, 0.0]]), 0)
    with pytest.raises(SupportError):
        simulate(SLCP(), np.full((1, 5), 3.5), 0)


def test_generate_dataset_size_and_streams():
    model = ConjugateGaussian()
    a = generate_dataset(model, 1000, 0)
    b = generate_dataset(model, 1000, 1)
    assert len(a) == 1000 and a.seed == 0 and a.model_name == "conjugate_gaussian"
    assert not np.intersect1d(a.theta.ravel(), b.theta.ravel()).size
    np.testing.assert_array_equal(a.y, generate_dataset(model, 1000, 0).y)


def test_conjugate_joint_correlation():
    d = generate_dataset(ConjugateGaussian(), 20_000, 0)
    corr = np.corrcoef(d.theta[:, 0], d.y[:, 0])[0, 1]
    assert corr > 0
    assert corr == pytest.approx(1 / np.sqrt(2), abs=0.02)


def test_analytic_posterior_examples():
    mean, sd = analytic_posterior_gaussian(0, 1, 1, 2.0)
    assert mean == pytest.approx(1.0) and sd == pytest.approx(np.sqrt(0.5))
    mean, sd = analytic_posterior_gaussian(0.3, 2.0, 1e8, 5.0)
    assert mean == pytest.approx(0.3) and sd == pytest.approx(2.0)
    mean, _ = analytic_posterior_gaussian(0.3, 1e-8, 1.0, 5.0)
    assert mean == pytest.approx(0.3)
    with pytest.raises(ValueError):
        analytic_posterior_gaussian(0, 0, 1, 1.0)


@pytest.mark.parametrize("name", MODELS)
def test_simulate_finite_fuzz(name):
    model = get_model(name)
    n = 2_000 if name == "grid_toy" else 100_000
    d = generate_dataset(model, n, 7)
    assert np.all(np.isfinite(d.y))


def test_slcp_likelihood_moments():
    model = SLCP()
    theta = np.array([[0.5, -1.0, 1.2, 0.8, 0.6]])
    y = model.simulate(np.repeat(theta, 100_000, 0), np.random.default_rng(0)).reshape(-1, 2)
    s1, s2, rho = 1.2**2, 0.8**2, np.tanh(0.6)
    cov = np.array([[s1**2, rho * s1 * s2], [rho * s1 * s2, s2**2]])
    se = np.sqrt(np.diag(cov) / len(y))
    assert np.all(np.abs(y.mean(0) - theta[0, :2]) < 4 * se)
    np.testing.assert_allclose(np.cov(y.T), cov, rtol=0.02, atol=0.01)


def test_two_moons_annulus_radius():
    model = TwoMoons()
    y = model.simulate(np.zeros((100_000, 2)), np.random.default_rng(0))
    r = np.hypot(y[:, 0] - 0.25, y[:, 1])
    # radius mean: E|N(0.1, 0.01^2)| = 0.1 to many digits
    assert abs(r.mean() - 0.1) < 4 * r.std() / np.sqrt(len(r))


def test_two_moons_reference_sampler_matches_rejection_abc():
    # brute-force check of the inversion sampler against likelihood-free rejection
    model = TwoMoons()
    y0 = np.array([0.1, -0.05])
    ref = model.posterior_sampler(y0, 4000, np.random.default_rng(0))
    assert np.all(np.abs(ref) <= 1)
    rng = np.random.default_rng(1)
    theta = model.prior_sample(2_000_000, rng)
    y = model.simulate(theta, rng)
    abc = theta[np.linalg.norm(y - y0, axis=1) < 0.01]
    assert len(abc) > 300
    for q in (0.1, 0.5, 0.9):
        np.testing.assert_allclose(np.quantile(ref, q, axis=0), np.quantile(abc, q, axis=0), atol=0.05)


def test_grid_toy_cross_covariance():
    model = GridToy()
    d = generate_dataset(model, 50_000, 0)
    emp = (d.y - d.y.mean(0)).T @ (d.theta - d.theta.mean(0)) / len(d)
    expected = model.forward_matrix @ model.prior_cov
    assert np.max(np.abs(emp - expected)) < 0.05
    a = model.forward_matrix
    assert np.all(a[np.abs(np.subtract.outer(range(40), range(40))) > 1] == 0)  # banded


def test_grid_toy_posterior_matches_residuals():
    model = GridToy()
    d = generate_dataset(model, 20_000, 0)
    r = d.theta - model.posterior_mean(d.y)
    np.testing.assert_allclose(r.std(0), np.sqrt(np.diag(model.posterior_cov)), rtol=0.05)


def test_slcp_reference_sampler_concentrates():
    model = SLCP()
    theta0 = np.array([[0.7, -0.4, 1.0, -1.2, 0.5]])
    y0 = model.simulate(theta0, np.random.default_rng(3))[0]
    draws = model.posterior_sampler(y0, 500, np.random.default_rng(4), n_proposals=400_000)
    # the location posterior centres on the mean of the four observed points
    assert np.all(np.abs(np.median(draws[:, :2], 0) - y0.reshape(4, 2).mean(0)) < 0.3)
    # the likelihood depends on theta3, theta4 only through their squares
    assert 0.3 < np.mean(draws[:, 3] > 0) < 0.7


def test_unknown_model():
    with pytest.raises(ValueError, match="unknown model"):
        get_model("lotka_volterra")
