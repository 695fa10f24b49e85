import csv

import numpy as np
import pytest

from srlfi import autodiff as ad
from srlfi.autodiff import Tape, Tensor
from srlfi.networks import GeneratorNet, LatentSpec, MLPArchitecture, init_network, make_generator
from srlfi.scoring_rules import ScoringRule
from srlfi.sequential import (RatioEstimator, RoundConfig, WeightDegeneracyError,
                              effective_sample_fraction, fit_ratio_classifier, run_sequential,
                              weighted_sr_loss, write_round_csv)
from srlfi.simulators import ConjugateGaussian, TwoMoons, generate_dataset
from srlfi.training import SRTrainConfig, sr_batch_loss, train_sr


def test_ratio_identical_distributions():
    rng = np.random.default_rng(0)
    r = fit_ratio_classifier(rng.normal(size=(3000, 1)), rng.normal(size=(3000, 1)), seed=0)
    probe = rng.normal(size=(500, 1))
    assert 0.8 <= np.median(r.predict(probe)) <= 1.25


def test_ratio_shifted_gaussians_slope():
    rng = np.random.default_rng(1)
    r = fit_ratio_classifier(rng.normal(0, 1, (5000, 1)), rng.normal(1, 1, (5000, 1)), seed=0)
    grid = np.linspace(-1, 2, 31)[:, None]
    log_r = r.predict_log(grid)
    slope, intercept = np.polyfit(grid[:, 0], log_r, 1)
    assert abs(slope + 1) <= 0.15
    assert abs(intercept - 0.5) <= 0.2


def test_ratio_positive_and_sklearn_api():
    rng = np.random.default_rng(2)
    est = RatioEstimator(hidden_layer_sizes=(8,), max_iter=200, random_state=0)
    assert est.get_params()["hidden_layer_sizes"] == (8,)
    est.fit(rng.normal(size=(200, 2)), rng.normal(2, 1, (100, 2)))
    out = est(rng.normal(size=(50, 2)) * 100)
    assert np.all(out > 0) and np.all(np.isfinite(out))
    with pytest.raises(ValueError):
        RatioEstimator().fit(np.empty((0, 2)), rng.normal(size=(10, 2)))


def test_effective_sample_fraction():
    assert effective_sample_fraction(np.ones(10)) == pytest.approx(1.0)
    assert effective_sample_fraction([1.0] + [0.0] * 99) == pytest.approx(0.01)


def _loss_args(g, n=4, m=5):
    rng = np.random.default_rng(0)
    theta, y = rng.normal(size=(n, 1)), rng.normal(size=(n, 1))
    z = rng.normal(size=(n, m, 1))
    return theta, y, z


def test_weighted_loss_linearity(small_generator):
    theta, y, z = _loss_args(small_generator)
    rule = ScoringRule.energy()
    plain = sr_batch_loss(small_generator, theta, y, rule, 5, z=z).item()
    unit = weighted_sr_loss(small_generator, theta, y, rule, 5, lambda t: np.ones(len(t)), z=z).item()
    double = weighted_sr_loss(small_generator, theta, y, rule, 5, lambda t: np.full(len(t), 2.0), z=z).item()
    assert unit == pytest.approx(plain)
    assert double == pytest.approx(2 * plain)
    w = np.array([1.0, 0.0, 3.0, 0.0])
    masked = weighted_sr_loss(small_generator, theta, y, rule, 5, lambda t: w, z=z).item()
    keep = [0, 2]
    kept = weighted_sr_loss(small_generator, theta[keep], y[keep], rule, 5, lambda t: w[keep], z=z[keep]).item()
    assert masked == pytest.approx(kept * 2 / 4)


def test_weights_are_constants_in_gradient(small_generator):
    g = small_generator
    theta, y, z = _loss_args(g)
    w = np.array([0.5, 2.0, 1.0, 3.0])
    with Tape():
        ad.backward(weighted_sr_loss(g, theta, y, ScoringRule.energy(), 5, lambda t: w, z=z), wrt=g.weights)
    total = [p.grad.copy() for p in g.weights]
    parts = [np.zeros_like(t) for t in total]
    for i in range(4):
        with Tape():
            ad.backward(sr_batch_loss(g, theta[i:i + 1], y[i:i + 1], ScoringRule.energy(), 5, z=z[i:i + 1]),
                        wrt=g.weights)
        for acc, p in zip(parts, g.weights):
            acc += w[i] * p.grad / 4
    for a, b in zip(total, parts):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_single_round_equals_amortised_training():
    model = ConjugateGaussian()
    cfg = SRTrainConfig(max_epochs=2, batch_size=64, seed=5)
    g1 = make_generator(1, 1, hidden=(8,), seed=0)
    seq = run_sequential(model, g1, RoundConfig(1, 500, [2.0], cfg))
    g2 = make_generator(1, 1, hidden=(8,), seed=0)
    train_sr(g2, generate_dataset(model, 500, 5), cfg)
    for a, b in zip(seq.generator.copy_weights(), g2.copy_weights()):
        assert a.tobytes() == b.tobytes()


def test_collapsed_proposal_outside_support_aborts():
    model = TwoMoons()
    arch = MLPArchitecture(4, (3,), 2)
    weights = [Tensor(np.zeros(w.shape), requires_grad=True) for w in init_network(arch, 0)]
    weights[-1].data[:] = 5.0  # every draw lands outside the prior box
    g = GeneratorNet(arch, LatentSpec(2), weights)
    cfg = SRTrainConfig(max_epochs=0, batch_size=64)
    with pytest.raises(WeightDegeneracyError):
        run_sequential(model, g, RoundConfig(2, 200, [0.0, 0.0], cfg))


def test_ess_guard_triggers():
    model = ConjugateGaussian()
    g = make_generator(1, 1, hidden=(8,), seed=0)
    cfg = SRTrainConfig(max_epochs=1, batch_size=64)
    with pytest.raises(WeightDegeneracyError, match="effective sample fraction"):
        run_sequential(model, g, RoundConfig(2, 300, [2.0], cfg, min_ess_fraction=0.9999,
                                             ratio_samples=500))


def test_round_csv(tmp_path):
    model = ConjugateGaussian()
    g = make_generator(1, 1, hidden=(8,), seed=0)
    cfg = SRTrainConfig(max_epochs=1, batch_size=64)
    res = run_sequential(model, g, RoundConfig(2, 300, [2.0], cfg, ratio_samples=500),
                         posterior_mean=lambda y: model.posterior(y)[0])
    path = tmp_path / "rounds.csv"
    write_round_csv(res.diagnostics, path)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["round", "ess_fraction", "val_loss", "posterior_mean_error"]
    assert len(rows) == 2 and float(rows[0]["ess_fraction"]) == 1.0
    assert 0 < float(rows[1]["ess_fraction"]) <= 1


def test_oracle_weight_identity_small():
    # E_proposal[w(theta) S] = E_prior[S] with w = prior / proposal
    model = ConjugateGaussian()
    g = make_generator(1, 1, hidden=(8,), seed=1)
    rule, m, n = ScoringRule.energy(), 5, 20_000
    rng = np.random.default_rng(0)
    prior_theta = model.prior_sample(n, rng)
    prop_theta = 0.5 + 1.2 * rng.standard_normal((n, 1))
    from scipy import stats
    w = stats.norm.pdf(prop_theta[:, 0]) / stats.norm.pdf(prop_theta[:, 0], 0.5, 1.2)
    per_pair = []
    for theta, weights in ((prior_theta, None), (prop_theta, w)):
        y = model.simulate(theta, rng)
        s = rule.estimate(g.sample(y, m, rng), Tensor(theta)).data
        per_pair.append(s if weights is None else s * weights)
    diff = per_pair[1].mean() - per_pair[0].mean()
    se = np.hypot(per_pair[0].std() / np.sqrt(n), per_pair[1].std() / np.sqrt(n))
    assert abs(diff) <= 4 * se


@pytest.mark.slow
def test_second_round_improves_at_y0():
    model = ConjugateGaussian()
    wins = 0
    for seed in range(3):
        g = make_generator(1, 1, hidden=(64, 64), seed=seed)
        cfg = SRTrainConfig(max_epochs=15, seed=seed)
        res = run_sequential(model, g, RoundConfig(2, 1000, [2.0], cfg),
                             posterior_mean=lambda y: model.posterior(y)[0])
        errs = [d.posterior_mean_error for d in res.diagnostics]
        wins += errs[1] <= errs[0]
    assert wins >= 2
