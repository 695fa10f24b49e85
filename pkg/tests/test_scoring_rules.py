import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srlfi import autodiff as ad
from srlfi.autodiff import Tensor, gradient_check
from srlfi.scoring_rules import (KernelScoreParams, LayoutError, PatchLayout, ScoringRule,
                                 energy_score_estimate, exact_energy_score_discrete,
                                 exact_kernel_score_discrete, gaussian_kernel_eval,
                                 kernel_score_estimate, median_bandwidth, patch_layout_indices,
                                 patched_score_estimate)


def col(*values):
    return np.asarray(values, dtype=np.float64)[:, None]


# --- energy score -------------------------------------------------------------


def test_energy_coincident_samples_zero():
    assert energy_score_estimate(col(1.5, 1.5), [1.5]).item() == 0.0


def test_energy_two_point_example():
    assert energy_score_estimate(col(0.0, 2.0), [1.0]).item() == pytest.approx(0.0)


def test_energy_three_point_example():
    assert energy_score_estimate(col(1.0, 3.0, 5.0), [0.0]).item() == pytest.approx(10 / 3)


def test_energy_requires_two_draws():
    with pytest.raises(ValueError, match="m >= 2"):
        energy_score_estimate(col(1.0), [0.0])


def test_energy_beta_range():
    with pytest.raises(ValueError):
        energy_score_estimate(col(0.0, 1.0), [0.0], beta=2.0)


def test_energy_batched_matches_loop(rng):
    x, y = rng.normal(size=(4, 6, 3)), rng.normal(size=(4, 3))
    batched = energy_score_estimate(x, y, beta=1.3).data
    loop = [energy_score_estimate(x[i], y[i], beta=1.3).item() for i in range(4)]
    np.testing.assert_allclose(batched, loop, rtol=1e-12)


# --- kernel score -------------------------------------------------------------


@pytest.mark.parametrize("gamma", [0.1, 1.0, 7.0])
def test_kernel_coincident_is_minus_one(gamma):
    assert kernel_score_estimate(col(0.0, 0.0), [0.0], gamma).item() == pytest.approx(-1.0)


def test_kernel_two_point_example():
    value = kernel_score_estimate(col(0.0, 2.0), [1.0], KernelScoreParams(1.0)).item()
    assert value == pytest.approx(np.exp(-2) - 2 * np.exp(-0.5))
    assert value == pytest.approx(-1.0777, abs=1e-4)


@given(shift=st.lists(st.floats(-50, 50), min_size=2, max_size=2))
@settings(max_examples=30, deadline=None)
def test_kernel_translation_invariance(shift):
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(5, 2)), rng.normal(size=2)
    s = np.asarray(shift)
    a = kernel_score_estimate(x, y, 0.8).item()
    b = kernel_score_estimate(x + s, y + s, 0.8).item()
    assert a == pytest.approx(b, abs=1e-9)


def test_gaussian_kernel_values():
    assert gaussian_kernel_eval([1.0, 2.0], [1.0, 2.0], 0.3) == 1.0
    # |a - b|^2 = 2 gamma^2
    assert gaussian_kernel_eval([0.0], [np.sqrt(2) * 1.5], 1.5) == pytest.approx(np.exp(-1))
    assert gaussian_kernel_eval([0.0], [3.0], 1e6) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gaussian_kernel_eval([0.0], [1.0], 0.0)


# --- patched score ------------------------------------------------------------


@pytest.mark.parametrize("grid,size,step,count", [
    (100, 10, 5, 19), (100, 20, 10, 9), ((28, 28), 8, 5, 25)])
def test_patch_counts(grid, size, step, count):
    layout = PatchLayout(grid, size, step)
    assert layout.n_patches == count
    assert len(patch_layout_indices(layout)) == count


def _enumerate_windows(grid, size, step):
    """Independent brute force: every window whose start is a multiple of step."""
    axes = [[s for s in range(extent) if s % step == 0 and s + size <= extent] for extent in grid]
    return list(itertools.product(*axes))


@given(extent=st.integers(1, 40), size=st.integers(1, 40), step=st.integers(1, 12),
       two_d=st.booleans())
@settings(max_examples=200, deadline=None)
def test_patch_count_matches_enumeration(extent, size, step, two_d):
    grid = (extent, extent) if two_d else (extent,)
    if size > extent or (extent - size) % step:
        with pytest.raises(LayoutError):
            PatchLayout(grid, size, step)
        return
    layout = PatchLayout(grid, size, step)
    windows = _enumerate_windows(grid, size, step)
    patches = patch_layout_indices(layout)
    assert layout.n_patches == len(windows) == len(patches)
    for start, idx in zip(windows, patches):
        if two_d:
            r, c = start
            expected = [(r + i) * extent + c + j for i in range(size) for j in range(size)]
        else:
            expected = list(range(start[0], start[0] + size))
        assert list(idx) == expected


def test_patched_w2_zero_equals_base(rng):
    x, y = rng.normal(size=(5, 6)), rng.normal(size=6)
    layout = PatchLayout(6, 2, 2, w1=1.0, w2=0.0)
    base = ScoringRule.energy()
    assert patched_score_estimate(x, y, layout, base).item() == pytest.approx(
        energy_score_estimate(x, y).item())


def test_patched_single_full_patch_doubles(rng):
    x, y = rng.normal(size=(5, 6)), rng.normal(size=6)
    layout = PatchLayout(6, 6, 1)
    for base in (ScoringRule.energy(), ScoringRule.kernel(1.0)):
        assert patched_score_estimate(x, y, layout, base).item() == pytest.approx(
            2 * base.estimate(x, y).item())


def test_patched_example_zero():
    x = np.array([[0.0] * 4, [2.0] * 4])
    layout = PatchLayout(4, 2, 2)
    assert patched_score_estimate(x, np.ones(4), layout, ScoringRule.energy()).item() == pytest.approx(0.0)


def test_patched_shape_mismatch(rng):
    with pytest.raises(LayoutError):
        patched_score_estimate(rng.normal(size=(3, 5)), np.zeros(5), PatchLayout(6, 2, 2),
                               ScoringRule.energy())


def test_layout_validation():
    with pytest.raises(LayoutError):
        PatchLayout(10, 11, 1)
    with pytest.raises(LayoutError):
        PatchLayout(10, 4, 4)


def test_rule_variants():
    assert ScoringRule.energy().name == "energy"
    assert ScoringRule.kernel().needs_bandwidth
    rule = ScoringRule.patched(ScoringRule.kernel(), PatchLayout(4, 2, 2))
    assert rule.name == "patched-kernel" and rule.needs_bandwidth
    assert not rule.with_gamma(0.5).needs_bandwidth
    with pytest.raises(ValueError):
        ScoringRule.patched(rule, PatchLayout(4, 2, 2))


# --- bandwidth and exact oracles ------------------------------------------------


def test_median_bandwidth_examples():
    assert median_bandwidth(col(0.0, 1.0, 2.0)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        median_bandwidth(col(1.0, 1.0))


@given(c=st.floats(0.01, 100))
@settings(max_examples=25, deadline=None)
def test_median_bandwidth_homogeneous(c):
    data = np.random.default_rng(5).normal(size=(30, 3))
    assert median_bandwidth(c * data) == pytest.approx(c * median_bandwidth(data), rel=1e-10)


def test_exact_energy_examples():
    assert exact_energy_score_discrete(col(3.0), [1.0], [3.0]) == 0.0
    assert exact_energy_score_discrete(col(0.0, 2.0), [0.5, 0.5], [1.0]) == pytest.approx(1.0)
    assert exact_energy_score_discrete(col(0.0, 2.0), [0.5, 0.5], [0.0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        exact_energy_score_discrete(col(0.0, 2.0), [0.7, 0.7], [0.0])


def test_exact_kernel_matches_double_sum(rng):
    s, p, y = rng.normal(size=(3, 2)), np.array([0.2, 0.5, 0.3]), rng.normal(size=2)
    k = lambda a, b: np.exp(-np.sum((a - b) ** 2) / 2)  # noqa: E731
    brute = sum(p[i] * p[j] * k(s[i], s[j]) for i in range(3) for j in range(3))
    brute -= 2 * sum(p[i] * k(s[i], y) for i in range(3))
    assert exact_kernel_score_discrete(s, p, y, 1.0) == pytest.approx(brute)


def test_energy_propriety_gaussian_shift():
    # expected score of P_mu against data from N(0, 1); minimum at mu = 0
    rng = np.random.default_rng(0)
    obs = rng.standard_normal(20000)
    scores = {}
    for mu in (-2, -1, 0, 1, 2):
        draws = mu + rng.standard_normal((20000, 10, 1))
        vals = energy_score_estimate(draws, obs[:, None]).data
        scores[mu] = (vals.mean(), vals.std() / np.sqrt(len(vals)))
    best = min(scores, key=lambda k: scores[k][0])
    assert best == 0
    for mu in (-1, 1):
        gap = scores[mu][0] - scores[0][0]
        assert gap > 2 * np.hypot(scores[mu][1], scores[0][1])


@pytest.mark.parametrize("estimator", ["energy", "kernel", "patched"])
def test_estimator_gradients(estimator, rng):
    y = rng.normal(size=4)
    if estimator == "energy":
        fn = lambda x: energy_score_estimate(x, y, beta=1.0)  # noqa: E731
    elif estimator == "kernel":
        fn = lambda x: kernel_score_estimate(x, y, 1.3)  # noqa: E731
    else:
        layout = PatchLayout(4, 2, 1)
        fn = lambda x: patched_score_estimate(x, y, layout, ScoringRule.energy(1.5))  # noqa: E731
    res = gradient_check(fn, Tensor(rng.normal(size=(5, 4))), eps=1e-6, rtol=1e-4)
    assert res.passed, res.max_rel_error


def test_energy_gradient_finite_at_coincident_points():
    x = Tensor(np.zeros((3, 2)), requires_grad=True)
    with ad.Tape():
        ad.backward(energy_score_estimate(x, np.zeros(2)))
    assert np.all(np.isfinite(x.grad))
