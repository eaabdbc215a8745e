import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import sqrtm

from motionrealign.evalkit.evaluate import MetricReport, reports_csv, reports_table
from motionrealign.evalkit.metrics import (GaussianStats, chi_mean, diversity, fid, fit_gaussian,
                                           mm_dist, multimodality, r_precision, summarize,
                                           trace_sqrt_product)


def _random_stats(rng, f, n=200):
    x = rng.standard_normal((n, f)) @ rng.standard_normal((f, f)) + rng.standard_normal(f)
    return fit_gaussian(x)


def test_fid_identical_is_zero():
    s = _random_stats(np.random.default_rng(0), 8)
    assert abs(fid(s, s)) < 1e-6


def test_fid_one_dim_closed_form():
    a = GaussianStats(np.array([0.0]), np.array([[1.0]]))
    b = GaussianStats(np.array([1.0]), np.array([[1.0]]))
    assert fid(a, b) == 1.0


def test_fid_diagonal_matches_per_dimension_formula():
    rng = np.random.default_rng(1)
    mu_r, mu_g = rng.standard_normal(6), rng.standard_normal(6)
    var_r, var_g = rng.uniform(0.1, 3, 6), rng.uniform(0.1, 3, 6)
    got = fid(GaussianStats(mu_r, np.diag(var_r)), GaussianStats(mu_g, np.diag(var_g)))
    want = np.sum((mu_r - mu_g) ** 2) + np.sum(var_r + var_g - 2 * np.sqrt(var_r * var_g))
    assert abs(got - want) < 1e-8


def test_fid_agrees_with_scipy_sqrtm():
    rng = np.random.default_rng(2)
    a, b = _random_stats(rng, 5), _random_stats(rng, 5)
    ref = np.sum((a.mean - b.mean) ** 2) + np.trace(a.cov + b.cov - 2 * sqrtm(a.cov @ b.cov).real)
    assert fid(a, b) == pytest.approx(ref, rel=1e-7, abs=1e-9)


def test_fid_symmetric():
    rng = np.random.default_rng(3)
    a, b = _random_stats(rng, 7), _random_stats(rng, 7)
    assert abs(fid(a, b) - fid(b, a)) < 1e-8


def test_fid_rejects_non_finite():
    s = GaussianStats(np.array([np.nan]), np.array([[1.0]]))
    with pytest.raises(ValueError):
        fid(s, s)


def test_fit_gaussian_needs_enough_samples():
    with pytest.raises(ValueError):
        fit_gaussian(np.zeros((4, 4)))


def test_trace_sqrt_handles_singular_covariance():
    cov = np.diag([1.0, 0.0, 4.0])
    assert trace_sqrt_product(cov, cov) == pytest.approx(5.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_fid_nonnegative(f, seed):
    rng = np.random.default_rng(seed)
    assert fid(_random_stats(rng, f, 30), _random_stats(rng, f, 30)) >= 0.0


def test_r_precision_perfect_features():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((40, 8))
    caps = [f"c{i}" for i in range(40)]
    top = r_precision(t, t, caps)
    assert top[0] == 1.0


def test_r_precision_needs_32_distinct_captions():
    x = np.zeros((40, 3))
    with pytest.raises(ValueError):
        r_precision(x, x, [f"c{i % 31}" for i in range(40)])


def test_r_precision_random_features_chance_level():
    # 10k pools of independent features: top-k hits are Bernoulli(k/32)
    rng = np.random.default_rng(5)
    n = 10_000
    mf, tf = rng.standard_normal((n, 4)), rng.standard_normal((n, 4))
    top = r_precision(mf, tf, [str(i) for i in range(n)], seed=1)
    for k in (1, 2, 3):
        p = k / 32
        half = 2.576 * np.sqrt(p * (1 - p) / n)
        assert abs(top[k - 1] - p) < half


def test_r_precision_invariant_under_isometry():
    rng = np.random.default_rng(6)
    mf, tf = rng.standard_normal((64, 5)), rng.standard_normal((64, 5))
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    shift = rng.standard_normal(5)
    caps = [str(i) for i in range(64)]
    a = r_precision(mf, tf, caps, seed=3)
    b = r_precision(mf @ q + shift, tf @ q + shift, caps, seed=3)
    np.testing.assert_array_equal(a, b)


def test_mm_dist_cases():
    v = np.random.default_rng(0).standard_normal((10, 3))
    assert mm_dist(v, v) == 0.0
    assert mm_dist(np.array([[0.0, 0.0]]), np.array([[2.0, 0.0]])) == 2.0
    assert mm_dist(3 * v, 3 * v[::-1]) == pytest.approx(3 * mm_dist(v, v[::-1]))
    with pytest.raises(ValueError):
        mm_dist(v, v[:5])


def test_mm_dist_literal_formula():
    v, t = np.zeros((4, 1)), np.array([[1.0], [1.0], [1.0], [1.0]])
    assert mm_dist(v, t, literal=True) == pytest.approx(np.sqrt(4.0) / 4)


def test_diversity_cases():
    assert diversity(np.ones((10, 3)), 5) == 0.0
    assert diversity(np.array([[0.0, 0.0], [3.0, 4.0]]), 1) == 5.0
    with pytest.raises(ValueError):
        diversity(np.zeros((5, 2)), 3)


def test_diversity_gaussian_matches_chi_mean():
    # difference of two N(0, I_F) draws is N(0, 2 I_F): mean norm = sqrt(2) * chi_F mean
    f = 32
    x = np.random.default_rng(7).standard_normal((10_000, f))
    expect = chi_mean(f, np.sqrt(2.0))
    assert abs(diversity(x, 5000, seed=0) / expect - 1) < 0.03


def test_chi_mean_small_cases():
    assert chi_mean(1) == pytest.approx(np.sqrt(2 / np.pi))
    assert chi_mean(2) == pytest.approx(np.sqrt(np.pi / 2))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-50, 50))
def test_diversity_translation_invariant(seed, shift):
    x = np.random.default_rng(seed).standard_normal((20, 3))
    assert diversity(x + shift, 10, seed=1) == pytest.approx(diversity(x, 10, seed=1), abs=1e-9)


def test_multimodality_cases():
    same = [np.ones((20, 3)) for _ in range(4)]
    assert multimodality(same, 4, 10) == 0.0
    two = [np.array([[0.0, 0.0], [3.0, 0.0]])]
    assert multimodality(two, 1, 1) == 3.0
    with pytest.raises(ValueError):
        multimodality([np.zeros((5, 2))], 1, 3)


def test_multimodality_permutation_and_translation_invariant():
    rng = np.random.default_rng(9)
    sets = [rng.standard_normal((20, 3)) for _ in range(5)]
    base = multimodality(sets, 5, 10, seed=2)
    shifted = multimodality([s + 4.0 for s in sets], 5, 10, seed=2)
    assert shifted == pytest.approx(base)
    # all captions are used when m equals the count, so the caption order is irrelevant
    totals = [np.linalg.norm(s[:10] - s[10:], axis=1).sum() for s in sets]
    assert multimodality([s for s in sets[::-1]], 5, 10, seed=0) > 0
    assert sum(totals) > 0


def test_summarize_ci():
    s = summarize([1.0, 2.0, 3.0, 4.0, 5.0])
    assert s.mean == 3.0
    assert s.ci95 == pytest.approx(1.96 * np.std([1, 2, 3, 4, 5], ddof=1) / np.sqrt(5))
    assert summarize([2.0]).ci95 is None


def test_report_rendering():
    rep = MetricReport("x", [{"fid": 1.0, "top1": 0.1, "top2": 0.2, "top3": 0.3, "mm_dist": 1.0,
                              "diversity": 2.0, "multimodality": 0.5}])
    text = reports_table([rep])
    assert text.splitlines()[0].split()[1:] == ["FID", "R-top1", "R-top2", "R-top3", "MMdist",
                                                "Diversity", "MModality"]
    assert "single run" in text
    assert reports_csv([rep]).splitlines()[1].startswith("x,1,1.0,")
