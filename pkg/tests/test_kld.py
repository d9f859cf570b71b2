import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from trajkld.kld import (InvalidDistributionError, kld_gaussian, mc_purity_oracle,
                         population_purity, population_purity_grad, purity_coeffs,
                         purity_oracle_suite, random_purity_case, subject_purity, sym_kld)
from trajkld.trajectory import CovariateMoments, GroupParams


def dense_kld(m1, s1, m2, s2):
    """Textbook formula with explicit inverse and slogdet."""
    k = len(m1)
    inv2 = np.linalg.inv(s2)
    d = np.asarray(m2) - np.asarray(m1)
    return 0.5 * (np.trace(inv2 @ s1) + d @ inv2 @ d - k
                  + np.linalg.slogdet(s2)[1] - np.linalg.slogdet(s1)[1])


def spd(seed, q, ridge=0.3):
    a = np.random.default_rng(seed).standard_normal((q, q))
    return a @ a.T / q + ridge * np.eye(q)


def test_univariate_hand_values():
    assert kld_gaussian([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(0.5, abs=1e-12)
    # 0.5 * (1/4 + 0 - 1 + log 4)
    assert kld_gaussian([0.0], [[1.0]], [0.0], [[4.0]]) == pytest.approx(
        0.5 * (0.25 - 1 + np.log(4.0)), abs=1e-12)


def test_identical_is_zero():
    s = spd(0, 4)
    m = np.arange(4.0)
    assert kld_gaussian(m, s, m, s) == pytest.approx(0.0, abs=1e-12)


@given(st.integers(1, 5), st.integers(0, 10_000))
def test_matches_dense_formula(q, seed):
    rng = np.random.default_rng(seed)
    s1, s2 = spd(seed, q), spd(seed + 1, q)
    m1, m2 = rng.normal(size=q), rng.normal(size=q)
    assert kld_gaussian(m1, s1, m2, s2) == pytest.approx(dense_kld(m1, s1, m2, s2), rel=1e-9, abs=1e-12)


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_nonnegative_and_affine_invariant(q, seed):
    rng = np.random.default_rng(seed)
    s1, s2 = spd(seed, q), spd(seed + 7, q)
    m1, m2 = rng.normal(size=q), rng.normal(size=q)
    a = rng.normal(size=(q, q)) + 3 * np.eye(q)
    c = rng.normal(size=q)
    k = kld_gaussian(m1, s1, m2, s2)
    assert k >= 0
    k2 = kld_gaussian(a @ m1 + c, a @ s1 @ a.T, a @ m2 + c, a @ s2 @ a.T)
    assert k2 == pytest.approx(k, rel=1e-7, abs=1e-9)


def test_batched_means():
    s1, s2 = spd(1, 3), spd(2, 3)
    m1 = np.random.default_rng(0).normal(size=(5, 3))
    batch = kld_gaussian(m1, s1, np.zeros(3), s2)
    assert batch.shape == (5,)
    for i in range(5):
        assert batch[i] == pytest.approx(kld_gaussian(m1[i], s1, np.zeros(3), s2), rel=1e-12)


def test_monte_carlo_log_density_oracle():
    s1, s2 = spd(3, 3), spd(4, 3)
    m1, m2 = np.array([0.3, -0.2, 1.0]), np.array([0.0, 0.5, 0.4])
    p1, p2 = stats.multivariate_normal(m1, s1), stats.multivariate_normal(m2, s2)
    x = p1.rvs(200_000, random_state=np.random.default_rng(9))
    diff = p1.logpdf(x) - p2.logpdf(x)
    se = diff.std(ddof=1) / np.sqrt(diff.size)
    assert abs(kld_gaussian(m1, s1, m2, s2) - diff.mean()) < 4 * se


def test_sym_kld_symmetric():
    s1, s2 = spd(5, 3), spd(6, 3)
    a = sym_kld(np.ones(3), s1, np.zeros(3), s2)
    assert a == pytest.approx(sym_kld(np.zeros(3), s2, np.ones(3), s1), rel=1e-12)


@pytest.mark.parametrize("bad", [
    np.array([[1.0, 0.0], [0.0, -1.0]]),            # indefinite
    np.array([[1.0, 0.2], [0.0, 1.0]]),             # asymmetric
    np.array([[1.0, 0.0], [0.0, 1e-13]]),           # condition number above 1e12
    np.array([[1.0, np.nan], [np.nan, 1.0]]),
])
def test_invalid_covariances(bad):
    with pytest.raises(InvalidDistributionError):
        kld_gaussian(np.zeros(2), np.eye(2), np.zeros(2), bad)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        kld_gaussian(np.zeros(3), np.eye(2), np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        kld_gaussian(np.zeros(2), np.eye(2), np.zeros(2), np.ones((2, 3)))


@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_purity_quadratic_matches_direct_kld(seed, w):
    g1, g2, _, _ = random_purity_case(np.random.default_rng(seed))
    direct = sym_kld(g1.beta + w * g1.gamma, g1.d, g2.beta + w * g2.gamma, g2.d)
    assert subject_purity(purity_coeffs(g1, g2), w) == pytest.approx(direct, rel=1e-9, abs=1e-9)


def test_purity_of_identical_arms_is_zero_everywhere():
    g = GroupParams([1, 2, 3], [0, 1, 0], spd(0, 3), 1.0)
    c = purity_coeffs(g, g)
    assert abs(c.a1) < 1e-12 and c.a2 == 0 and c.a3 == 0


def test_population_purity_gauss_hermite_oracle():
    rng = np.random.default_rng(77)
    nodes, weights = np.polynomial.hermite_e.hermegauss(12)
    for _ in range(10):
        g1, g2, m, alpha = random_purity_case(rng, p=3)
        mean, sd = m.mu @ alpha, np.sqrt(alpha @ m.sigma @ alpha)
        vals = [sym_kld(g1.beta + w * g1.gamma, g1.d, g2.beta + w * g2.gamma, g2.d)
                for w in mean + sd * nodes]
        quad = np.dot(weights, vals) / weights.sum()
        assert population_purity(purity_coeffs(g1, g2), m, alpha) == pytest.approx(quad, rel=1e-9)


def test_population_purity_gradient_finite_difference():
    g1, g2, m, alpha = random_purity_case(np.random.default_rng(3), p=4)
    c = purity_coeffs(g1, g2)
    h = 1e-6
    fd = np.array([(population_purity(c, m, alpha + h * e) - population_purity(c, m, alpha - h * e)) / (2 * h)
                   for e in np.eye(4)])
    assert np.allclose(population_purity_grad(c, m, alpha), fd, rtol=1e-6, atol=1e-6)


def test_mc_oracle_agrees_and_checks_budget():
    g1, g2, m, alpha = random_purity_case(np.random.default_rng(4), p=2)
    est, se = mc_purity_oracle(g1, g2, m, alpha, 100_000, seed=1)
    assert abs(est - population_purity(purity_coeffs(g1, g2), m, alpha)) < 4 * se
    with pytest.raises(ValueError):
        mc_purity_oracle(g1, g2, m, alpha, 100)


def test_degenerate_covariate_distribution():
    g1, g2, _, _ = random_purity_case(np.random.default_rng(5), p=2)
    m = CovariateMoments([1.0, 2.0], np.zeros((2, 2)))
    alpha = np.array([0.6, 0.8])
    c = purity_coeffs(g1, g2)
    assert population_purity(c, m, alpha) == pytest.approx(subject_purity(c, 2.2), rel=1e-12)


def test_oracle_suite_is_deterministic():
    a = purity_oracle_suite(seed=5, n_cases=5, n_draws=10_000)
    b = purity_oracle_suite(seed=5, n_cases=5, n_draws=10_000)
    assert a == b and a.n_cases == 5
