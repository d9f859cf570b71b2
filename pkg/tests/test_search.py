import numpy as np
import pytest
from hypothesis import given, strategies as st

from trajkld.lmm import InsufficientDataError
from trajkld.search import (PurityObjective, SearchOptions, changescore_direction,
                            estimate_alpha, estimate_covariate_moments, purity_objective,
                            run_search, unit_vector)
from trajkld.simulation import Scenario, training_data


@pytest.fixture(scope="module")
def strong():
    return training_data(Scenario(10.0, 2, "none", n_train_per_group=150, seed=31), 0)


@given(st.lists(st.floats(-100, 100).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=8))
def test_unit_vector(v):
    u = unit_vector(v)
    assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-15)
    assert np.array_equal(unit_vector(u), u)


def test_unit_vector_rejects_zero():
    with pytest.raises(ValueError):
        unit_vector(np.zeros(3))


def test_covariate_moments(small_trial):
    data, _ = small_trial
    m = estimate_covariate_moments(data)
    x = data.covariates
    assert np.allclose(m.mu, x.mean(0)) and np.allclose(m.sigma, np.cov(x.T))


def test_objective_scale_and_sign(small_trial):
    data, truth = small_trial
    obj = PurityObjective(data)
    a = truth.alpha
    assert obj(3.0 * a) == obj(a)
    # flipping alpha flips w and gamma together; purity is unchanged up to fit tolerance
    assert obj(-a) == pytest.approx(obj(a), rel=1e-6)


def test_lean_and_full_paths_agree(small_trial):
    data, _ = small_trial
    obj = PurityObjective(data)
    a = np.array([0.3, -0.8])
    assert obj(a) == obj.fit(a)[3]
    assert purity_objective(a, data) == obj(a)


def test_search_beats_brute_force_scan(strong):
    data, truth = strong
    obj = PurityObjective(data)
    angles = np.linspace(0, np.pi, 721)
    scan = max(obj(np.array([np.cos(t), np.sin(t)])) for t in angles)
    model = estimate_alpha(data)
    assert model.purity >= scan - 1e-6 * abs(scan)
    assert abs(model.alpha @ truth.alpha) > 0.95


def test_deterministic_given_seed(mcar_trial):
    data, _ = mcar_trial
    opts = SearchOptions(n_restarts=2, max_evals=300, seed=4)
    a = run_search(data, search_opts=opts)
    b = run_search(data, search_opts=opts)
    assert np.array_equal(a[0].alpha, b[0].alpha)
    assert [q for _, q in a[1]] == [q for _, q in b[1]]
    assert a[0].purity == max(q for _, q in a[1])


def test_model_contents(small_trial):
    data, _ = small_trial
    model = estimate_alpha(data, search_opts=SearchOptions(n_restarts=1, max_evals=300))
    assert np.linalg.norm(model.alpha) == pytest.approx(1.0, abs=1e-12)
    assert model.alpha[np.flatnonzero(model.alpha)[0]] > 0
    assert model.purity > 0 and np.isfinite(model.loglik)
    d = model.to_dict()
    assert set(d) >= {"alpha", "groups", "loglik", "purity"}


def test_single_covariate():
    data, _ = training_data(Scenario(5.0, 1, seed=8), 0)
    model = estimate_alpha(data)
    assert np.array_equal(model.alpha, [1.0])


def test_warm_start_direction_is_unit(small_trial):
    d = changescore_direction(small_trial[0])
    assert np.linalg.norm(d) == pytest.approx(1.0)


def test_options_validation():
    with pytest.raises(ValueError):
        SearchOptions(n_restarts=0)
    with pytest.raises(ValueError):
        SearchOptions(max_evals=1)


def test_too_few_subjects(small_trial):
    data, _ = small_trial
    tiny = data.subset([0, 1, 2, 150, 151, 152])
    with pytest.raises(InsufficientDataError):
        estimate_alpha(tiny)
