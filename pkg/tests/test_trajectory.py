import numpy as np
import pytest
from hypothesis import given, strategies as st

from trajkld.trajectory import (BasisSpec, CovariateMoments, FittedModel, GroupParams,
                                SubjectRecord, TrialData, canonical_sign, design_matrix,
                                eval_basis, mean_trajectory)


def test_basis_values():
    assert np.array_equal(eval_basis(2.0, BasisSpec()), [1.0, 2.0, 4.0])
    assert np.array_equal(eval_basis(0.0, BasisSpec(3)), [1.0, 0.0, 0.0, 0.0])
    assert BasisSpec(4).q == 5


@pytest.mark.parametrize("kw", [{"degree": 0}, {"kind": "spline"}])
def test_basis_rejects(kw):
    with pytest.raises(ValueError):
        BasisSpec(**kw)


def test_design_matrix_rows_are_basis():
    t = np.array([0.0, 1.5, 7.0])
    G = design_matrix(t, BasisSpec())
    for row, ti in zip(G, t):
        assert np.array_equal(row, eval_basis(ti, BasisSpec()))
    with pytest.raises(ValueError):
        design_matrix([], BasisSpec())


def test_subject_validation():
    ok = SubjectRecord("a", 1, [0, 1], [1.0, 2.0], [0.5])
    assert ok.n_obs == 2 and ok.times.dtype == float
    with pytest.raises(ValueError, match="group"):
        SubjectRecord("a", 3, [0, 1], [1.0, 2.0], [0.5])
    with pytest.raises(ValueError, match="increasing"):
        SubjectRecord("a", 1, [1, 0], [1.0, 2.0], [0.5])
    with pytest.raises(ValueError, match="non-finite"):
        SubjectRecord("a", 1, [0, 1], [1.0, np.nan], [0.5])
    with pytest.raises(ValueError, match="equal length"):
        SubjectRecord("a", 1, [0, 1], [1.0], [0.5])


def test_trial_validation():
    s1 = SubjectRecord("a", 1, [0, 1], [1.0, 2.0], [0.5])
    s2 = SubjectRecord("b", 2, [0], [1.0], [0.1])
    data = TrialData((s1, s2), 1, [0, 1])
    assert np.array_equal(data.groups, [1, 2])
    assert data.covariates.shape == (2, 1)
    assert data.subset([1, 0]).subjects[0].id == "b"
    with pytest.raises(ValueError, match="both group"):
        TrialData((s1,), 1, [0, 1])
    with pytest.raises(ValueError, match="design grid"):
        TrialData((s1, s2), 1, [0, 2])
    with pytest.raises(ValueError, match="covariates"):
        TrialData((s1, s2), 2, [0, 1])


def test_group_params_symmetrizes_and_checks():
    d = np.eye(3)
    g = GroupParams([1, 2, 3], [0, 1, 0], d, 1.0)
    assert g.q == 3
    assert GroupParams.from_dict(g.to_dict()).to_dict() == g.to_dict()
    bad = d.copy()
    bad[0, 1] = 0.5
    with pytest.raises(ValueError, match="symmetric"):
        GroupParams([1, 2, 3], [0, 1, 0], bad, 1.0)
    with pytest.raises(ValueError, match="sigma2"):
        GroupParams([1, 2, 3], [0, 1, 0], d, 0.0)
    with pytest.raises(ValueError, match="dimensions"):
        GroupParams([1, 2], [0, 1, 0], d, 1.0)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6))
def test_canonical_sign(v):
    v = np.array(v)
    c = canonical_sign(v)
    assert np.array_equal(np.abs(c), np.abs(v))
    nz = np.flatnonzero(c)
    if nz.size:
        assert c[nz[0]] > 0
    assert np.array_equal(canonical_sign(c), c)


def test_fitted_model_invariants():
    g = GroupParams([1, 2, 3], [0, 1, 0], np.eye(3), 1.0)
    m = CovariateMoments([0.0, 0.0], np.eye(2))
    FittedModel(np.array([0.6, 0.8]), (g, g), m, 0.0, 1.0)
    with pytest.raises(ValueError, match="unit norm"):
        FittedModel(np.array([1.0, 1.0]), (g, g), m, 0.0, 1.0)
    with pytest.raises(ValueError, match="first nonzero"):
        FittedModel(np.array([-0.6, 0.8]), (g, g), m, 0.0, 1.0)


def test_mean_trajectory_hand_value():
    g = GroupParams([20.0, 3.0, -0.5], [0.0, 1.0, 0.0], np.eye(3), 1.0)
    # 20 + (3 + 2) * 2 - 0.5 * 4
    assert mean_trajectory(g, 2.0, 2.0, BasisSpec()) == 28.0
