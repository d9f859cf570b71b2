import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trajkld.dataio import (ConfigError, DataFormatError, atomic_write, config_from_mapping,
                            export_trial, load_config, load_trial, read_table, write_json,
                            write_table)
from trajkld.trajectory import SubjectRecord, TrialData


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def files(tmp_path):
    out = write(tmp_path / "y.csv", "subject_id,group,time,outcome\n"
                "a,1,0,1.5\na,1,2,3.0\na,1,1,2.0\nb,2,0,0.5\nb,2,1,0.7\nb,2,2,1.1\n")
    cov = write(tmp_path / "x.csv", "subject_id,x1,x2\na,0.1,0.2\nb,-1,3\n")
    return out, cov


def test_load_well_formed(files):
    data = load_trial(*files)
    assert len(data.subjects) == 2 and data.p == 2
    a = data.subjects[0]
    assert a.id == "a" and np.array_equal(a.times, [0, 1, 2]) and np.array_equal(a.outcomes, [1.5, 2.0, 3.0])
    assert np.array_equal(data.design_times, [0.0, 1.0, 2.0])


def _bad(tmp_path, outcomes, covs="subject_id,x1\na,1\nb,2\n"):
    return write(tmp_path / "y.csv", outcomes), write(tmp_path / "x.csv", covs)


HEAD = "subject_id,group,time,outcome\n"


@pytest.mark.parametrize("body,msg", [
    ("a,3,0,1\nb,2,0,1\n", r"line 2: unknown group code '3'"),
    ("a,1,0,1\na,1,0,2\nb,2,0,1\n", r"line 3: duplicate time 0 for subject 'a'"),
    ("a,1,0,x\nb,2,0,1\n", r"line 2: outcome 'x' is not a number"),
    ("a,1,0,nan\nb,2,0,1\n", r"line 2: outcome must be finite"),
    ("a,1,0\nb,2,0,1\n", r"line 2: expected 4 fields"),
    ("a,1,0,1\na,2,1,1\nb,2,0,1\n", r"line 3: subject 'a' appears in both groups"),
])
def test_outcome_errors(tmp_path, body, msg):
    with pytest.raises(DataFormatError, match=msg):
        load_trial(*_bad(tmp_path, HEAD + body))


def test_header_and_subject_errors(tmp_path):
    with pytest.raises(DataFormatError, match="header"):
        load_trial(*_bad(tmp_path, "id,group,time,outcome\na,1,0,1\n"))
    with pytest.raises(DataFormatError, match="empty"):
        load_trial(*_bad(tmp_path, ""))
    with pytest.raises(DataFormatError, match="subject 'c' has outcomes but no covariates"):
        load_trial(*_bad(tmp_path, HEAD + "a,1,0,1\nb,2,0,1\nc,2,0,1\n"))
    with pytest.raises(DataFormatError, match="subject 'b' has covariates but no outcomes"):
        load_trial(*_bad(tmp_path, HEAD + "a,1,0,1\n"))
    with pytest.raises(DataFormatError, match="line 3: covariate count mismatch"):
        load_trial(*_bad(tmp_path, HEAD + "a,1,0,1\nb,2,0,1\n", "subject_id,x1\na,1\nb,2,5\n"))
    with pytest.raises(DataFormatError, match="header"):
        load_trial(*_bad(tmp_path, HEAD + "a,1,0,1\nb,2,0,1\n", "subject_id,x2\na,1\nb,2\n"))
    with pytest.raises(DataFormatError, match="both group"):
        load_trial(*_bad(tmp_path, HEAD + "a,1,0,1\nb,1,0,1\n"))


def _same(a: TrialData, b: TrialData):
    assert a.p == b.p and np.array_equal(a.design_times, b.design_times)
    assert len(a.subjects) == len(b.subjects)
    for s, t in zip(a.subjects, b.subjects):
        assert s.id == t.id and s.group == t.group
        for f in ("times", "outcomes", "covariates"):
            assert np.array_equal(getattr(s, f), getattr(t, f))


def test_round_trip_simulated(tmp_path, mcar_trial):
    data, _ = mcar_trial
    export_trial(data, tmp_path / "y.csv", tmp_path / "x.csv")
    _same(data, load_trial(tmp_path / "y.csv", tmp_path / "x.csv"))


finite = st.floats(allow_nan=False, allow_infinity=False, width=64, min_value=-1e300, max_value=1e300)


@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=2, max_size=2))
def test_round_trip_exact_values(tmp_path_factory, ys, xs):
    subs = (SubjectRecord("p", 1, [0.0, 1.5], ys[:2], xs[:1]),
            SubjectRecord("q", 2, [0.0, 1.5], ys[2:], xs[1:]))
    data = TrialData(subs, 1, [0.0, 1.5])
    d = tmp_path_factory.mktemp("rt")
    export_trial(data, d / "y.csv", d / "x.csv")
    _same(data, load_trial(d / "y.csv", d / "x.csv"))


def test_atomic_write_replaces_and_cleans(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    atomic_write(target, "one")
    atomic_write(target, "two")
    assert target.read_text() == "two"
    assert os.listdir(target.parent) == ["f.txt"]


def test_writers_carry_metadata(tmp_path):
    meta = {"seed": 3, "config": {"a": 1}}
    write_json(tmp_path / "m.json", {"value": float("nan")}, meta)
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["format_version"] == 1 and doc["metadata"] == meta and doc["value"] is None
    write_table(tmp_path / "t.csv", ("k", "v"), [{"k": "x", "v": 0.1}], meta)
    got_meta, rows = read_table(tmp_path / "t.csv")
    assert got_meta == meta and rows == [{"k": "x", "v": "0.1"}]


def test_config_defaults_and_sections():
    cfg = config_from_mapping({"seed": 5, "search": {"n_restarts": 2}, "lmm": {"optimizer": "em"},
                               "grid": {"n_reps": 3}, "output": {"dir": "out"}})
    assert cfg.seed == 5 and cfg.search.n_restarts == 2 and cfg.lmm.optimizer == "em"
    assert cfg.out_dir == "out"
    scn = cfg.scenario_list()
    assert len(scn) == 18 and all(s.n_reps == 3 for s in scn) and scn[0].seed == 5
    assert cfg.to_dict()["search"]["seed"] == 5
    assert config_from_mapping(None).seed == 2024


def test_config_scenarios():
    cfg = config_from_mapping({"seed": 1, "scenarios": [{"theta_deg": 2, "p": 10, "missingness": "dropout"}]})
    (s,) = cfg.scenario_list()
    assert s.theta_deg == 2.0 and s.p == 10 and s.seed == 1 and s.n_reps == 50


@pytest.mark.parametrize("raw,msg", [
    ({"colour": 1}, "unknown top-level"),
    ({"search": {"n_restart": 2}}, "unknown key"),
    ({"search": {"n_restarts": "two"}}, "expected int"),
    ({"search": {"n_restarts": 0}}, "n_restarts"),
    ({"search": {"seed": 3}}, "unknown key"),
    ({"lmm": {"optimizer": "bfgs"}}, "optimizer"),
    ({"seed": 1.5}, "expected int"),
    ({"grid": {"full": "yes"}}, "expected bool"),
    ({"scenarios": [{"p": 2}]}, "missing theta_deg"),
    ({"scenarios": [{"theta_deg": 1, "p": 2, "missingness": "mar"}]}, "missingness"),
    ({"scenarios": {"theta_deg": 1}}, "expected a list"),
    ([1, 2], "mapping"),
])
def test_config_validation(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        config_from_mapping(raw)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.yaml")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(write(tmp_path / "bad.yaml", "seed: [1,\n"))
    assert load_config(write(tmp_path / "ok.yaml", "seed: 9\n")).seed == 9
