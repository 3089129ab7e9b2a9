import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from armcausal import dataset as ds
from armcausal.errors import DataError, MalformedFileError, SchemaError
from armcausal.sim import BabbleConfig, run_session


@pytest.fixture(scope="module")
def kin_set():
    return run_session(BabbleConfig(steps=50, seed=2))


@pytest.fixture(scope="module")
def phys_set():
    return run_session(BabbleConfig(mode="physics", episodes=2, iterations=40, seed=2))


def test_schema_dims_and_labels():
    assert ds.KIN_STATE.dim == 10 and ds.KIN_ACTION.dim == 7
    assert ds.PHYS_STATE.dim == 23 and ds.PHYS_ACTION.dim == 8
    labels = ds.PHYS_STATE.labels
    assert list(labels[:9]) == ["o_x", "o_y", "o_z", "o_rx", "o_ry", "o_rz", "o_R", "o_G", "o_B"]
    assert labels[9] == "theta_0" and labels[-1] == "mgt"
    assert ds.PHYS_ACTION.labels[-1] == "a_mgt"


def test_schema_rejects_duplicates():
    with pytest.raises(SchemaError):
        ds.Schema("x", (ds.Segment("joints", 2), ds.Segment("joints", 3)))


def test_slice_state():
    s = np.arange(10.0)
    np.testing.assert_array_equal(ds.slice_state(s, ds.KIN_STATE, "joints"), np.arange(7.0))
    np.testing.assert_array_equal(ds.slice_state(s, ds.KIN_STATE, "effector"), [7.0, 8.0, 9.0])
    with pytest.raises(SchemaError):
        ds.slice_state(s, ds.KIN_STATE, "object")


def test_strip_theta_next():
    out, schema = ds.strip_theta_next(np.arange(10.0), ds.KIN_STATE)
    np.testing.assert_array_equal(out, [7.0, 8.0, 9.0])
    assert schema.dim == 3
    out, schema = ds.strip_theta_next(np.arange(23.0), ds.PHYS_STATE)
    assert out.shape == (16,) and list(schema.names) == ["object", "effector", "magnet"]
    with pytest.raises(SchemaError):
        ds.strip_theta_next(np.arange(3.0), schema)


def test_round_trip_kinematics(tmp_path, kin_set):
    ds.write_transitions(tmp_path / "k.csv", kin_set)
    back = ds.read_transitions(tmp_path / "k.csv")
    assert back.equals(kin_set)
    assert back.manifest["seed"] == 2 and back.manifest["count"] == 50


def test_round_trip_physics(tmp_path, phys_set):
    ds.write_transitions(tmp_path / "p.csv", phys_set)
    back = ds.read_transitions(tmp_path / "p.csv")
    assert back.equals(phys_set)
    man = json.loads(ds.manifest_path(tmp_path / "p.csv").read_text())
    assert man["stripped_next_state_schema"]["tag"] == "phys-v1-no-joints"
    assert man["action_recording"] == "achieved"


def test_round_trip_empty(tmp_path):
    empty = ds.TransitionSet.empty(ds.KIN_STATE, ds.KIN_ACTION)
    ds.write_transitions(tmp_path / "e.csv", empty)
    assert len(ds.read_transitions(tmp_path / "e.csv")) == 0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_subnormal=True), min_size=17, max_size=17))
def test_round_trip_is_bit_exact(tmp_path_factory, vals):
    s = np.array(vals[:10])
    a = np.array(vals[10:])
    sn = s + 0.5
    tset = ds.TransitionSet(ds.KIN_STATE, ds.KIN_ACTION, s[None], a[None], sn[None], [0], [0])
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    ds.write_transitions(path, tset)
    assert ds.read_transitions(path, validate=False).equals(tset)


def test_truncated_row_reports_line(tmp_path, kin_set):
    path = tmp_path / "k.csv"
    ds.write_transitions(path, kin_set)
    lines = path.read_text().splitlines()
    lines[4] = ",".join(lines[4].split(",")[:-3])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedFileError) as exc:
        ds.read_transitions(path)
    assert exc.value.row == 5


def test_non_numeric_cell(tmp_path, kin_set):
    path = tmp_path / "k.csv"
    ds.write_transitions(path, kin_set)
    lines = path.read_text().splitlines()
    cells = lines[2].split(",")
    cells[5] = "abc"
    lines[2] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedFileError) as exc:
        ds.read_transitions(path)
    assert exc.value.row == 3


def test_count_mismatch(tmp_path, kin_set):
    path = tmp_path / "k.csv"
    ds.write_transitions(path, kin_set)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(MalformedFileError):
        ds.read_transitions(path)


def test_missing_manifest_and_version(tmp_path, kin_set):
    path = tmp_path / "k.csv"
    ds.write_transitions(path, kin_set)
    man = json.loads(ds.manifest_path(path).read_text())
    man["schema_version"] = 99
    ds.manifest_path(path).write_text(json.dumps(man))
    with pytest.raises(MalformedFileError):
        ds.read_transitions(path)
    ds.manifest_path(path).unlink()
    with pytest.raises(MalformedFileError):
        ds.read_transitions(path)


def test_identity_violation_detected(tmp_path, kin_set):
    bad = kin_set[np.arange(len(kin_set))]
    bad.S_next = bad.S_next.copy()
    bad.S_next[7, 3] += 1e-6
    with pytest.raises(DataError):
        bad.validate()
    path = tmp_path / "bad.csv"
    ds.write_transitions(path, bad)
    with pytest.raises(DataError):
        ds.read_transitions(path)
    assert len(ds.read_transitions(path, validate=False)) == len(bad)


def test_indexing(kin_set):
    t = kin_set[3]
    assert isinstance(t, ds.Transition) and t.step == 3
    sub = kin_set[[1, 2]]
    assert len(sub) == 2 and np.array_equal(sub.S, kin_set.S[[1, 2]])


def test_split_is_disjoint_and_seeded(kin_set):
    train, test = ds.split(kin_set, 0.2, 5)
    assert len(train) == 40 and len(test) == 10
    assert not set(train.step) & set(test.step)
    t2, _ = ds.split(kin_set, 0.2, 5)
    assert train.equals(t2)
    with pytest.raises(DataError):
        ds.split(kin_set, 1.0, 0)


def test_kfold_covers(kin_set):
    folds = ds.kfold(kin_set, 5, 0)
    assert sorted(np.concatenate([f.step for f in folds])) == list(range(50))
    with pytest.raises(DataError):
        ds.kfold(kin_set[:3], 5, 0)


def test_concat(kin_set):
    both = ds.concat([kin_set[:10], kin_set[10:]])
    assert both.equals(kin_set)
