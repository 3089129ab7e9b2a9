import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from armcausal import attribution as attr
from armcausal import dataset as ds
from armcausal import models
from armcausal import pipeline as pl
from armcausal import report
from armcausal.cli import main
from armcausal.errors import ConfigError

TINY = {
    "kinematics": {"steps": 800, "rollout_steps": 300},
    "physics": {"episodes": 2, "iterations": 80},
    "train": {
        "fm_kin": {"epochs": 2, "kfold": 2, "hidden": [8]},
        "fm_phys": {"epochs": 2, "hidden": [8]},
        "im_mono": {"epochs": 1, "hidden": [8]},
        "im_pre": {"epochs": 1, "hidden": [8]},
        "im_base": {"epochs": 1, "hidden": [8]},
    },
    "rollout": {"trajectories": 20},
    "explain": {"sample": 15, "background": 10},
    "checks": {"self_tests": False},
}


@pytest.fixture(scope="module")
def kin_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("gen") / "kin.csv"
    assert main(["gen", "--mode", "kinematics", "--steps", "1000", "--seed", "7", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def phys_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("gen") / "phys.csv"
    assert main(["gen", "--mode", "physics", "--episodes", "2", "--iterations", "100", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def kin_fm(kin_csv, tmp_path_factory):
    d = tmp_path_factory.mktemp("fm")
    args = ["train", "--role", "fm", "--data", str(kin_csv), "--epochs", "2", "--hidden", "8", "--kfold", "2"]
    assert main(args + ["--out", str(d / "fm.json")]) == 0
    return d / "fm.json"


def test_gen_kinematics_rows_and_manifest(kin_csv, capsys):
    tset = ds.read_transitions(kin_csv)
    assert len(tset) == 1000
    manifest = json.loads(ds.manifest_path(kin_csv).read_text())
    assert manifest["generator"]["config"]["seed"] == 7


def test_gen_physics_rows(phys_csv):
    assert len(ds.read_transitions(phys_csv)) == 200


def test_gen_is_byte_identical(kin_csv, tmp_path):
    again = tmp_path / "again.csv"
    main(["gen", "--mode", "kinematics", "--steps", "1000", "--seed", "7", "--out", str(again)])
    assert again.read_bytes() == kin_csv.read_bytes()


def test_gen_invalid_mode_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--mode", "dynamics", "--out", "x.csv"])
    assert exc.value.code == 2


def test_gen_unwritable_path(tmp_path, capsys):
    (tmp_path / "file").write_text("")
    code = main(["gen", "--steps", "10", "--out", str(tmp_path / "file" / "x.csv")])
    assert code == 3
    assert "cannot write" in capsys.readouterr().err


def test_train_writes_model_and_cv_report(kin_fm, kin_csv):
    rows = report.read_cv_report(kin_fm.parent / "cv_report.csv")
    assert {r["fold"] for r in rows} == {0, 1}
    fm = models.load(kin_fm)
    tset = ds.read_transitions(kin_csv)
    again = models.load(kin_fm)
    a, b = models.fm_mae(fm, tset), models.fm_mae(again, tset)
    assert all(abs(a[k] - b[k]) < 1e-12 for k in a)


def test_train_rejects_one_fold(kin_csv, tmp_path, capsys):
    code = main(["train", "--role", "fm", "--data", str(kin_csv), "--kfold", "1", "--out", str(tmp_path / "m.json")])
    assert code == 2
    assert "kfold" in capsys.readouterr().err


def test_train_role_schema_mismatch(tmp_path, kin_csv):
    tset = ds.read_transitions(kin_csv)
    keep = tset.state_schema.slice_of("effector")
    eff = ds.TransitionSet(
        tset.state_schema.without("joints"), tset.action_schema, tset.S[:, keep], tset.A, tset.S_next[:, keep], tset.episode, tset.step
    )
    ds.write_transitions(tmp_path / "eff.csv", eff)
    code = main(["train", "--role", "im-mono", "--data", str(tmp_path / "eff.csv"), "--out", str(tmp_path / "m.json")])
    assert code == 3


def test_train_defaults_mirror_role_table():
    train, opt, *_ = pl.train_settings("fm", "kin-v1")
    assert train.epochs == 60 and opt.kind == "adam" and opt.eta == 1e-3
    train, opt, *_ = pl.train_settings("im-mono", "kin-v1")
    assert train.epochs == 1000 and opt.kind == "adamw" and opt.weight_decay == 0.004
    train, *_ = pl.train_settings("fm", "phys-v1")
    assert train.epochs == 100


def test_train_im_roles(kin_csv, tmp_path):
    for role in ("im-mono", "im-pre", "im-base"):
        out = tmp_path / f"{role}.json"
        args = ["train", "--role", role, "--data", str(kin_csv), "--epochs", "1", "--hidden", "8", "--kfold", "0"]
        assert main(args + ["--out", str(out)]) == 0
        assert models.load(out).role == role


def test_train_relu_activation(kin_csv, tmp_path):
    out = tmp_path / "relu.json"
    args = ["train", "--role", "im-base", "--data", str(kin_csv), "--epochs", "1", "--hidden", "8", "--kfold", "0"]
    assert main(args + ["--activation", "relu", "--out", str(out)]) == 0
    assert models.load(out).spec.activation == "relu"


def test_missing_data_file(tmp_path):
    code = main(["train", "--role", "fm", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "m.json")])
    assert code == 3


def test_rollout_command(kin_fm, kin_csv, tmp_path):
    assert main(["rollout", "--fm", str(kin_fm), "--data", str(kin_csv), "--trajectories", "30", "--out", str(tmp_path)]) == 0
    curves = report.read_rollout_csv(tmp_path / "rollout.csv")
    assert set(curves) == {"joints", "effector"}
    assert all(len(m) == 10 for m, _ in curves.values())
    root = ET.parse(tmp_path / "rollout.svg").getroot()
    assert len(list(root.iter("{http://www.w3.org/2000/svg}polyline"))) == 2


def test_rollout_horizon_too_long(kin_fm, kin_csv, tmp_path, capsys):
    code = main(["rollout", "--fm", str(kin_fm), "--data", str(kin_csv), "--horizon", "5000", "--out", str(tmp_path)])
    assert code == 3
    assert "5000" in capsys.readouterr().err


def test_explain_command(phys_csv, tmp_path):
    fm_path = tmp_path / "fm.json"
    main(["train", "--role", "fm", "--data", str(phys_csv), "--epochs", "1", "--hidden", "8", "--kfold", "0", "--out", str(fm_path)])
    out = tmp_path / "ex"
    assert main(["explain", "--fm", str(fm_path), "--data", str(phys_csv), "--sample", "20", "--background", "10", "--out", str(out)]) == 0
    g = attr.read_global_csv(out / "global.csv")
    assert g.matrix.shape == (ds.PHYS_ACTION.dim, ds.PHYS_STATE.dim)
    for a, s in report.DEFAULT_PDP_PAIRS:
        _, phi = attr.read_pdp_csv(out / f"pdp_{a}_{s}.csv")
        assert abs(np.abs(phi).mean() - g.cell(a, s)) < 1e-12
    lines = (out / "relevance.csv").read_text().splitlines()
    assert lines[0] == "state_feature,max_action_attribution,prunable"
    assert len(lines) == 1 + ds.PHYS_STATE.dim


def test_explain_kernel_method(phys_csv, tmp_path):
    fm_path = tmp_path / "fm.json"
    main(["train", "--role", "fm", "--data", str(phys_csv), "--epochs", "1", "--hidden", "4", "--kfold", "0", "--out", str(fm_path)])
    out = tmp_path / "k"
    args = ["explain", "--fm", str(fm_path), "--data", str(phys_csv), "--sample", "2", "--background", "3", "--method", "kernel"]
    assert main(args + ["--coalition-budget", "512", "--out", str(out)]) == 0
    assert (out / "heatmap.svg").exists()


def test_explain_schema_mismatch(kin_fm, phys_csv, tmp_path):
    assert main(["explain", "--fm", str(kin_fm), "--data", str(phys_csv), "--out", str(tmp_path)]) == 3


# ---------------------------------------------------------------- pipeline

def test_config_merge_and_validation(tmp_path):
    cfg = pl.load_config(None, {"rollout": {"horizon": 5}})
    assert cfg["rollout"]["horizon"] == 5 and cfg["rollout"]["trajectories"] == 500
    with pytest.raises(ConfigError):
        pl.load_config(None, {"rollout": {"horizn": 5}})
    with pytest.raises(ConfigError):
        pl.load_config(None, {"train": {"fm_kin": {"kfold": 1}}})
    with pytest.raises(ConfigError):
        pl.load_config(None, {"explain": {"method": "lime"}})
    with pytest.raises(ConfigError):
        pl.load_config(None, {"train": {"im_base": {"activation": "sigmoid"}}})
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        pl.load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        pl.load_config(tmp_path / "missing.json")


def test_pipeline_bad_config_exit_code(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"physics": {"episodes": 0}}))
    assert main(["pipeline", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2


def test_pipeline_compare_needs_manifest(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(TINY))
    code = main(["pipeline", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o"), "--compare", str(tmp_path / "nope")])
    assert code == 2


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    a = pl.run_pipeline(pl.load_config(None, TINY), root / "a")
    b = pl.run_pipeline(pl.load_config(None, TINY), root / "b", compare=root / "a")
    return a, b


def test_pipeline_layout(tiny_runs):
    a, _ = tiny_runs
    out = a.out_dir
    for rel in ("data/kinematics.csv", "data/physics.csv", "models/fm_kin.json", "models/im_pre.json",
                "report/im_report.csv", "report/rollout.svg", "report/heatmap.svg", "report/summary.md", "manifest.json"):
        assert (out / rel).exists(), rel
    manifest = json.loads((out / "manifest.json").read_text())
    assert "layout" in manifest and manifest["config"]["seed"] == 0
    summary = (out / "report" / "summary.md").read_text()
    assert "inverse model ordering" in summary
    for csv_path in out.rglob("*.csv"):
        report.check_csv_round_trip(csv_path)


def test_pipeline_determinism(tiny_runs):
    a, b = tiny_runs
    assert a.digests == b.digests
    det = [c for c in b.checks if c.key == 11][0]
    assert det.passed
    assert [c.verdict for c in a.checks if c.key != 11] == [c.verdict for c in b.checks if c.key != 11]
    ja = json.loads((a.out_dir / "report" / "summary.json").read_text())
    assert [c["key"] for c in ja["checks"]] == sorted(c["key"] for c in ja["checks"])


def test_pipeline_reports_stage_on_failure(tmp_path, capsys, monkeypatch):
    from armcausal.errors import TrainingDivergedError

    def boom(*a, **k):
        raise TrainingDivergedError("loss is nan", epoch=1)

    monkeypatch.setattr(pl, "_train_role", boom)
    (tmp_path / "c.json").write_text(json.dumps(TINY))
    code = main(["pipeline", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")])
    assert code == 4
    assert "stage train-fm-kin" in capsys.readouterr().err
