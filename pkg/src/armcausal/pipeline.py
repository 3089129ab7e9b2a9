"""End-to-end reproduction harness: generate, train, roll out, explain, check.

A run writes ``data/``, ``models/`` and ``report/`` below one output directory
together with a top-level ``manifest.json`` of file digests.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attribution as attr
from . import checks
from . import dataset as ds
from . import kinematics as kin
from . import models
from . import nn
from . import report
from .errors import ArmCausalError, ConfigError
from .sim import BabbleConfig, run_session

log = logging.getLogger(__name__)

# Full-length hyperparameters per model role; the pipeline defaults below scale the
# epoch counts down to desk size.
ROLE_DEFAULTS = {
    "fm": {"epochs": {"kin-v1": 60, "phys-v1": 100}, "optimizer": "adam", "eta": 1e-3, "weight_decay": 0.0},
    "im-mono": {"epochs": 1000, "optimizer": "adamw", "eta": 1e-3, "weight_decay": 0.004},
    "im-pre": {"epochs": 4000, "optimizer": "adamw", "eta": 1e-3, "weight_decay": 0.004},
    "im-base": {"epochs": 100, "optimizer": "adam", "eta": 1e-3, "weight_decay": 0.0},
}

DEFAULTS = {
    "seed": 0,
    "paths": {"chain": None, "data": "data", "models": "models", "report": "report"},
    "kinematics": {"steps": 20000, "rollout_steps": 5000, "substeps": 10, "sigma_scale": 0.5, "max_joint_speed": 0.005},
    "physics": {"episodes": 40, "iterations": 500, "substeps": 10, "sigma_scale": 0.5, "max_joint_speed": 0.05},
    "train": {
        "fm_kin": {"epochs": 60, "batch_size": 256, "kfold": 5},
        "fm_phys": {"epochs": 100, "batch_size": 256, "kfold": 0},
        "im_mono": {"epochs": 40, "batch_size": 256},
        "im_pre": {"epochs": 40, "batch_size": 256},
        "im_base": {"epochs": 40, "batch_size": 256},
        "im_test_fraction": 0.2,
    },
    "rollout": {"horizon": 10, "trajectories": 500},
    "explain": {
        "method": "deep",
        "sample": 200,
        "background": 100,
        "seed": 0,
        "threshold_fraction": 0.02,
        "coalition_budget": 2048,
        "pairs": [list(p) for p in report.DEFAULT_PDP_PAIRS],
    },
    "checks": {"self_tests": True},
}

_ROLE_KEYS = {"fm_kin": "fm", "fm_phys": "fm", "im_mono": "im-mono", "im_pre": "im-pre", "im_base": "im-base"}


_ROLE_FIELDS = {"epochs", "batch_size", "kfold", "optimizer", "eta", "weight_decay", "normalize", "hidden", "seed", "activation"}


def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise ConfigError(f"unknown {where} key {k!r}")
        if k in _ROLE_KEYS and isinstance(v, dict):
            unknown = set(v) - _ROLE_FIELDS
            if unknown:
                raise ConfigError(f"unknown {where}.{k} keys {sorted(unknown)}")
            out[k].update(v)
        elif isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None):
    """Default config merged with a JSON file and then with ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        cfg = _merge(cfg, doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    for key in ("steps", "rollout_steps"):
        if cfg["kinematics"][key] < 1:
            raise ConfigError(f"kinematics.{key} must be positive")
    for key in ("episodes", "iterations"):
        if cfg["physics"][key] < 1:
            raise ConfigError(f"physics.{key} must be positive")
    for role in _ROLE_KEYS:
        r = cfg["train"][role]
        if r.get("epochs", 1) < 1 or r.get("batch_size", 1) < 1:
            raise ConfigError(f"train.{role}: epochs and batch_size must be positive")
        if r.get("activation", "tanh") not in nn.ACTIVATIONS:
            raise ConfigError(f"train.{role}.activation must be one of {', '.join(nn.ACTIVATIONS)}")
        k = r.get("kfold", 0)
        if k and k < 2:
            raise ConfigError(f"train.{role}.kfold must be 0 (off) or >= 2")
    if not 0 < cfg["train"]["im_test_fraction"] < 1:
        raise ConfigError("train.im_test_fraction must lie in (0, 1)")
    ex = cfg["explain"]
    if ex["method"] not in ("deep", "kernel", "exact"):
        raise ConfigError(f"explain.method {ex['method']!r} is not one of deep, kernel, exact")
    if ex["sample"] < 1 or ex["background"] < 1:
        raise ConfigError("explain.sample and explain.background must be positive")
    if cfg["rollout"]["horizon"] < 1 or cfg["rollout"]["trajectories"] < 1:
        raise ConfigError("rollout.horizon and rollout.trajectories must be positive")
    chain = cfg["paths"]["chain"]
    if chain is not None and not Path(chain).exists():
        raise ConfigError(f"chain file {chain} does not exist")


def train_settings(role, schema_tag=None, **overrides):
    """``(TrainConfig, OptimizerConfig, kfold, normalize, hidden)`` for a model role."""
    base = dict(ROLE_DEFAULTS[role])
    epochs = base.pop("epochs")
    if isinstance(epochs, dict):
        epochs = epochs[schema_tag]
    s = {"epochs": epochs, "batch_size": 256, "seed": 0, "kfold": 0, "normalize": False, "hidden": None}
    s.update(base)
    s.update({k: v for k, v in overrides.items() if v is not None})
    train_cfg = nn.TrainConfig(epochs=int(s["epochs"]), batch_size=int(s["batch_size"]), seed=int(s["seed"]))
    opt = nn.OptimizerConfig(kind=s["optimizer"], eta=float(s["eta"]), weight_decay=float(s["weight_decay"]))
    return train_cfg, opt, int(s["kfold"] or 0), bool(s["normalize"]), s["hidden"]


@dataclass
class StageTimer:
    times: dict = field(default_factory=dict)

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        log.info("stage %s", name)
        try:
            out = fn(*args, **kw)
        except ArmCausalError as exc:
            exc.stage = name
            raise
        self.times[name] = time.perf_counter() - t0
        return out


@dataclass
class PipelineResult:
    out_dir: Path
    checks: list
    timings: dict
    digests: dict

    @property
    def passed(self):
        return all(c.passed is not False for c in self.checks)


def _babble(cfg, section, mode, seed, **extra):
    sec = cfg[section]
    kw = {k: sec[k] for k in ("substeps", "sigma_scale", "max_joint_speed")}
    return BabbleConfig(mode=mode, seed=seed, **kw, **extra)


def _write_and_verify(path, tset):
    ds.write_transitions(path, tset)
    back = ds.read_transitions(path)
    return back.equals(tset), back.joint_identity_error()


def _train_role(key, tset, cfg, seed):
    role = _ROLE_KEYS[key]
    t = dict(cfg["train"][key])
    t.setdefault("seed", seed)
    activation = t.pop("activation", "tanh")
    train_cfg, opt, kfold, normalize, hidden = train_settings(role, tset.state_schema.tag, **t)
    return fit_role(role, tset, train_cfg, opt, kfold, normalize, hidden, activation)


def fit_role(role, tset, train_cfg, opt, kfold=0, normalize=False, hidden=None, activation="tanh"):
    """Build and train the model for ``role``; returns ``(model, CVReport)``."""
    if role == "fm":
        fm = models.build_fm(tset.state_schema, tset.action_schema, hidden, seed=train_cfg.seed, activation=activation)
        return models.train_fm(fm, tset, train_cfg, opt, kfold=kfold or None, normalize=normalize)
    trainer = {"im-mono": models.train_im_monolithic, "im-pre": models.train_pre_network, "im-base": models.train_base_im}[role]
    kw = {"hidden": hidden} if hidden else {}
    return trainer(tset, train_cfg, opt, kfold=kfold or None, normalize=normalize, activation=activation, **kw)


def run_pipeline(cfg, out_dir, compare=None):
    """Run every stage; returns a :class:`PipelineResult` and writes the summary."""
    previous = _previous_digests(compare) if compare else None
    out = Path(out_dir)
    paths = {k: out / cfg["paths"][k] for k in ("data", "models", "report")}
    for p in paths.values():
        p.mkdir(parents=True, exist_ok=True)
    chain, limits, consts, chain_hash = kin.load_config(cfg["paths"]["chain"])
    world = {"chain": chain, "limits": limits, "consts": consts, "chain_hash": chain_hash}
    seed = int(cfg["seed"])
    timer = StageTimer()
    results = []

    if cfg["checks"]["self_tests"]:
        results.append(timer.run("check-gradients", checks.check_gradients, seed=seed))
        results.append(timer.run("check-shapley", checks.check_shapley_oracle, seed=seed))
        results.append(timer.run("check-linear", checks.check_linear_closed_form, seed=seed))

    # data
    kcfg = cfg["kinematics"]
    kin_set = timer.run("gen-kinematics", run_session, _babble(cfg, "kinematics", "kinematics", seed, steps=kcfg["steps"]), **world)
    roll_set = timer.run(
        "gen-rollout", run_session, _babble(cfg, "kinematics", "kinematics", seed + 1, steps=kcfg["rollout_steps"]), **world
    )
    pcfg = cfg["physics"]
    phys_cfg = _babble(cfg, "physics", "physics", seed, episodes=pcfg["episodes"], iterations=pcfg["iterations"])
    phys_set = timer.run("gen-physics", run_session, phys_cfg, **world)
    trips = {}
    for name, tset in (("kinematics.csv", kin_set), ("rollout.csv", roll_set), ("physics.csv", phys_set)):
        trips[name] = _write_and_verify(paths["data"] / name, tset)

    # kinematics forward model
    fm_kin, cv = timer.run("train-fm-kin", _train_role, "fm_kin", kin_set, cfg, seed)
    models.save(paths["models"] / "fm_kin.json", fm_kin)
    report.write_cv_report(paths["report"] / "cv_report_fm_kin.csv", cv.rows)
    nn.write_loss_history(paths["report"] / "loss_fm_kin.csv", cv.history)
    cv_means = cv.mean() if cv.rows else models.fm_mae(fm_kin, kin_set)
    report.write_table(paths["report"] / "fm_kin_cv_mean.csv", ["head", "mae"], sorted(cv_means.items()))

    # inverse models on a held-out split of the same data
    train_set, test_set = ds.split(kin_set, cfg["train"]["im_test_fraction"], seed)
    mono, _ = timer.run("train-im-mono", _train_role, "im_mono", train_set, cfg, seed)
    pre, _ = timer.run("train-im-pre", _train_role, "im_pre", train_set, cfg, seed)
    base, _ = timer.run("train-im-base", _train_role, "im_base", train_set, cfg, seed)
    for name, m in (("im_mono", mono), ("im_pre", pre), ("im_base", base)):
        models.save(paths["models"] / f"{name}.json", m)
    asm = models.assemble(pre, base)
    joint = "joint_action"
    im = {
        "base": models.im_mae(base, test_set)[joint],
        "assembly": models.assembly_mae(asm, test_set)[joint],
        "mono": models.im_mae(mono, test_set)[joint],
        "pre": models.im_mae(pre, test_set)["theta_next"],
        "zeros": models.eval_theta_substitution(base, test_set, "zeros")[joint],
        "sampled": models.eval_theta_substitution(base, test_set, "sampled", seed=seed, reference=train_set)[joint],
    }
    report.write_table(paths["report"] / "im_report.csv", ["model", "mae"], sorted(im.items()))

    # mental simulation
    rc = cfg["rollout"]
    states, actions = models.trajectories_from_set(roll_set, rc["horizon"])
    states, actions = states[: rc["trajectories"]], actions[: rc["trajectories"]]
    roll = timer.run("rollout", models.eval_rollout, fm_kin, states, actions, rc["horizon"])
    report.write_rollout(paths["report"], roll)

    # physics forward model and its explanation
    fm_phys, cv_p = timer.run("train-fm-phys", _train_role, "fm_phys", phys_set, cfg, seed)
    models.save(paths["models"] / "fm_phys.json", fm_phys)
    nn.write_loss_history(paths["report"] / "loss_fm_phys.csv", cv_p.history)
    if cv_p.rows:
        report.write_cv_report(paths["report"] / "cv_report_fm_phys.csv", cv_p.rows)
    report.write_table(
        paths["report"] / "fm_phys_mae.csv", ["head", "mae"], sorted(models.fm_mae(fm_phys, phys_set).items())
    )
    ex = cfg["explain"]
    explained = timer.run("explain", explain, fm_phys, phys_set, paths["report"], **_explain_kw(ex))
    tensor, importance, relevance, _ = explained

    results.append(checks.check_local_accuracy(explained_full_tensor(fm_phys, phys_set, ex)))
    results.append(checks.check_fm_quality(cv_means["effector_position"], cv_means["joints"]))
    results.append(checks.check_im_ordering(im))
    results.append(checks.check_rollout_shape(roll.mean["joints"], roll.n_trajectories))
    results.append(checks.check_colour_irrelevance(importance, relevance))
    results.append(checks.check_masked_joint(importance))
    pdp = attr.pdp_series(tensor, "a_mgt", "o_z")
    results.append(checks.check_magnet_signature(importance, pdp.values, pdp.phi))
    results.append(checks.check_datasets(trips))

    digests = {str(p.relative_to(out)): report.file_digest(p) for p in sorted(out.rglob("*.csv"))}
    results.append(checks.check_determinism(digests, previous))
    results.sort(key=lambda c: c.key)
    write_summary(paths["report"], results, timer.times, cfg)
    report.write_directory_manifest(out, {"config": cfg, "layout": LAYOUT})
    return PipelineResult(out, results, timer.times, digests)


LAYOUT = {
    "data/": "transition CSVs with <stem>.manifest.json sidecars",
    "models/": "JSON model files tagged with role and schemas",
    "report/": "CV tables, rollout.csv/svg, phi/global/relevance CSVs, heatmap.svg, pdp_*.csv/svg, summary.md/json",
}


def _explain_kw(ex):
    return {
        "method": ex["method"],
        "sample": ex["sample"],
        "background": ex["background"],
        "seed": ex["seed"],
        "threshold_fraction": ex["threshold_fraction"],
        "coalition_budget": ex["coalition_budget"],
        "pairs": [tuple(p) for p in ex["pairs"]],
    }


def _rows(tset, n, seed):
    X = np.hstack([tset.S, tset.A])
    return X[attr.sample_rows(len(X), n, seed)]


def explain(fm, tset, out_dir, method="deep", sample=200, background=100, seed=0, threshold_fraction=0.02,
            coalition_budget=2048, pairs=report.DEFAULT_PDP_PAIRS):
    """Attribute a sample of ``tset`` and write the explanation artifacts.

    Instances and background are drawn with seeds ``seed`` and ``seed + 1``.
    Returns ``(tensor, importance, relevance, pdp_stems)``.
    """
    X, bg = _rows(tset, sample, seed), _rows(tset, background, seed + 1)
    tensor = attr.attribute_dataset(fm, X, bg, method, "actions-only", coalition_budget, seed)
    importance = attr.aggregate_global(tensor)
    relevance = attr.relevance_report(importance, threshold_fraction=threshold_fraction)
    stems = report.write_explain(out_dir, tensor, importance, relevance, pairs)
    return tensor, importance, relevance, stems


def explained_full_tensor(fm, tset, ex):
    X, bg = _rows(tset, ex["sample"], ex["seed"]), _rows(tset, ex["background"], ex["seed"] + 1)
    return attr.attribute_dataset(fm, X, bg, "deep", "all-inputs")


def _previous_digests(path):
    try:
        doc = json.loads((Path(path) / "manifest.json").read_text())
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise ConfigError(f"--compare {path}: no readable manifest.json ({exc})") from exc
    return {k: v for k, v in doc["files"].items() if k.endswith(".csv")}


def write_summary(report_dir, results, timings, cfg):
    report_dir = Path(report_dir)
    lines = ["# Pipeline summary", "", "## Checks", ""]
    lines += [f"- {c.line()}" for c in results]
    lines += ["", "## Stage timings (s)", ""]
    lines += [f"- {k}: {v:.1f}" for k, v in timings.items()]
    (report_dir / "summary.md").write_text("\n".join(lines) + "\n")
    doc = {"checks": [c.to_dict() for c in results], "seed": cfg["seed"]}
    (report_dir / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")
    (report_dir / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
