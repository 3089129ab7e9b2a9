"""Command line front end: ``gen``, ``train``, ``rollout``, ``explain`` and ``pipeline``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import kinematics as kin
from . import models
from . import nn
from . import pipeline as pl
from . import report
from .errors import ArmCausalError, ConfigError, DataError, SchemaError
from .sim import BabbleConfig, run_session

log = logging.getLogger("armcausal")


def _pairs(text):
    try:
        return [tuple(p.split(":", 1)) for p in text.split(",") if p]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("pairs look like a_0:theta_0,a_mgt:o_z") from exc


def _hidden(text):
    try:
        return tuple(int(w) for w in text.split(",") if w)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("hidden widths look like 256,256") from exc


def build_parser():
    p = argparse.ArgumentParser(prog="armcausal", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a motor babbling dataset")
    g.add_argument("--mode", choices=("kinematics", "physics"), default="kinematics")
    g.add_argument("--steps", type=int, default=20_000, help="kinematics transitions")
    g.add_argument("--episodes", type=int, default=40, help="physics episodes")
    g.add_argument("--iterations", type=int, default=500, help="physics iterations per episode")
    g.add_argument("--substeps", type=int, default=10)
    g.add_argument("--sigma-scale", type=float, default=0.5)
    g.add_argument("--max-joint-speed", type=float, help="rad per substep (mode default if omitted, 0 disables the cap)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--chain", type=Path, help="chain/world JSON (default: packaged iiwa)")
    g.add_argument("--out", type=Path, required=True, help="output CSV path")

    t = sub.add_parser("train", help="train a forward or inverse model")
    t.add_argument("--role", choices=("fm", "im-mono", "im-pre", "im-base"), required=True)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--opt", choices=("adam", "adamw"))
    t.add_argument("--eta", type=float)
    t.add_argument("--lambda", dest="weight_decay", type=float)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--kfold", type=int, default=5, help="cross-validation folds (>= 2, 0 skips)")
    t.add_argument("--hidden", type=_hidden, help="hidden widths, e.g. 256,256")
    t.add_argument("--normalize", action="store_true", help="standardize inputs")
    t.add_argument("--activation", choices=("tanh", "relu"), default="tanh", help="hidden-layer activation")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=Path, required=True, help="model file path")
    t.add_argument("--report-dir", type=Path, help="directory for cv_report.csv (default: next to the model)")

    r = sub.add_parser("rollout", help="evaluate multi-step mental simulation")
    r.add_argument("--fm", type=Path, required=True)
    r.add_argument("--data", type=Path, required=True)
    r.add_argument("--horizon", type=int, default=10)
    r.add_argument("--trajectories", type=int, default=500)
    r.add_argument("--out", type=Path, required=True, help="output directory")

    e = sub.add_parser("explain", help="Shapley attributions of a forward model")
    e.add_argument("--fm", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--sample", type=int, default=200)
    e.add_argument("--background", type=int, default=100)
    e.add_argument("--method", choices=("deep", "kernel", "exact"), default="deep")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threshold", type=float, default=0.02, help="prunable below this fraction of the peak")
    e.add_argument("--coalition-budget", type=int, default=2048)
    e.add_argument("--pairs", type=_pairs, default=list(report.DEFAULT_PDP_PAIRS), help="PDP pairs a_0:theta_0,...")
    e.add_argument("--out", type=Path, required=True, help="output directory")

    q = sub.add_parser("pipeline", help="generate, train, roll out, explain and check")
    q.add_argument("--config", type=Path, help="JSON config (defaults are desk scale)")
    q.add_argument("--out", type=Path, required=True, help="output directory")
    q.add_argument("--seed", type=int, help="override the config seed")
    q.add_argument("--compare", type=Path, help="earlier run directory for the determinism check")
    return p


def cmd_gen(args):
    chain, limits, consts, digest = kin.load_config(args.chain)
    speed = args.max_joint_speed
    if speed is None:
        speed = pl.DEFAULTS[args.mode]["max_joint_speed"]
    speed = speed or None
    cfg = BabbleConfig(
        mode=args.mode,
        steps=args.steps,
        episodes=args.episodes,
        iterations=args.iterations,
        substeps=args.substeps,
        sigma_scale=args.sigma_scale,
        max_joint_speed=speed,
        seed=args.seed,
    )
    tset = run_session(cfg, chain=chain, limits=limits, consts=consts, chain_hash=digest)
    try:
        ds.write_transitions(args.out, tset)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {len(tset)} transitions to {args.out} (seed {args.seed})")


def cmd_train(args):
    if args.kfold == 1 or args.kfold < 0:
        raise ConfigError("--kfold must be >= 2 (or 0 to skip cross-validation)")
    tset = ds.read_transitions(args.data)
    if args.role != "fm" and "joints" not in tset.state_schema:
        raise SchemaError(f"role {args.role} needs a state schema with joints, got {tset.state_schema.tag}")
    train_cfg, opt, kfold, normalize, hidden = pl.train_settings(
        args.role,
        tset.state_schema.tag,
        epochs=args.epochs,
        optimizer=args.opt,
        eta=args.eta,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        seed=args.seed,
        kfold=args.kfold,
        normalize=args.normalize,
        hidden=args.hidden,
    )
    model, cv = pl.fit_role(args.role, tset, train_cfg, opt, kfold, normalize, hidden, args.activation)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    models.save(args.out, model, epochs=train_cfg.epochs, optimizer=opt.kind, eta=opt.eta, weight_decay=opt.weight_decay)
    rdir = args.report_dir or args.out.parent
    rdir.mkdir(parents=True, exist_ok=True)
    report.write_cv_report(rdir / "cv_report.csv", cv.rows)
    nn.write_loss_history(rdir / "loss_history.csv", cv.history)
    for head, value in (cv.mean() if cv.rows else {}).items():
        print(f"cv {head}: {value:.6g}")
    print(f"saved {args.role} model to {args.out}")


def cmd_rollout(args):
    fm = models.load(args.fm)
    if not isinstance(fm, models.ForwardModel):
        raise SchemaError(f"{args.fm} is not a forward model")
    tset = ds.read_transitions(args.data)
    if args.horizon < 1:
        raise ConfigError("--horizon must be >= 1")
    states, actions = models.trajectories_from_set(tset, args.horizon)
    if len(states) == 0:
        raise DataError(f"no trajectory in {args.data} spans {args.horizon} consecutive steps")
    states, actions = states[: args.trajectories], actions[: args.trajectories]
    result = models.eval_rollout(fm, states, actions, args.horizon)
    path = report.write_rollout(args.out, result)
    print(f"{result.n_trajectories} trajectories, horizon {args.horizon}: wrote {path}")


def cmd_explain(args):
    fm = models.load(args.fm)
    if not isinstance(fm, models.ForwardModel):
        raise SchemaError(f"{args.fm} is not a forward model")
    tset = ds.read_transitions(args.data)
    if tset.state_schema != fm.state_schema:
        raise SchemaError(f"data schema {tset.state_schema.tag} does not match the model's {fm.state_schema.tag}")
    tensor, importance, relevance, stems = pl.explain(
        fm,
        tset,
        args.out,
        method=args.method,
        sample=args.sample,
        background=args.background,
        seed=args.seed,
        threshold_fraction=args.threshold,
        coalition_budget=args.coalition_budget,
        pairs=args.pairs,
    )
    prunable = [r.feature for r in relevance if r.prunable]
    print(f"{tensor.phi.shape[0]} instances explained with {args.method}; prunable: {', '.join(prunable) or 'none'}")


def cmd_pipeline(args):
    overrides = {"seed": args.seed} if args.seed is not None else None
    cfg = pl.load_config(args.config, overrides)
    result = pl.run_pipeline(cfg, args.out, compare=args.compare)
    for c in result.checks:
        print(c.line())
    print(f"summary: {Path(args.out) / cfg['paths']['report'] / 'summary.md'}")
    return 0 if result.passed else 1


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "rollout": cmd_rollout, "explain": cmd_explain, "pipeline": cmd_pipeline}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore")
    try:
        return COMMANDS[args.command](args) or 0
    except ArmCausalError as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"stage {stage}: " if stage else ""
        print(f"armcausal {args.command}: {prefix}{exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
