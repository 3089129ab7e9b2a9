"""Report artifacts: CV tables, rollout curves and attribution outputs on disk."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import attribution as attr
from . import svg
from .errors import DataError, MalformedFileError

log = logging.getLogger(__name__)

DEFAULT_PDP_PAIRS = (("a_0", "theta_0"), ("a_0", "o_x"), ("a_2", "o_B"), ("a_mgt", "o_z"))


def _fmt(v):
    return repr(float(v))


def write_cv_report(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "head", "mae"])
        for r in rows:
            w.writerow([r["fold"], r["head"], _fmt(r["mae"])])


def read_cv_report(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["fold", "head", "mae"]:
            raise MalformedFileError(f"{path}: expected header fold,head,mae", row=1)
        return [{"fold": int(r["fold"]), "head": r["head"], "mae": float(r["mae"])} for r in reader]


def write_table(path, header, rows):
    """Plain CSV with floats in shortest round-trip form."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_rollout(out_dir, result):
    """``rollout.csv`` (step, subvector, mae_mean, mae_std) and ``rollout.svg``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_table(
        out_dir / "rollout.csv",
        ["step", "subvector", "mae_mean", "mae_std"],
        ([r["step"], r["subvector"], r["mae_mean"], r["mae_std"]] for r in result.rows()),
    )
    steps = np.arange(1, result.horizon + 1)
    doc = svg.line_chart(
        steps,
        {k: v for k, v in result.mean.items()},
        "steps ahead",
        "MAE",
        title=f"Mental simulation error ({result.n_trajectories} trajectories)",
        bands=result.std,
    )
    svg.write(out_dir / "rollout.svg", doc)
    return out_dir / "rollout.csv"


def read_rollout_csv(path):
    """``{subvector: (mean array, std array)}`` ordered by step."""
    out = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            mean, std = out.setdefault(r["subvector"], ([], []))
            mean.append(float(r["mae_mean"]))
            std.append(float(r["mae_std"]))
    return {k: (np.array(m), np.array(s)) for k, (m, s) in out.items()}


def pdp_stem(input_label, output_label):
    return f"pdp_{input_label}_{output_label}"


def write_explain(out_dir, tensor, importance, relevance, pairs=DEFAULT_PDP_PAIRS):
    """phi, global, heat map, relevance and one PDP csv/svg per available pair."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    attr.write_phi_csv(out_dir / "phi.csv", tensor)
    attr.write_global_csv(out_dir / "global.csv", importance)
    attr.write_relevance_csv(out_dir / "relevance.csv", relevance)
    heat = svg.heatmap(importance.matrix, importance.row_labels, importance.col_labels, "Mean |phi| of actions on state features")
    svg.write(out_dir / "heatmap.svg", heat)
    written = []
    for a, s in pairs:
        if a not in tensor.labels or s not in tensor.output_labels:
            log.info("skipping PDP %s -> %s: feature not in this model", a, s)
            continue
        series = attr.pdp_series(tensor, a, s)
        stem = pdp_stem(a, s)
        attr.write_pdp_csv(out_dir / f"{stem}.csv", series)
        svg.write(out_dir / f"{stem}.svg", svg.scatter(series.values, series.phi, a, f"phi({s})", f"{a} -> {s}"))
        written.append(stem)
    return written


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_directory_manifest(root, extra=None):
    """``manifest.json`` listing every file below ``root`` with its sha256."""
    root = Path(root)
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != "manifest.json")
    doc = {"files": {str(p.relative_to(root)): file_digest(p) for p in files}}
    doc.update(extra or {})
    (root / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def check_csv_round_trip(path):
    """Every numeric cell must parse; returns the row count."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            raise MalformedFileError(f"{path}: ragged row", row=line_no)
    return len(rows) - 1
