"""State/action schemas, transition sets and their CSV + manifest storage."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, MalformedFileError, SchemaError
from .nn import kfold_split

SCHEMA_VERSION = 1

_LABELS = {
    "object": ["o_x", "o_y", "o_z", "o_rx", "o_ry", "o_rz", "o_R", "o_G", "o_B"],
    "effector": ["ef_x", "ef_y", "ef_z", "ef_rx", "ef_ry", "ef_rz"],
    "magnet": ["mgt"],
    "magnet_cmd": ["a_mgt"],
}


def _default_labels(name, dims):
    if name in _LABELS and dims <= len(_LABELS[name]):
        return _LABELS[name][:dims]
    if name == "joints":
        return [f"theta_{i}" for i in range(dims)]
    if name == "joint_delta":
        return [f"a_{i}" for i in range(dims)]
    return [f"{name}_{i}" for i in range(dims)]


@dataclass(frozen=True)
class Segment:
    name: str
    dims: int
    unit: str = ""
    labels: tuple = ()

    def __post_init__(self):
        if self.dims < 1:
            raise SchemaError(f"segment {self.name!r} needs dims >= 1")
        labels = tuple(self.labels) or tuple(_default_labels(self.name, self.dims))
        if len(labels) != self.dims:
            raise SchemaError(f"segment {self.name!r}: {len(labels)} labels for {self.dims} dims")
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class Schema:
    """Ordered named subvectors composing a flat vector."""

    tag: str
    segments: tuple

    def __post_init__(self):
        segs = tuple(s if isinstance(s, Segment) else Segment(*s) for s in self.segments)
        names = [s.name for s in segs]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate segment names in {names}")
        object.__setattr__(self, "segments", segs)

    @property
    def dim(self):
        return sum(s.dims for s in self.segments)

    @property
    def names(self):
        return [s.name for s in self.segments]

    @property
    def labels(self):
        return [l for s in self.segments for l in s.labels]

    def __contains__(self, name):
        return name in self.names

    def segment(self, name):
        for s in self.segments:
            if s.name == name:
                return s
        raise SchemaError(f"unknown subvector {name!r} (schema {self.tag}: {self.names})")

    def slice_of(self, name):
        start = 0
        for s in self.segments:
            if s.name == name:
                return slice(start, start + s.dims)
            start += s.dims
        raise SchemaError(f"unknown subvector {name!r} (schema {self.tag}: {self.names})")

    @property
    def slices(self):
        return {s.name: self.slice_of(s.name) for s in self.segments}

    def without(self, name):
        self.segment(name)
        return Schema(f"{self.tag}-no-{name}", tuple(s for s in self.segments if s.name != name))

    def to_dict(self):
        return {"tag": self.tag, "segments": [[s.name, s.dims, s.unit, list(s.labels)] for s in self.segments]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["tag"], tuple(Segment(n, int(k), u, tuple(l)) for n, k, u, l in d["segments"]))

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


KIN_STATE = Schema("kin-v1", (Segment("joints", 7, "rad"), Segment("effector", 3, "m")))
KIN_ACTION = Schema("kin-v1-action", (Segment("joint_delta", 7, "rad"),))
PHYS_STATE = Schema(
    "phys-v1",
    (Segment("object", 9, "m,rad,rgb"), Segment("joints", 7, "rad"), Segment("effector", 6, "m,rad"), Segment("magnet", 1, "flag")),
)
PHYS_ACTION = Schema("phys-v1-action", (Segment("joint_delta", 7, "rad"), Segment("magnet_cmd", 1, "flag")))


def slice_state(state, schema, name):
    """Contiguous copy of subvector ``name`` (works on a vector or a batch)."""
    return np.array(np.asarray(state)[..., schema.slice_of(name)])


def strip_theta_next(s_next, schema):
    """Remove the joint subvector; returns ``(stripped, stripped_schema)``."""
    if "joints" not in schema:
        raise SchemaError(f"schema {schema.tag} has no 'joints' subvector to strip")
    keep = [i for name, sl in schema.slices.items() if name != "joints" for i in range(sl.start, sl.stop)]
    return np.asarray(s_next)[..., keep], schema.without("joints")


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    episode: int = 0
    step: int = 0


@dataclass
class TransitionSet:
    """Columnar store of transitions sharing one state/action schema pair."""

    state_schema: Schema
    action_schema: Schema
    S: np.ndarray
    A: np.ndarray
    S_next: np.ndarray
    episode: np.ndarray
    step: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.S)
        self.S = np.asarray(self.S, dtype=float).reshape(n, self.state_schema.dim)
        self.A = np.asarray(self.A, dtype=float).reshape(n, self.action_schema.dim)
        self.S_next = np.asarray(self.S_next, dtype=float).reshape(n, self.state_schema.dim)
        self.episode = np.asarray(self.episode, dtype=np.int64).reshape(n)
        self.step = np.asarray(self.step, dtype=np.int64).reshape(n)
        if "joints" in self.state_schema and "joint_delta" in self.action_schema:
            if self.state_schema.segment("joints").dims != self.action_schema.segment("joint_delta").dims:
                raise SchemaError("joint_delta and joints dimensions differ")
        self.manifest = dict(self.manifest)
        self.manifest["count"] = n

    def __len__(self):
        return len(self.S)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Transition(self.S[idx], self.A[idx], self.S_next[idx], int(self.episode[idx]), int(self.step[idx]))
        return TransitionSet(
            self.state_schema,
            self.action_schema,
            self.S[idx],
            self.A[idx],
            self.S_next[idx],
            self.episode[idx],
            self.step[idx],
            self.manifest,
        )

    @classmethod
    def empty(cls, state_schema, action_schema, manifest=None):
        n, m = state_schema.dim, action_schema.dim
        return cls(state_schema, action_schema, np.zeros((0, n)), np.zeros((0, m)), np.zeros((0, n)), [], [], manifest or {})

    def joint_identity_error(self):
        """Largest ``|joints(s_next) - joints(s) - joint_delta(a)|`` over the set."""
        if len(self) == 0 or "joints" not in self.state_schema:
            return 0.0
        j = self.state_schema.slice_of("joints")
        d = self.action_schema.slice_of("joint_delta")
        return float(np.max(np.abs(self.S_next[:, j] - self.S[:, j] - self.A[:, d])))

    def validate(self, tol=1e-12):
        err = self.joint_identity_error()
        if err > tol:
            j = self.state_schema.slice_of("joints")
            d = self.action_schema.slice_of("joint_delta")
            bad = np.flatnonzero(np.max(np.abs(self.S_next[:, j] - self.S[:, j] - self.A[:, d]), axis=1) > tol)
            raise DataError(f"joint identity violated in {len(bad)} transitions (first index {bad[0]}, error {err:.3g})")
        return self

    def equals(self, other):
        return (
            self.state_schema == other.state_schema
            and self.action_schema == other.action_schema
            and all(
                np.array_equal(getattr(self, f), getattr(other, f)) for f in ("S", "A", "S_next", "episode", "step")
            )
        )

    def header(self):
        n, m = self.state_schema.dim, self.action_schema.dim
        return (
            ["episode", "step"] + [f"s_{i}" for i in range(n)] + [f"a_{i}" for i in range(m)] + [f"sn_{i}" for i in range(n)]
        )


def concat(sets):
    sets = list(sets)
    first = sets[0]
    return TransitionSet(
        first.state_schema,
        first.action_schema,
        np.concatenate([s.S for s in sets]),
        np.concatenate([s.A for s in sets]),
        np.concatenate([s.S_next for s in sets]),
        np.concatenate([s.episode for s in sets]),
        np.concatenate([s.step for s in sets]),
        first.manifest,
    )


def manifest_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def build_manifest(tset):
    m = dict(tset.manifest)
    m.update(
        schema_version=SCHEMA_VERSION,
        state_schema=tset.state_schema.to_dict(),
        action_schema=tset.action_schema.to_dict(),
        count=len(tset),
    )
    if "joints" in tset.state_schema:
        m["stripped_next_state_schema"] = tset.state_schema.without("joints").to_dict()
    m.setdefault("action_recording", "achieved")
    return m


def write_transitions(path, tset):
    """CSV with one transition per row plus a ``<stem>.manifest.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(tset)
    body = np.column_stack([tset.S, tset.A, tset.S_next]) if len(tset) else None
    with open(path, "w", newline="") as fh:
        fh.write(",".join(tset.header()) + "\n")
        for i in range(len(tset)):
            vals = ",".join("%.17g" % v for v in body[i])
            fh.write(f"{tset.episode[i]},{tset.step[i]},{vals}\n")
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_transitions(path, validate=True):
    path = Path(path)
    mpath = manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text())
        state_schema = Schema.from_dict(manifest["state_schema"])
        action_schema = Schema.from_dict(manifest["action_schema"])
    except FileNotFoundError as exc:
        raise MalformedFileError(f"missing manifest {mpath}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFileError(f"bad manifest {mpath}: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise MalformedFileError(f"unsupported schema_version {manifest.get('schema_version')!r}")
    expected = TransitionSet.empty(state_schema, action_schema).header()
    width = len(expected)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise MalformedFileError(f"{path}: header does not match the manifest schema", row=1)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != width:
                raise MalformedFileError(f"{path}: expected {width} cells, got {len(row)}", row=line_no)
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise MalformedFileError(f"{path}: non-numeric cell ({exc})", row=line_no) from None
    if len(rows) != manifest.get("count"):
        raise MalformedFileError(
            f"{path}: manifest declares {manifest.get('count')} records, file holds {len(rows)}", row=len(rows) + 2
        )
    n, m = state_schema.dim, action_schema.dim
    data = np.array(rows, dtype=float).reshape(len(rows), width)
    tset = TransitionSet(
        state_schema,
        action_schema,
        data[:, 2 : 2 + n],
        data[:, 2 + n : 2 + n + m],
        data[:, 2 + n + m :],
        data[:, 0].astype(np.int64),
        data[:, 1].astype(np.int64),
        {k: v for k, v in manifest.items() if k not in ("state_schema", "action_schema")},
    )
    if validate:
        tset.validate()
    return tset


def split(tset, test_fraction, seed):
    """Seeded disjoint ``(train, test)`` partition."""
    if not 0 < test_fraction < 1:
        raise DataError("test_fraction must lie in (0, 1)")
    n = len(tset)
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n_test >= n:
        raise DataError(f"degenerate split of {n} records at fraction {test_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    return tset[np.sort(perm[n_test:])], tset[np.sort(perm[:n_test])]


def kfold(tset, k, seed):
    """``k`` seeded disjoint folds covering the set."""
    if len(tset) < k:
        raise DataError(f"cannot split {len(tset)} records into {k} folds")
    return [tset[idx] for idx in kfold_split(len(tset), k, seed)]
