"""Forward and inverse models of the sensorimotor loop.

The forward model maps ``[s(t), a(t)]`` to ``s(t+1)`` with one linear head per
state subvector.  Inverse models map ``[s(t), s'(t+1)]`` (the next state with
the joint configuration removed) to ``a(t)``, either with one monolithic
network or with a pre-network that estimates ``theta(t+1)`` for a base model
trained on the true value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataset import Schema, TransitionSet, strip_theta_next
from .errors import ConfigError, DataError, SchemaError

# Finer output partition used by the forward model's heads; rotations are angles.
_HEAD_SPLIT = {
    "object": [("object_position", 3, None), ("object_rotation", 3, 2 * np.pi), ("color", 3, None)],
    "effector": [("effector_position", 3, None), ("effector_rotation", 3, 2 * np.pi)],
}
_ACTION_HEADS = {"joint_delta": "joint_action", "magnet_cmd": "magnet_action"}

FM_HIDDEN = {"kin-v1": (128, 128), "phys-v1": (256, 256)}
MONO_HIDDEN = (256, 256, 256, 256)
PRE_HIDDEN = (256, 256, 256, 256)
BASE_HIDDEN = (128, 128)


def state_heads(schema):
    """Head partition of a state schema in schema order."""
    heads = []
    for seg in schema.segments:
        split = _HEAD_SPLIT.get(seg.name)
        if split and sum(w for _, w, _ in split) >= seg.dims:
            left = seg.dims
            for name, w, period in split:
                if left <= 0:
                    break
                heads.append(nn.Head(name, min(w, left), period=period if left >= w else None))
                left -= w
        else:
            heads.append(nn.Head(seg.name, seg.dims))
    return tuple(heads)


def action_heads(schema):
    return tuple(nn.Head(_ACTION_HEADS.get(s.name, s.name), s.dims) for s in schema.segments)


def _check_schema(model, tset):
    if tset.state_schema != model.state_schema or tset.action_schema != model.action_schema:
        raise SchemaError(
            f"data schema ({tset.state_schema.tag}, {tset.action_schema.tag}) does not match the model "
            f"({model.state_schema.tag}, {model.action_schema.tag})"
        )


@dataclass
class ForwardModel:
    state_schema: Schema
    action_schema: Schema
    params: nn.MlpParams
    role = "fm"

    @property
    def spec(self):
        return self.params.spec

    @property
    def input_labels(self):
        return self.state_schema.labels + self.action_schema.labels

    @property
    def output_labels(self):
        return self.state_schema.labels

    @property
    def n_state(self):
        return self.state_schema.dim

    def inputs(self, S, A):
        S, A = np.atleast_2d(S), np.atleast_2d(A)
        if S.shape[1] != self.state_schema.dim or A.shape[1] != self.action_schema.dim:
            raise DataError(
                f"expected state/action dims {self.state_schema.dim}/{self.action_schema.dim}, got {S.shape[1]}/{A.shape[1]}"
            )
        return np.hstack([S, A])

    def predict(self, S, A):
        single = np.ndim(S) == 1
        out = self.params.predict(self.inputs(S, A))
        return out[0] if single else out

    def xy(self, tset):
        _check_schema(self, tset)
        return self.inputs(tset.S, tset.A), tset.S_next


def build_fm(state_schema, action_schema, hidden_widths=None, seed=0, activation="tanh"):
    if hidden_widths is None:
        hidden_widths = FM_HIDDEN.get(state_schema.tag, (128, 128))
    spec = nn.MlpSpec(state_schema.dim + action_schema.dim, tuple(hidden_widths), state_heads(state_schema), activation)
    return ForwardModel(state_schema, action_schema, nn.mlp_init(spec, seed))


def predict_next(fm, s, a):
    return fm.predict(s, a)


@dataclass
class CvReport:
    """Per-fold, per-head held-out MAE plus the final model's training history."""

    rows: list = field(default_factory=list)
    history: list = field(default_factory=list)

    def mean(self):
        heads = dict.fromkeys(r["head"] for r in self.rows)
        return {h: float(np.mean([r["mae"] for r in self.rows if r["head"] == h])) for h in heads}


def cross_validate(fit, evaluate, tset, k, seed):
    """Generic k-fold loop: ``fit(train_set, fold) -> model``, ``evaluate(model, test_set) -> {head: mae}``."""
    rows = []
    for i, test_idx in enumerate(nn.kfold_split(len(tset), k, seed)):
        mask = np.ones(len(tset), bool)
        mask[test_idx] = False
        model = fit(tset[mask], i)
        for head, value in evaluate(model, tset[test_idx]).items():
            rows.append({"fold": i, "head": head, "mae": value})
    return rows


def _fit_params(spec, X, Y, train_cfg, opt_cfg, normalize, seed_offset=0):
    cfg = train_cfg
    if seed_offset:
        cfg = nn.TrainConfig(train_cfg.epochs, train_cfg.batch_size, train_cfg.seed + seed_offset, train_cfg.shuffle, train_cfg.head_loss_weights)
    return nn.train(spec, X, Y, cfg, opt_cfg, normalize=normalize)


def fm_mae(fm, tset):
    X, Y = fm.xy(tset)
    return nn.mae(fm.params.predict(X), Y, fm.spec.head_slices, fm.spec.head_periods)


def train_fm(fm, tset, train_cfg, opt_cfg, kfold=5, normalize=False):
    """Cross-validate (``kfold`` None skips it) and fit a final model on all data.

    Returns ``(trained_fm, CvReport)``.
    """
    _check_schema(fm, tset)
    spec = fm.spec

    def fit(train_set, fold):
        X, Y = fm.xy(train_set)
        params, _ = _fit_params(spec, X, Y, train_cfg, opt_cfg, normalize, seed_offset=1000 * (fold + 1))
        return ForwardModel(fm.state_schema, fm.action_schema, params)

    report = CvReport()
    if kfold:
        report.rows = cross_validate(fit, fm_mae, tset, kfold, train_cfg.seed)
    X, Y = fm.xy(tset)
    params, report.history = _fit_params(spec, X, Y, train_cfg, opt_cfg, normalize)
    return ForwardModel(fm.state_schema, fm.action_schema, params), report


def _canonical(fm, S):
    """Bring predicted angles back into the range the simulator reports."""
    slices = fm.spec.head_slices
    for name, period in fm.spec.head_periods.items():
        S[..., slices[name]] = nn.wrap(S[..., slices[name]], period)
    return S


def mental_rollout(fm, s0, actions):
    """Chained prediction ``s_hat(t) = FM(s_hat(t-1), a(t-1))``; returns ``(T, dim s)``."""
    s = np.asarray(s0, dtype=float)
    out = np.empty((len(actions), fm.n_state))
    for t, a in enumerate(actions):
        a = np.asarray(a, dtype=float)
        if a.shape != (fm.action_schema.dim,):
            raise DataError(f"action at step {t} has shape {a.shape}, expected ({fm.action_schema.dim},)")
        s = _canonical(fm, fm.predict(s, a))
        out[t] = s
    return out


def _batched_rollout(fm, S0, A):
    """Rollouts for a batch: ``S0`` (N, n), ``A`` (N, T, m) -> (N, T, n)."""
    N, T = A.shape[:2]
    out = np.empty((N, T, fm.n_state))
    s = S0
    for t in range(T):
        s = _canonical(fm, fm.predict(s, A[:, t]))
        out[:, t] = s
    return out


def trajectories_from_set(tset, horizon, stride=None):
    """Non-overlapping windows of ``horizon`` consecutive transitions within one episode.

    Returns ``(states, actions)`` shaped ``(N, horizon + 1, n)`` and ``(N, horizon, m)``.
    """
    stride = stride or horizon
    starts = []
    i, n = 0, len(tset)
    while i + horizon <= n:
        j = slice(i, i + horizon)
        same_ep = np.all(tset.episode[j] == tset.episode[i])
        consecutive = np.all(np.diff(tset.step[j]) == 1)
        chained = np.array_equal(tset.S[i + 1 : i + horizon], tset.S_next[i : i + horizon - 1])
        if same_ep and consecutive and chained:
            starts.append(i)
            i += stride
        else:
            i += 1
    if not starts:
        return np.zeros((0, horizon + 1, tset.S.shape[1])), np.zeros((0, horizon, tset.A.shape[1]))
    idx = np.array(starts)[:, None] + np.arange(horizon)[None, :]
    states = np.concatenate([tset.S[idx], tset.S_next[idx[:, -1]][:, None]], axis=1)
    return states, tset.A[idx]


@dataclass
class RolloutResult:
    """Per-step MAE statistics; ``mean[name][t-1]`` is the mean MAE at ``t`` steps ahead."""

    horizon: int
    mean: dict
    std: dict
    n_trajectories: int
    skipped: int = 0

    def rows(self):
        for name in self.mean:
            for t in range(self.horizon):
                yield {"step": t + 1, "subvector": name, "mae_mean": self.mean[name][t], "mae_std": self.std[name][t]}


def eval_rollout(fm, states, actions, horizon, subvectors=None):
    """Mean and std across trajectories of the per-subvector rollout MAE.

    ``states`` is ``(N, L+1, n)`` and ``actions`` ``(N, L, m)``; trajectories
    shorter than ``horizon`` are skipped and counted.
    """
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float)
    skipped = 0
    if actions.shape[1] < horizon:
        skipped = len(states)
        states = np.zeros((0, horizon + 1, fm.n_state))
        actions = np.zeros((0, horizon, fm.action_schema.dim))
    names = subvectors or fm.state_schema.names
    pred = _batched_rollout(fm, states[:, 0], actions[:, :horizon]) if len(states) else np.zeros((0, horizon, fm.n_state))
    err = pred - states[:, 1 : horizon + 1]
    slices = fm.spec.head_slices
    for name, period in fm.spec.head_periods.items():
        err[..., slices[name]] = nn.wrap(err[..., slices[name]], period)
    err = np.abs(err)
    mean, std = {}, {}
    for name in names:
        sl = fm.state_schema.slice_of(name)
        per_traj = err[:, :, sl].mean(axis=2)
        mean[name] = per_traj.mean(axis=0) if len(per_traj) else np.full(horizon, np.nan)
        std[name] = per_traj.std(axis=0) if len(per_traj) else np.full(horizon, np.nan)
    return RolloutResult(horizon, mean, std, len(states), skipped)


# ---------------------------------------------------------------- inverse models


@dataclass
class InverseModel:
    """An inverse-model network.  ``role`` is one of ``im-mono``, ``im-pre``, ``im-base``."""

    role: str
    state_schema: Schema
    action_schema: Schema
    params: nn.MlpParams

    @property
    def spec(self):
        return self.params.spec

    def features(self, S, S_next, theta_next=None):
        stripped, _ = strip_theta_next(S_next, self.state_schema)
        parts = [np.atleast_2d(S), np.atleast_2d(stripped)]
        if self.role == "im-base":
            parts.append(np.atleast_2d(theta_next))
        return np.hstack(parts)

    def predict(self, S, S_next, theta_next=None):
        return self.params.predict(self.features(S, S_next, theta_next))


def _im_spec(state_schema, action_schema, role, hidden, activation):
    if "joints" not in state_schema:
        raise SchemaError(f"schema {state_schema.tag} has no 'joints' subvector")
    n, nj = state_schema.dim, state_schema.segment("joints").dims
    in_dim = 2 * n - nj + (nj if role == "im-base" else 0)
    heads = (nn.Head("theta_next", nj),) if role == "im-pre" else action_heads(action_schema)
    return nn.MlpSpec(in_dim, tuple(hidden), heads, activation)


def _theta_next(tset):
    return tset.S_next[:, tset.state_schema.slice_of("joints")]


def _im_target(role, tset):
    return _theta_next(tset) if role == "im-pre" else tset.A


def im_mae(model, tset, theta_next=None):
    """Per-head MAE; the base model reads ``theta_next`` (true values by default)."""
    if model.role == "im-base" and theta_next is None:
        theta_next = _theta_next(tset)
    pred = model.predict(tset.S, tset.S_next, theta_next)
    return nn.mae(pred, _im_target(model.role, tset), model.spec.head_slices)


def _train_im(role, tset, train_cfg, opt_cfg, hidden, kfold, normalize, activation="tanh"):
    # strip_theta_next raises on schemas without joints
    strip_theta_next(tset.S_next[:0], tset.state_schema)
    spec = _im_spec(tset.state_schema, tset.action_schema, role, hidden, activation)
    shell = InverseModel(role, tset.state_schema, tset.action_schema, nn.mlp_init(spec, 0))

    def fit(train_set, fold):
        X = shell.features(train_set.S, train_set.S_next, _theta_next(train_set))
        params, _ = _fit_params(spec, X, _im_target(role, train_set), train_cfg, opt_cfg, normalize, 1000 * (fold + 1))
        return InverseModel(role, tset.state_schema, tset.action_schema, params)

    report = CvReport()
    if kfold:
        report.rows = cross_validate(fit, im_mae, tset, kfold, train_cfg.seed)
    X = shell.features(tset.S, tset.S_next, _theta_next(tset))
    params, report.history = _fit_params(spec, X, _im_target(role, tset), train_cfg, opt_cfg, normalize)
    return InverseModel(role, tset.state_schema, tset.action_schema, params), report


def train_im_monolithic(tset, train_cfg, opt_cfg, hidden=MONO_HIDDEN, kfold=None, normalize=False, activation="tanh"):
    """``[s(t), s'(t+1)] -> a(t)``; one head per action subvector."""
    return _train_im("im-mono", tset, train_cfg, opt_cfg, hidden, kfold, normalize, activation)


def train_pre_network(tset, train_cfg, opt_cfg, hidden=PRE_HIDDEN, kfold=None, normalize=False, activation="tanh"):
    """``[s(t), s'(t+1)] -> theta(t+1)``."""
    return _train_im("im-pre", tset, train_cfg, opt_cfg, hidden, kfold, normalize, activation)


def train_base_im(tset, train_cfg, opt_cfg, hidden=BASE_HIDDEN, kfold=None, normalize=False, activation="tanh"):
    """``[s(t), s'(t+1), theta(t+1)] -> a(t)`` trained on the true ``theta(t+1)``."""
    return _train_im("im-base", tset, train_cfg, opt_cfg, hidden, kfold, normalize, activation)


@dataclass
class ImAssembly:
    """Pre-network feeding its ``theta(t+1)`` estimate into the base model.  Never trained."""

    pre: InverseModel
    base: InverseModel

    def __post_init__(self):
        if self.pre.role != "im-pre" or self.base.role != "im-base":
            raise ConfigError("assemble() needs an im-pre and an im-base model")
        nj = self.base.state_schema.segment("joints").dims
        if self.pre.spec.output_dim != nj or self.pre.state_schema != self.base.state_schema:
            raise SchemaError(
                f"pre-network output ({self.pre.spec.output_dim}) does not fit the base model's theta slot ({nj})"
            )

    def predict(self, S, S_next):
        theta_hat = self.pre.predict(S, S_next)
        return self.base.predict(S, S_next, theta_hat)


def assemble(pre, base):
    return ImAssembly(pre, base)


def assembly_mae(assembly, tset):
    pred = assembly.predict(tset.S, tset.S_next)
    return nn.mae(pred, tset.A, assembly.base.spec.head_slices)


def eval_theta_substitution(base, tset, mode, seed=0, reference=None):
    """Base-model MAE when ``theta(t+1)`` is replaced by zeros or by values
    drawn per coordinate from the empirical ``theta(t+1)`` of ``reference``
    (defaults to ``tset``)."""
    n = len(tset)
    nj = base.state_schema.segment("joints").dims
    if mode == "zeros":
        theta = np.zeros((n, nj))
    elif mode == "sampled":
        pool = _theta_next(reference if reference is not None else tset)
        rng = np.random.default_rng(seed)
        theta = np.column_stack([pool[rng.integers(0, len(pool), n), i] for i in range(nj)])
    else:
        raise ConfigError(f"unknown substitution mode {mode!r}")
    return im_mae(base, tset, theta)


def save(path, model, **meta):
    """Persist any model of this module with its role and schema tags."""
    extra = {
        "state_schema": model.state_schema.to_dict(),
        "action_schema": model.action_schema.to_dict(),
        "schema_hash": model.state_schema.digest() + model.action_schema.digest(),
    }
    extra.update(meta)
    nn.save_model(path, model.params, role=model.role, **extra)


def load(path):
    params, doc = nn.load_model(path)
    meta = doc.get("meta", {})
    try:
        ss = Schema.from_dict(meta["state_schema"])
        acs = Schema.from_dict(meta["action_schema"])
    except KeyError as exc:
        raise DataError(f"{path}: model file lacks schema metadata") from exc
    role = doc.get("role")
    if role == "fm":
        return ForwardModel(ss, acs, params)
    if role in ("im-mono", "im-pre", "im-base"):
        return InverseModel(role, ss, acs, params)
    raise DataError(f"{path}: unknown model role {role!r}")
