"""Dense tanh networks with partitioned linear output heads.

The network family is deliberately narrow: an input layer, any number of
fully connected hidden layers sharing one activation, and a set of linear
heads that all read the last hidden layer.  Forward and backward passes are
written out by hand and operate on row-major batches ``(n_samples, dim)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, MalformedFileError, TrainingDivergedError

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class Head:
    """Output head.  A ``period`` marks angular outputs compared modulo that period."""

    name: str
    width: int
    activation: str = "linear"
    period: float | None = None


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a multi-head perceptron.

    ``hidden`` lists hidden layer widths (may be empty, in which case the heads
    read the input directly).  ``heads`` is an ordered sequence of
    :class:`Head` or ``(name, width)`` pairs; the concatenated network output
    follows head declaration order.
    """

    input_dim: int
    hidden: tuple = ()
    heads: tuple = ()
    activation: str = "tanh"

    def __post_init__(self):
        heads = tuple(h if isinstance(h, Head) else Head(*h) for h in self.heads)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if any(w < 1 for w in self.hidden):
            raise ConfigError(f"hidden widths must be >= 1, got {self.hidden}")
        if not heads:
            raise ConfigError("at least one output head is required")
        if any(h.width < 1 for h in heads):
            raise ConfigError("head widths must be >= 1")
        names = [h.name for h in heads]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate head names: {names}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unsupported hidden activation {self.activation!r}")
        if any(h.activation != "linear" for h in heads):
            raise ConfigError("output heads must be linear")
        if any(h.period is not None and not h.period > 0 for h in heads):
            raise ConfigError("head periods must be positive")

    @property
    def output_dim(self):
        return sum(h.width for h in self.heads)

    @property
    def head_names(self):
        return [h.name for h in self.heads]

    @property
    def head_slices(self):
        out, start = {}, 0
        for h in self.heads:
            out[h.name] = slice(start, start + h.width)
            start += h.width
        return out

    @property
    def head_periods(self):
        return {h.name: h.period for h in self.heads if h.period is not None}

    def layer_dims(self):
        """(fan_in, fan_out) of every hidden layer followed by every head."""
        dims, prev = [], self.input_dim
        for w in self.hidden:
            dims.append((prev, w))
            prev = w
        return dims + [(prev, h.width) for h in self.heads]

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden": [[w, self.activation] for w in self.hidden],
            "heads": [[h.name, h.width, h.activation] + ([h.period] if h.period else []) for h in self.heads],
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_dim=int(d["input_dim"]),
            hidden=tuple(int(w[0]) for w in d["hidden"]),
            heads=tuple(Head(str(h[0]), int(h[1]), *h[2:]) for h in d["heads"]),
            activation=d.get("activation", "tanh"),
        )


@dataclass
class MlpParams:
    """Weights of an :class:`MlpSpec` network.

    ``weights``/``biases`` hold the hidden layers first and then one entry per
    head.  Weight matrices are ``(fan_out, fan_in)``.  ``input_mean`` and
    ``input_scale`` implement the optional z-score input normalization.
    """

    spec: MlpSpec
    weights: list
    biases: list
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        dims = self.spec.layer_dims()
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ConfigError("parameter count does not match the spec")
        for W, b, (fi, fo) in zip(self.weights, self.biases, dims):
            if W.shape != (fo, fi) or b.shape != (fo,):
                raise ConfigError(f"bad layer shape {W.shape}/{b.shape}, expected {(fo, fi)}")

    @property
    def n_hidden(self):
        return len(self.spec.hidden)

    def arrays(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return MlpParams(
            self.spec,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            None if self.input_mean is None else self.input_mean.copy(),
            None if self.input_scale is None else self.input_scale.copy(),
        )

    def normalize(self, X):
        if self.input_mean is None:
            return X
        return (X - self.input_mean) / self.input_scale

    def predict(self, X):
        """Concatenated head outputs for a batch (or a single vector)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Y, _ = _forward(self, np.atleast_2d(X))
        return Y[0] if single else Y

    __call__ = predict


def zeros_like(params):
    return MlpParams(
        params.spec,
        [np.zeros_like(W) for W in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def mlp_init(spec, seed):
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def _act(name, u):
    if name == "tanh":
        return np.tanh(u)
    return np.maximum(u, 0.0)


def _act_grad(name, u, h):
    if name == "tanh":
        return 1.0 - h * h
    return (u > 0).astype(float)


def _forward(params, X):
    spec = params.spec
    if X.shape[1] != spec.input_dim:
        raise DataError(f"input has {X.shape[1]} features, network expects {spec.input_dim}")
    h = params.normalize(X)
    pre, post = [], [h]
    for W, b in zip(params.weights[: params.n_hidden], params.biases[: params.n_hidden]):
        u = h @ W.T + b
        h = _act(spec.activation, u)
        pre.append(u)
        post.append(h)
    outs = [h @ W.T + b for W, b in zip(params.weights[params.n_hidden :], params.biases[params.n_hidden :])]
    return np.concatenate(outs, axis=1), (pre, post)


def _backward(params, cache, dY):
    spec = params.spec
    pre, post = cache
    nh = params.n_hidden
    grads = zeros_like(params)
    h = post[-1]
    dh = np.zeros_like(h)
    for j, sl in enumerate(spec.head_slices.values()):
        g = dY[:, sl]
        grads.weights[nh + j] = g.T @ h
        grads.biases[nh + j] = g.sum(axis=0)
        dh += g @ params.weights[nh + j]
    for k in range(nh - 1, -1, -1):
        du = dh * _act_grad(spec.activation, pre[k], post[k + 1])
        grads.weights[k] = du.T @ post[k]
        grads.biases[k] = du.sum(axis=0)
        dh = du @ params.weights[k]
    if params.input_scale is not None:
        dh = dh / params.input_scale
    return grads, dh


def _as_head_matrix(spec, per_head, n):
    if isinstance(per_head, Mapping):
        missing = set(spec.head_names) - set(per_head)
        if missing:
            raise DataError(f"missing heads: {sorted(missing)}")
        cols = [np.asarray(per_head[h.name], dtype=float).reshape(n, h.width) for h in spec.heads]
        return np.concatenate(cols, axis=1)
    M = np.asarray(per_head, dtype=float).reshape(n, -1)
    if M.shape[1] != spec.output_dim:
        raise DataError(f"expected {spec.output_dim} output columns, got {M.shape[1]}")
    return M


def mlp_forward(params, x):
    """Per-head outputs as a dict ``{head_name: array}``."""
    x = np.asarray(x, dtype=float)
    Y, _ = _forward(params, np.atleast_2d(x))
    if x.ndim == 1:
        Y = Y[0]
    return {name: Y[..., sl] for name, sl in params.spec.head_slices.items()}


def mlp_backward(params, x, upstream):
    """Reverse-mode gradients of ``sum(outputs * upstream)``.

    Returns ``(grads, dx)`` where ``grads`` is an :class:`MlpParams` holding
    the gradient of every weight and bias and ``dx`` the input gradient.
    ``upstream`` may be a head-name mapping or a concatenated array.
    """
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    _, cache = _forward(params, X)
    try:
        dY = _as_head_matrix(params.spec, upstream, X.shape[0])
    except ValueError as exc:
        raise DataError(f"upstream gradient shape mismatch: {exc}") from exc
    grads, dX = _backward(params, cache, dY)
    return grads, (dX[0] if x.ndim == 1 else dX)


def wrap(d, period):
    """Map ``d`` into ``[-period/2, period/2)``."""
    half = 0.5 * period
    return np.mod(d + half, period) - half


def _residuals(pred, target, slices, periods):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    for name, period in (periods or {}).items():
        if name in slices:
            diff[..., slices[name]] = wrap(diff[..., slices[name]], period)
    return diff


def mse_per_head(pred, target, slices, periods=None):
    """Per-head mean squared error and the gradient w.r.t. ``pred``.

    ``slices`` maps head name to a column slice of ``pred``; heads listed in
    ``periods`` use the wrapped residual.
    """
    diff = _residuals(pred, target, slices, periods)
    grad = np.empty_like(diff)
    losses = {}
    for name, sl in slices.items():
        d = diff[..., sl]
        losses[name] = float(np.mean(d * d))
        grad[..., sl] = 2.0 * d / d.size
    return losses, grad


def total_loss(losses, weights):
    losses = list(losses.values()) if isinstance(losses, Mapping) else list(losses)
    weights = list(weights.values()) if isinstance(weights, Mapping) else list(weights)
    if len(losses) != len(weights):
        raise DataError("loss/weight length mismatch")
    return float(sum(w * l for w, l in zip(weights, losses)))


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("adam", "adamw"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.eta > 0:
            raise ConfigError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if not self.epsilon > 0 or self.weight_decay < 0:
            raise ConfigError("epsilon must be > 0 and weight decay >= 0")

    @property
    def decay(self):
        return self.weight_decay if self.kind == "adamw" else 0.0


@dataclass
class OptimizerState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def fresh(cls, params):
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def optimizer_step(params, grads, state, cfg):
    """One Adam/AdamW update, in place.  Returns ``(params, state)``."""
    g_all = grads.arrays() if isinstance(grads, MlpParams) else list(grads)
    for g in g_all:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    lam = cfg.decay
    for w, g, m, v in zip(params.arrays(), g_all, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if lam:
            w -= cfg.eta * lam * w
        w -= cfg.eta * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 256
    seed: int = 0
    shuffle: bool = True
    head_loss_weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for k, w in dict(self.head_loss_weights).items():
            if not np.isfinite(w) or w < 0:
                raise ConfigError(f"head loss weight for {k!r} must be finite and >= 0")

    def weights_for(self, spec):
        return {n: float(self.head_loss_weights.get(n, 1.0)) for n in spec.head_names}


def train(spec, X, Y, train_cfg, opt_cfg, params=None, normalize=False):
    """Mini-batch training of ``spec`` on inputs ``X`` and concatenated targets ``Y``.

    Returns ``(params, history)``; ``history`` has one dict per epoch with the
    sample-weighted mean total loss and each head's loss.
    """
    X = np.asarray(X, dtype=float)
    Y = _as_head_matrix(spec, Y, len(X)) if len(X) else np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise DataError("cannot train on an empty dataset")
    if X.shape[1] != spec.input_dim:
        raise DataError(f"inputs have {X.shape[1]} columns, spec expects {spec.input_dim}")
    if params is None:
        params = mlp_init(spec, train_cfg.seed)
        if normalize:
            scale = X.std(axis=0)
            params.input_mean = X.mean(axis=0)
            params.input_scale = np.where(scale > 1e-12, scale, 1.0)
    state = OptimizerState.fresh(params)
    weights = train_cfg.weights_for(spec)
    slices, periods = spec.head_slices, spec.head_periods
    rng = np.random.default_rng([train_cfg.seed, 1])
    n, bs = len(X), train_cfg.batch_size
    history = []
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n) if train_cfg.shuffle else np.arange(n)
        sums = dict.fromkeys(slices, 0.0)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            pred, cache = _forward(params, X[idx])
            losses, grad = mse_per_head(pred, Y[idx], slices, periods)
            for name in slices:
                grad[:, slices[name]] *= weights[name]
                sums[name] += losses[name] * len(idx)
            loss = total_loss(losses, weights)
            if not np.isfinite(loss):
                raise TrainingDivergedError("non-finite loss", epoch=epoch)
            total += loss * len(idx)
            grads, _ = _backward(params, cache, grad)
            try:
                optimizer_step(params, grads, state, opt_cfg)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), epoch=epoch) from None
        row = {"epoch": epoch, "total_loss": total / n}
        row.update({f"{k}_loss": s / n for k, s in sums.items()})
        history.append(row)
    return params, history


def kfold_split(n, k, seed):
    """``k`` disjoint, covering index arrays whose sizes differ by at most one."""
    if k < 2 or k > n:
        raise ConfigError(f"invalid split: need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def mae(pred, target, slices, periods=None):
    """Mean absolute error over samples and elements of every named slice."""
    err = np.abs(_residuals(pred, target, slices, periods))
    return {name: float(err[..., sl].mean()) for name, sl in slices.items()}


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


def save_model(path, params, role=None, **meta):
    """Write a self-describing JSON model file (shortest round-trip float repr)."""
    doc = {
        "format": "armcausal-mlp/1",
        "role": role,
        "spec": params.spec.to_dict(),
        "normalization": None
        if params.input_mean is None
        else {"mean": _floats(params.input_mean), "scale": _floats(params.input_scale)},
        "layers": [{"weight": _floats(W), "bias": _floats(b)} for W, b in zip(params.weights, params.biases)],
        "meta": meta,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(params, doc)``."""
    try:
        doc = json.loads(Path(path).read_text())
        spec = MlpSpec.from_dict(doc["spec"])
        norm = doc.get("normalization")
        params = MlpParams(
            spec,
            [np.array(l["weight"], dtype=float).reshape(fo, fi) for l, (fi, fo) in zip(doc["layers"], spec.layer_dims())],
            [np.array(l["bias"], dtype=float) for l in doc["layers"]],
            None if norm is None else np.array(norm["mean"], dtype=float),
            None if norm is None else np.array(norm["scale"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFileError(f"{path}: not a model file: {exc}") from exc
    return params, doc


def write_loss_history(path, history: Sequence[dict]):
    if not history:
        raise DataError("empty loss history")
    fields = list(history[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[f])) for f in fields[1:]])
