"""Shapley-value attributions for the forward model.

Three estimators share one value function: a coalition's value is the model
output averaged over background rows, with the features outside the
coalition taken from the background row (interventional replacement).

* :func:`exact_shapley` enumerates all coalitions (the reference).
* :func:`kernel_shap` solves the Shapley-kernel weighted least squares problem
  with the efficiency constraint eliminated.
* :func:`deep_shap` backpropagates DeepLIFT rescale multipliers through the
  tanh network against every background row and averages.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from math import comb, factorial

import numpy as np

from .errors import AttributionError

MAX_EXACT_FEATURES = 20
RESCALE_EPS = 1e-7


def _as_fn(model_fn):
    def f(X):
        Y = np.asarray(model_fn(X), dtype=float)
        return Y[:, None] if Y.ndim == 1 else Y

    return f


def _prepare(x, background):
    x = np.asarray(x, dtype=float).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if len(bg) < 1:
        raise AttributionError("background needs at least one row")
    if bg.shape[1] != x.size:
        raise AttributionError(f"background has {bg.shape[1]} features, instance has {x.size}")
    return x, bg


def _pick(phi, output_index):
    """``phi`` is (n_out, M); select one output row when asked."""
    return phi if output_index is None else phi[output_index]


def coalition_values(f, x, bg, Z, chunk=1 << 16):
    """``v(z)`` for each boolean coalition row of ``Z``; returns (len(Z), n_out)."""
    Z = np.asarray(Z, dtype=bool)
    B = len(bg)
    out = []
    step = max(1, chunk // B)
    for start in range(0, len(Z), step):
        z = Z[start : start + step]
        X = np.where(z[:, None, :], x[None, None, :], bg[None, :, :]).reshape(-1, x.size)
        out.append(f(X).reshape(len(z), B, -1).mean(axis=1))
    return np.concatenate(out)


def _all_masks(M):
    codes = np.arange(1 << M)
    return ((codes[:, None] >> np.arange(M)[None, :]) & 1).astype(bool)


def exact_shapley(model_fn, x, background, output_index=None):
    """Shapley values by enumerating all ``2^M`` coalitions.

    Returns shape ``(M,)`` for a given ``output_index`` and ``(n_out, M)`` otherwise.
    """
    x, bg = _prepare(x, background)
    M = x.size
    if M > MAX_EXACT_FEATURES:
        raise AttributionError(f"enumeration too large: {M} features (limit {MAX_EXACT_FEATURES})")
    f = _as_fn(model_fn)
    v = coalition_values(f, x, bg, _all_masks(M))
    sizes = np.array([bin(c).count("1") for c in range(1 << M)])
    weight = np.array([factorial(s) * factorial(M - s - 1) / factorial(M) if s < M else 0.0 for s in sizes])
    codes = np.arange(1 << M)
    phi = np.zeros((v.shape[1], M))
    for i in range(M):
        without = codes[(codes >> i) & 1 == 0]
        phi[:, i] = (weight[without][:, None] * (v[without | (1 << i)] - v[without])).sum(axis=0)
    return _pick(phi, output_index)


def shapley_kernel_weight(M, size):
    """Shapley kernel ``(M-1) / (C(M, s) s (M - s))`` for a coalition of ``size`` features."""
    return (M - 1) / (comb(M, size) * size * (M - size))


def _size_allocation(M, budget):
    """Split ``budget`` over coalition sizes 1..M-1 proportionally to kernel mass,
    promoting sizes whose share covers every coalition to full enumeration."""
    sizes = list(range(1, M))
    mass = {s: (M - 1) / (s * (M - s)) for s in sizes}
    full, left = [], budget
    open_sizes = sizes[:]
    changed = True
    while changed and open_sizes:
        changed = False
        total = sum(mass[s] for s in open_sizes)
        for s in list(open_sizes):
            if left * mass[s] / total >= comb(M, s):
                full.append(s)
                open_sizes.remove(s)
                left -= comb(M, s)
                changed = True
                break
    total = sum(mass[s] for s in open_sizes) or 1.0
    sampled = {s: max(1, int(left * mass[s] / total)) for s in open_sizes}
    return sorted(full), sampled, mass


def _coalitions(M, budget, rng):
    """Coalition masks and regression weights, exact enumeration when affordable."""
    if (1 << M) - 2 <= budget:
        Z = _all_masks(M)[1:-1]
        s = Z.sum(axis=1)
        return Z, np.array([shapley_kernel_weight(M, k) for k in s])
    full, sampled, mass = _size_allocation(M, budget)
    masks, weights = [], []
    for s in full:
        for c in combinations(range(M), s):
            z = np.zeros(M, bool)
            z[list(c)] = True
            masks.append(z)
            weights.append(shapley_kernel_weight(M, s))
    for s, n in sampled.items():
        seen = set()
        while len(seen) < n:
            seen.add(tuple(sorted(rng.choice(M, size=s, replace=False))))
        for c in sorted(seen):
            z = np.zeros(M, bool)
            z[list(c)] = True
            masks.append(z)
            weights.append(mass[s] / n)
    return np.array(masks), np.array(weights)


def kernel_shap(model_fn, x, background, output_index=None, coalition_budget=2048, seed=0):
    """Kernel SHAP with the efficiency constraint ``sum(phi) = f(x) - E_bg f``.

    Uses every proper coalition when ``2^M - 2 <= coalition_budget`` (the
    result is then the exact Shapley value), otherwise a size-stratified
    sample.
    """
    x, bg = _prepare(x, background)
    M = x.size
    if M < 2:
        raise AttributionError("kernel_shap needs at least two features")
    f = _as_fn(model_fn)
    base = f(bg).mean(axis=0)
    delta = f(x[None])[0] - base
    Z, w = _coalitions(M, coalition_budget, np.random.default_rng(seed))
    y = coalition_values(f, x, bg, Z) - base
    # phi_M = delta - sum(phi_1..M-1)
    Zf = Z.astype(float)
    A = Zf[:, :-1] - Zf[:, -1:]
    b = y - Zf[:, -1:] * delta[None, :]
    sw = np.sqrt(w)[:, None]
    sol, _, rank, _ = np.linalg.lstsq(A * sw, b * sw, rcond=None)
    if rank < M - 1:
        raise AttributionError("degenerate coalition sample (increase the coalition budget)")
    phi = np.vstack([sol, delta[None, :] - sol.sum(axis=0, keepdims=True)]).T
    return _pick(phi, output_index)


def _rescale(act, u, u0, h, h0):
    du = u - u0
    small = np.abs(du) <= RESCALE_EPS
    slope = (h - h0) / np.where(small, 1.0, du)
    if act == "tanh":
        deriv = 1.0 - h * h
    else:
        deriv = (u > 0).astype(float)
    return np.where(small, deriv, slope)


def _hidden_acts(params, Xn):
    pre, post = [], []
    h = Xn
    for W, b in zip(params.weights[: params.n_hidden], params.biases[: params.n_hidden]):
        u = h @ W.T + b
        h = np.tanh(u) if params.spec.activation == "tanh" else np.maximum(u, 0.0)
        pre.append(u)
        post.append(h)
    return pre, post


def deep_shap(params, x, background, output_index=None):
    """DeepLIFT rescale attributions averaged over background rows.

    ``params`` is an :class:`armcausal.nn.MlpParams`.  Returns ``(M,)`` for a
    given ``output_index`` and ``(n_out, M)`` otherwise.
    """
    return _pick(deep_shap_batch(params, np.asarray(x, dtype=float)[None], background)[0], output_index)


def deep_shap_batch(params, X, background):
    """Deep SHAP for every row of ``X``; returns ``(N, n_out, M)``."""
    act = params.spec.activation
    if act not in ("tanh", "relu"):
        raise AttributionError(f"unsupported activation {act!r}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, bg = _prepare(X[0], background)
    nh = params.n_hidden
    W_out = np.vstack(params.weights[nh:])
    Xn, Bn = params.normalize(X), params.normalize(bg)
    pre_b, post_b = _hidden_acts(params, Bn)
    pre_x, post_x = _hidden_acts(params, Xn)
    scale = None if params.input_scale is None else 1.0 / params.input_scale
    out = np.empty((len(X), W_out.shape[0], X.shape[1]))
    for n in range(len(X)):
        G = np.broadcast_to(W_out, (len(bg),) + W_out.shape)
        for k in range(nh - 1, -1, -1):
            D = _rescale(act, pre_x[k][n], pre_b[k], post_x[k][n], post_b[k])
            G = (G * D[:, None, :]) @ params.weights[k]
        if scale is not None:
            G = G * scale
        out[n] = (G * (X[n] - bg)[:, None, :]).mean(axis=0)
    return out


# ------------------------------------------------------------- dataset level


@dataclass
class AttributionTensor:
    """``phi[instance, output_feature, input_feature]`` with the instance inputs.

    ``columns`` maps the last axis of ``phi`` back to input-vector indices.
    """

    phi: np.ndarray
    inputs: np.ndarray
    input_labels: list
    output_labels: list
    columns: np.ndarray
    method: str = "deep"
    base_values: np.ndarray | None = None
    outputs: np.ndarray | None = None

    @property
    def labels(self):
        return [self.input_labels[c] for c in self.columns]

    def local_accuracy_error(self):
        """Max ``|sum(phi) - (f(x) - E_bg f)|``; only valid for full-input tensors."""
        if self.outputs is None or len(self.columns) != len(self.input_labels):
            raise AttributionError("local accuracy needs a full-input tensor with recorded outputs")
        return float(np.max(np.abs(self.phi.sum(axis=2) - (self.outputs - self.base_values[None, :]))))


def sample_rows(n_rows, n, seed):
    n = min(n, n_rows)
    return np.sort(np.random.default_rng(seed).choice(n_rows, size=n, replace=False))


def attribute_dataset(fm, instances, background, method="deep", scope="actions-only", coalition_budget=2048, seed=0):
    """Attributions for every state output of ``fm`` over a batch of input rows.

    ``instances`` and ``background`` are full FM input rows ``[s, a]``.  The
    game is always played over all inputs; ``scope='actions-only'`` keeps just
    the action columns of the result.
    """
    X = np.atleast_2d(np.asarray(instances, dtype=float))
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    d = fm.spec.input_dim
    if X.shape[1] != d or bg.shape[1] != d:
        raise AttributionError(f"inputs must have {d} columns to match the forward model")
    if scope not in ("actions-only", "all-inputs"):
        raise AttributionError(f"unknown scope {scope!r}")
    fn = fm.params.predict
    if method == "deep":
        phi = deep_shap_batch(fm.params, X, bg)
    elif method == "kernel":
        phi = np.stack([kernel_shap(fn, x, bg, None, coalition_budget, seed) for x in X])
    elif method == "exact":
        phi = np.stack([exact_shapley(fn, x, bg) for x in X])
    else:
        raise AttributionError(f"unknown attribution method {method!r}")
    n_s = fm.state_schema.dim
    columns = np.arange(n_s, d) if scope == "actions-only" else np.arange(d)
    return AttributionTensor(
        phi=phi[:, :, columns],
        inputs=X,
        input_labels=list(fm.input_labels),
        output_labels=list(fm.output_labels),
        columns=columns,
        method=method,
        base_values=fn(bg).mean(axis=0),
        outputs=fn(X),
    )


@dataclass
class GlobalImportance:
    """``matrix[input_feature, output_feature]`` = mean over instances of ``|phi|``."""

    matrix: np.ndarray
    row_labels: list
    col_labels: list

    def column_normalized(self):
        peak = self.matrix.max(axis=0, keepdims=True)
        return GlobalImportance(self.matrix / np.where(peak > 0, peak, 1.0), self.row_labels, self.col_labels)

    def cell(self, row, col):
        r = self.row_labels.index(row) if isinstance(row, str) else row
        c = self.col_labels.index(col) if isinstance(col, str) else col
        return float(self.matrix[r, c])


def aggregate_global(tensor):
    if tensor.phi.size == 0 or len(tensor.phi) == 0:
        raise AttributionError("empty attribution tensor")
    return GlobalImportance(np.abs(tensor.phi).mean(axis=0).T, tensor.labels, list(tensor.output_labels))


@dataclass
class PdpSeries:
    input_label: str
    output_label: str
    values: np.ndarray
    phi: np.ndarray


def _resolve(labels, key, what):
    if isinstance(key, str):
        if key not in labels:
            raise AttributionError(f"unknown {what} feature {key!r}")
        return labels.index(key)
    if not 0 <= key < len(labels):
        raise AttributionError(f"{what} index {key} out of range")
    return int(key)


def pdp_series(tensor, input_feature, output_feature):
    """(input value, contribution) per instance for one input/output pair."""
    i = _resolve(tensor.labels, input_feature, "input")
    k = _resolve(tensor.output_labels, output_feature, "output")
    return PdpSeries(tensor.labels[i], tensor.output_labels[k], tensor.inputs[:, tensor.columns[i]].copy(), tensor.phi[:, k, i].copy())


@dataclass
class RelevanceRow:
    feature: str
    max_attribution: float
    prunable: bool


def relevance_report(importance, action_rows=None, threshold_fraction=0.02):
    """Flag state features no action row reaches ``threshold_fraction`` of the
    action submatrix maximum.  Sorted by attribution, largest first."""
    if not 0 < threshold_fraction < 1:
        raise AttributionError("threshold_fraction must lie in (0, 1)")
    rows = range(len(importance.row_labels)) if action_rows is None else [
        _resolve(importance.row_labels, r, "action") for r in action_rows
    ]
    sub = importance.matrix[list(rows)]
    peak = sub.max()
    col_max = sub.max(axis=0)
    report = [
        RelevanceRow(label, float(v), bool(v < threshold_fraction * peak))
        for label, v in zip(importance.col_labels, col_max)
    ]
    return sorted(report, key=lambda r: -r.max_attribution)


# ------------------------------------------------------------------ CSV output


def _fmt(v):
    return repr(float(v))


def write_phi_csv(path, tensor):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "output", "input", "phi", "input_value"])
        for n in range(tensor.phi.shape[0]):
            for k, out_label in enumerate(tensor.output_labels):
                for i, c in enumerate(tensor.columns):
                    w.writerow([n, out_label, tensor.input_labels[c], _fmt(tensor.phi[n, k, i]), _fmt(tensor.inputs[n, c])])


def write_global_csv(path, importance):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input"] + list(importance.col_labels))
        for label, row in zip(importance.row_labels, importance.matrix):
            w.writerow([label] + [_fmt(v) for v in row])


def read_global_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return GlobalImportance(np.array([[float(v) for v in r[1:]] for r in rows[1:]]), [r[0] for r in rows[1:]], rows[0][1:])


def write_pdp_csv(path, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([series.input_label, f"phi_{series.output_label}"])
        for x, p in zip(series.values, series.phi):
            w.writerow([_fmt(x), _fmt(p)])


def read_pdp_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def write_relevance_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state_feature", "max_action_attribution", "prunable"])
        for r in report:
            w.writerow([r.feature, _fmt(r.max_attribution), int(r.prunable)])
