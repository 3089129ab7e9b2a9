"""Pass/fail checks that summarize a pipeline run.

Each function returns a :class:`Check`; ``value`` is the measured quantity
and ``limit`` the bound it is compared against.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import attribution as attr
from . import nn


@dataclass
class Check:
    key: int
    name: str
    passed: bool | None
    value: float | None = None
    limit: float | None = None
    detail: str = ""

    @property
    def verdict(self):
        return {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]

    def line(self):
        return f"[{self.verdict}] {self.key:>2}. {self.name}: {self.detail}"

    def to_dict(self):
        d = asdict(self)
        d["verdict"] = self.verdict
        return d


def _rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))))


def _random_net(rng, max_width=16, max_layers=4):
    hidden = tuple(int(w) for w in rng.integers(1, max_width + 1, size=int(rng.integers(0, max_layers))))
    heads = tuple((f"h{i}", int(rng.integers(1, 5))) for i in range(int(rng.integers(1, 3))))
    spec = nn.MlpSpec(int(rng.integers(1, max_width + 1)), hidden, heads)
    params = nn.mlp_init(spec, int(rng.integers(1 << 31)))
    for b in params.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    return params


def finite_difference_error(params, X, U, h=1e-6):
    """Largest relative gap between analytic and central-difference gradients of ``sum(f(X) * U)``."""
    grads, dX = nn.mlp_backward(params, X, U)

    def loss():
        return float(np.sum(params.predict(X) * U))

    worst = 0.0
    for arr, g in list(zip(params.arrays(), grads.arrays())) + [(X, dX)]:
        num = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            down = loss()
            arr[idx] = old
            num[idx] = (up - down) / (2 * h)
        worst = max(worst, _rel_err(g, num))
    return worst


def check_gradients(n_nets=50, seed=0, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        p = _random_net(rng)
        X = rng.normal(size=(3, p.spec.input_dim))
        U = rng.normal(size=(3, p.spec.output_dim))
        worst = max(worst, finite_difference_error(p, X, U))
    return Check(1, "gradient correctness", worst < tol, worst, tol, f"max rel. error {worst:.2e} over {n_nets} nets (< {tol:g})")


def check_shapley_oracle(n_models=20, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        spec = nn.MlpSpec(6, (int(rng.integers(2, 9)),), (("y", 2),))
        p = nn.mlp_init(spec, int(rng.integers(1 << 31)))
        x = rng.normal(size=6)
        bg = rng.normal(size=(8, 6))
        exact = attr.exact_shapley(p.predict, x, bg)
        kernel = attr.kernel_shap(p.predict, x, bg)
        worst = max(worst, float(np.max(np.abs(exact - kernel))))
    return Check(2, "Shapley oracle equivalence", worst < tol, worst, tol, f"max |kernel - exact| {worst:.2e} on {n_models} models (< {tol:g})")


def check_local_accuracy(tensor, tol=1e-9):
    err = tensor.local_accuracy_error()
    n = tensor.phi.shape[0]
    return Check(3, "Deep SHAP local accuracy", err < tol, err, tol, f"max |sum(phi) - (f(x) - E f)| {err:.2e} over {n} instances (< {tol:g})")


def check_linear_closed_form(seed=0, tol=1e-9):
    rng = np.random.default_rng(seed)
    spec = nn.MlpSpec(5, (), (("y", 1),))
    w = rng.normal(size=5)
    p = nn.MlpParams(spec, [w[None, :]], [np.array([0.3])])
    x = rng.normal(size=5)
    bg = rng.normal(size=(10, 5))
    want = w * (x - bg.mean(axis=0))
    got = {
        "exact": attr.exact_shapley(p.predict, x, bg, 0),
        "kernel": attr.kernel_shap(p.predict, x, bg, 0),
        "deep": attr.deep_shap(p, x, bg, 0),
    }
    worst = max(float(np.max(np.abs(v - want))) for v in got.values())
    return Check(4, "linear closed form", worst < tol, worst, tol, f"max deviation {worst:.2e} across exact/kernel/deep (< {tol:g})")


def check_fm_quality(eff, joints, effector_tol=0.03, joints_tol=0.01):
    ok = eff < effector_tol and joints < joints_tol
    return Check(
        5,
        "kinematics FM quality",
        ok,
        joints,
        joints_tol,
        f"CV effector MAE {eff:.4g} m (< {effector_tol:g}), joints MAE {joints:.4g} rad (< {joints_tol:g})",
    )


def check_im_ordering(m):
    """``m`` holds the held-out MAEs ``base``, ``assembly``, ``mono``, ``zeros``, ``sampled``."""
    base, asm, mono = m["base"], m["assembly"], m["mono"]
    parts = {
        "base < 0.2 x assembly": base < 0.2 * asm,
        "|assembly - mono| < 0.5 x max": abs(asm - mono) < 0.5 * max(asm, mono),
        "zeros > 3 x assembly": m["zeros"] > 3 * asm,
        "sampled > 3 x assembly": m["sampled"] > 3 * asm,
    }
    failed = [k for k, v in parts.items() if not v]
    detail = ", ".join(f"{k} {m[k]:.4g}" for k in ("base", "assembly", "mono", "zeros", "sampled"))
    if failed:
        detail += "; failed: " + "; ".join(failed)
    return Check(6, "inverse model ordering", not failed, asm, None, detail)


def rollout_inversions(curve):
    """Steps where the curve decreases, as (index, relative drop)."""
    return [(t, (curve[t - 1] - curve[t]) / curve[t - 1]) for t in range(1, len(curve)) if curve[t] < curve[t - 1]]


def check_rollout_shape(joint_curve, n_trajectories):
    curve = np.asarray(joint_curve, dtype=float)
    inv = rollout_inversions(curve)
    monotone = len(inv) == 0 or (len(inv) == 1 and inv[0][1] < 0.05)
    growth = curve[-1] / curve[0]
    ok = bool(monotone and growth > 2)
    return Check(
        7,
        "mental simulation shape",
        ok,
        growth,
        2.0,
        f"{len(inv)} inversion(s), MAE(t={len(curve)}) / MAE(t=1) = {growth:.3g} (> 2) on {n_trajectories} trajectories",
    )


def action_peak(importance):
    return float(importance.matrix.max())


def check_colour_irrelevance(importance, relevance, colour=("o_R", "o_G", "o_B"), frac=0.02):
    peak = action_peak(importance)
    cols = [importance.col_labels.index(c) for c in colour]
    worst = float(importance.matrix[:, cols].max())
    flags = {r.feature: r.prunable for r in relevance}
    all_flagged = all(flags.get(c, False) for c in colour)
    ratio = worst / peak if peak > 0 else np.inf
    return Check(
        8,
        "colour irrelevance",
        bool(ratio < frac and all_flagged),
        ratio,
        frac,
        f"max colour cell / peak = {ratio:.4f} (< {frac:g}), colour flagged prunable: {all_flagged}",
    )


def check_masked_joint(importance, row="a_6", frac=0.02):
    peak = action_peak(importance)
    ratio = float(importance.matrix[importance.row_labels.index(row)].max()) / peak if peak > 0 else np.inf
    return Check(9, "masked joint detection", ratio < frac, ratio, frac, f"{row} row max / peak = {ratio:.4f} (< {frac:g})")


def check_magnet_signature(importance, pdp_values, pdp_phi, factor=10.0):
    col = importance.col_labels.index("o_z")
    ranking = [importance.row_labels[i] for i in np.argsort(-importance.matrix[:, col], kind="stable")]
    rank = ranking.index("a_mgt") + 1
    v, phi = np.asarray(pdp_values), np.abs(np.asarray(pdp_phi))
    on, off = phi[v != 0], phi[v == 0]
    if on.size == 0 or off.size == 0:
        return Check(10, "magnet causal signature", False, None, factor, f"a_mgt rank {rank}; PDP lacks switch or idle samples")
    med = float(np.median(off))
    weakest = float(on.min())
    ok = rank <= 3 and weakest > factor * med
    return Check(
        10,
        "magnet causal signature",
        bool(ok),
        float(rank),
        3.0,
        f"a_mgt ranks {rank} for o_z; smallest |phi| at a_mgt=+-1 is {weakest:.3g} vs {factor:g} x median {med:.3g} at a_mgt=0 ({on.size} switch samples)",
    )


def check_determinism(digests, previous):
    if previous is None:
        return Check(11, "determinism", None, detail="needs a reference run (pipeline --compare DIR)")
    names = sorted(k for k in digests if k.endswith(".csv"))
    diff = [k for k in names if previous.get(k) != digests[k]]
    return Check(11, "determinism", not diff, float(len(diff)), 0.0, f"{len(names) - len(diff)}/{len(names)} CSV files byte-identical" + (f"; differing: {', '.join(diff)}" if diff else ""))


def check_datasets(results):
    """``results`` maps file name to ``(round_trip_ok, joint_identity_error)``."""
    bad = [k for k, (ok, err) in results.items() if not ok or err != 0.0]
    detail = ", ".join(f"{k}: identity error {err:.1e}" for k, (_, err) in results.items())
    return Check(12, "dataset round trip", not bad, float(len(bad)), 0.0, detail)
