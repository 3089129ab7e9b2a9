import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armcausal import attribution as attr
from armcausal import nn
from armcausal.dataset import KIN_ACTION, KIN_STATE
from armcausal.errors import AttributionError
from armcausal.models import build_fm


def _mlp(n_in, hidden, n_out=2, seed=0):
    spec = nn.MlpSpec(n_in, hidden, (("y", n_out),))
    p = nn.mlp_init(spec, seed)
    rng = np.random.default_rng(seed + 1)
    for b in p.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    return p


def _linear(w, b=0.0):
    spec = nn.MlpSpec(len(w), (), (("y", 1),))
    return nn.MlpParams(spec, [np.asarray(w, float)[None, :]], [np.array([b])])


# ---------------------------------------------------------------- exact

def test_exact_two_feature_linear():
    phi = attr.exact_shapley(lambda X: 3 * X[:, 0] - 2 * X[:, 1], [1, 1], [[0, 0]], 0)
    np.testing.assert_allclose(phi, [3, -2], atol=1e-12)


def test_exact_zero_when_instance_is_background():
    p = _mlp(4, (5,))
    x = np.array([0.2, -1.0, 0.5, 0.3])
    assert np.all(attr.exact_shapley(p.predict, x, x[None, :]) == 0)


def test_exact_enumeration_guard():
    with pytest.raises(AttributionError):
        attr.exact_shapley(lambda X: X.sum(axis=1), np.zeros(21), np.zeros((1, 21)))


def test_background_dimension_mismatch():
    with pytest.raises(AttributionError):
        attr.exact_shapley(lambda X: X.sum(axis=1), np.zeros(3), np.zeros((2, 4)))


def test_exact_matches_textbook_interaction():
    # f = x0 * x1 with a zero baseline splits the product evenly
    phi = attr.exact_shapley(lambda X: X[:, 0] * X[:, 1], [2.0, 3.0], [[0.0, 0.0]], 0)
    np.testing.assert_allclose(phi, [3.0, 3.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_efficiency_exact_and_kernel(m, n_bg, seed):
    rng = np.random.default_rng(seed)
    p = _mlp(m, (4,), seed=seed)
    x, bg = rng.normal(size=m), rng.normal(size=(n_bg, m))
    want = p.predict(x[None])[0] - p.predict(bg).mean(axis=0)
    for phi in (attr.exact_shapley(p.predict, x, bg), attr.kernel_shap(p.predict, x, bg)):
        np.testing.assert_allclose(phi.sum(axis=1), want, atol=1e-10)


def test_symmetry_exact():
    spec = nn.MlpSpec(3, (4,), (("y", 1),))
    p = nn.mlp_init(spec, 3)
    p.weights[0][:, 1] = p.weights[0][:, 0]
    x = np.array([0.5, 0.5, 1.0])
    bg = np.array([[0.1, 0.1, 0.0], [-0.2, -0.2, 0.4]])
    phi = attr.exact_shapley(p.predict, x, bg, 0)
    assert phi[0] == pytest.approx(phi[1], abs=1e-14)


def test_dummy_feature():
    p = _mlp(5, (6, 4), seed=4)
    p.weights[0][:, 2] = 0.0
    rng = np.random.default_rng(0)
    x, bg = rng.normal(size=5), rng.normal(size=(7, 5))
    assert np.all(attr.exact_shapley(p.predict, x, bg)[:, 2] == 0)
    assert np.max(np.abs(attr.kernel_shap(p.predict, x, bg)[:, 2])) < 1e-12
    assert np.max(np.abs(attr.deep_shap(p, x, bg)[:, 2])) < 1e-12


# ---------------------------------------------------------------- kernel

def test_kernel_weight_value():
    assert attr.shapley_kernel_weight(4, 1) == pytest.approx(0.25)


@pytest.mark.parametrize("m", [3, 6, 8])
def test_kernel_full_enumeration_matches_exact(m):
    rng = np.random.default_rng(m)
    p = _mlp(m, (7,), seed=m)
    x, bg = rng.normal(size=m), rng.normal(size=(5, m))
    exact = attr.exact_shapley(p.predict, x, bg)
    kernel = attr.kernel_shap(p.predict, x, bg)
    assert np.max(np.abs(exact - kernel)) < 1e-6


def test_kernel_sampled_keeps_efficiency_and_is_seeded():
    m = 14
    rng = np.random.default_rng(1)
    p = _mlp(m, (8,), seed=2)
    x, bg = rng.normal(size=m), rng.normal(size=(3, m))
    a = attr.kernel_shap(p.predict, x, bg, coalition_budget=300, seed=5)
    b = attr.kernel_shap(p.predict, x, bg, coalition_budget=300, seed=5)
    np.testing.assert_array_equal(a, b)
    want = p.predict(x[None])[0] - p.predict(bg).mean(axis=0)
    np.testing.assert_allclose(a.sum(axis=1), want, atol=1e-10)
    exact = attr.exact_shapley(p.predict, x, bg)
    coarse = np.max(np.abs(a - exact))
    fine = np.max(np.abs(attr.kernel_shap(p.predict, x, bg, coalition_budget=8000, seed=5) - exact))
    assert fine < coarse
    assert fine < 0.1 * np.max(np.abs(exact))


def test_kernel_needs_two_features():
    with pytest.raises(AttributionError):
        attr.kernel_shap(lambda X: X[:, 0], [1.0], [[0.0]])


# ---------------------------------------------------------------- deep

def test_deep_single_tanh_unit():
    spec = nn.MlpSpec(1, (1,), (("y", 1),))
    p = nn.MlpParams(spec, [np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    assert p.predict(np.ones((1, 1)))[0, 0] == pytest.approx(0.761594, abs=1e-6)
    phi = attr.deep_shap(p, [1.0], [[0.0]], 0)
    assert phi[0] == pytest.approx(math.tanh(1.0), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.lists(st.integers(1, 9), max_size=3), st.integers(1, 5), st.integers(0, 10_000))
def test_deep_local_accuracy(m, hidden, n_bg, seed):
    rng = np.random.default_rng(seed)
    p = _mlp(m, tuple(hidden), n_out=3, seed=seed)
    X, bg = rng.normal(size=(4, m)), rng.normal(size=(n_bg, m))
    phi = attr.deep_shap_batch(p, X, bg)
    want = p.predict(X) - p.predict(bg).mean(axis=0)
    assert np.max(np.abs(phi.sum(axis=2) - want)) < 1e-9


def test_deep_zero_at_reference():
    p = _mlp(4, (6,), seed=9)
    x = np.array([0.3, -0.2, 0.9, 0.0])
    assert np.max(np.abs(attr.deep_shap(p, x, x[None]))) == 0.0


def test_all_methods_agree_on_linear_model():
    rng = np.random.default_rng(11)
    w = rng.normal(size=5)
    p = _linear(w, 0.4)
    x, bg = rng.normal(size=5), rng.normal(size=(9, 5))
    want = w * (x - bg.mean(axis=0))
    for phi in (
        attr.exact_shapley(p.predict, x, bg, 0),
        attr.kernel_shap(p.predict, x, bg, 0),
        attr.deep_shap(p, x, bg, 0),
    ):
        np.testing.assert_allclose(phi, want, atol=1e-9)


def test_deep_batch_matches_single():
    rng = np.random.default_rng(2)
    p = _mlp(4, (5, 3), seed=2)
    X, bg = rng.normal(size=(3, 4)), rng.normal(size=(4, 4))
    batch = attr.deep_shap_batch(p, X, bg)
    for n in range(3):
        np.testing.assert_allclose(batch[n], attr.deep_shap(p, X[n], bg), atol=1e-13)


def test_deep_relu_local_accuracy():
    spec = nn.MlpSpec(3, (6, 4), (("y", 2),), activation="relu")
    p = nn.mlp_init(spec, 5)
    rng = np.random.default_rng(5)
    X, bg = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    phi = attr.deep_shap_batch(p, X, bg)
    assert np.max(np.abs(phi.sum(axis=2) - (p.predict(X) - p.predict(bg).mean(axis=0)))) < 1e-9


# ---------------------------------------------------------------- dataset level

@pytest.fixture(scope="module")
def kin_fm():
    return build_fm(KIN_STATE, KIN_ACTION, (8,), seed=3)


def _rows(fm, n, seed):
    return np.random.default_rng(seed).normal(scale=0.5, size=(n, fm.spec.input_dim))


def test_attribute_dataset_shapes_and_slice(kin_fm):
    X, bg = _rows(kin_fm, 6, 0), _rows(kin_fm, 4, 1)
    full = attr.attribute_dataset(kin_fm, X, bg, "deep", "all-inputs")
    acts = attr.attribute_dataset(kin_fm, X, bg, "deep", "actions-only")
    assert full.phi.shape == (6, KIN_STATE.dim, KIN_STATE.dim + KIN_ACTION.dim)
    assert acts.phi.shape == (6, KIN_STATE.dim, KIN_ACTION.dim)
    np.testing.assert_array_equal(acts.phi, full.phi[:, :, KIN_STATE.dim :])
    assert acts.labels == list(KIN_ACTION.labels)
    assert full.local_accuracy_error() < 1e-9
    with pytest.raises(AttributionError):
        acts.local_accuracy_error()


def test_attribute_dataset_is_deterministic(kin_fm):
    X, bg = _rows(kin_fm, 2, 0), _rows(kin_fm, 3, 1)
    a = attr.attribute_dataset(kin_fm, X, bg, "kernel", coalition_budget=200, seed=4)
    b = attr.attribute_dataset(kin_fm, X, bg, "kernel", coalition_budget=200, seed=4)
    np.testing.assert_array_equal(a.phi, b.phi)


def test_attribute_dataset_errors(kin_fm):
    with pytest.raises(AttributionError):
        attr.attribute_dataset(kin_fm, np.zeros((1, 3)), np.zeros((1, 3)))
    X = _rows(kin_fm, 1, 0)
    with pytest.raises(AttributionError):
        attr.attribute_dataset(kin_fm, X, X, method="lime")
    with pytest.raises(AttributionError):
        attr.attribute_dataset(kin_fm, X, X, scope="states")


def _tensor(phi):
    phi = np.asarray(phi, float)
    n, k, i = phi.shape
    return attr.AttributionTensor(
        phi=phi,
        inputs=np.arange(n * i, dtype=float).reshape(n, i),
        input_labels=[f"a_{j}" for j in range(i)],
        output_labels=[f"s_{j}" for j in range(k)],
        columns=np.arange(i),
    )


def test_aggregate_global_rules():
    one = attr.aggregate_global(_tensor([[[1.0, -2.0]]]))
    np.testing.assert_array_equal(one.matrix, [[1.0], [2.0]])
    pm = attr.aggregate_global(_tensor([[[0.5, 0.0]], [[-0.5, 0.0]]]))
    assert pm.cell("a_0", "s_0") == 0.5
    base = _tensor(np.random.default_rng(0).normal(size=(3, 2, 2)))
    padded = _tensor(np.concatenate([base.phi, np.zeros((1, 2, 2))]))
    np.testing.assert_allclose(attr.aggregate_global(padded).matrix, attr.aggregate_global(base).matrix * 3 / 4)
    with pytest.raises(AttributionError):
        attr.aggregate_global(_tensor(np.zeros((0, 2, 2))))


def test_column_normalized():
    g = attr.GlobalImportance(np.array([[1.0, 0.0], [4.0, 0.0]]), ["a", "b"], ["x", "y"])
    np.testing.assert_array_equal(g.column_normalized().matrix, [[0.25, 0.0], [1.0, 0.0]])


def test_pdp_series_matches_global_cell():
    t = _tensor(np.random.default_rng(1).normal(size=(5, 3, 2)))
    s = attr.pdp_series(t, "a_1", "s_2")
    assert len(s.values) == 5
    np.testing.assert_array_equal(s.values, t.inputs[:, 1])
    assert abs(np.abs(s.phi).mean() - attr.aggregate_global(t).cell("a_1", "s_2")) < 1e-12
    with pytest.raises(AttributionError):
        attr.pdp_series(t, 5, 0)
    with pytest.raises(AttributionError):
        attr.pdp_series(t, "a_0", "nope")


def test_relevance_report():
    g = attr.GlobalImportance(np.array([[1.0, 0.01, 0.5], [0.2, 0.0, 0.3]]), ["a_0", "a_1"], ["x", "c", "y"])
    rep = attr.relevance_report(g, threshold_fraction=0.02)
    assert [r.feature for r in rep] == ["x", "y", "c"]
    assert {r.feature: r.prunable for r in rep} == {"x": False, "y": False, "c": True}
    uniform = attr.GlobalImportance(np.ones((2, 3)), ["a", "b"], ["x", "y", "z"])
    assert not any(r.prunable for r in attr.relevance_report(uniform, threshold_fraction=0.5))
    with pytest.raises(AttributionError):
        attr.relevance_report(g, threshold_fraction=1.0)


def test_csv_round_trips(tmp_path):
    t = _tensor(np.random.default_rng(2).normal(size=(4, 2, 3)))
    g = attr.aggregate_global(t)
    attr.write_global_csv(tmp_path / "g.csv", g)
    back = attr.read_global_csv(tmp_path / "g.csv")
    np.testing.assert_array_equal(back.matrix, g.matrix)
    assert back.row_labels == g.row_labels and back.col_labels == g.col_labels
    s = attr.pdp_series(t, "a_2", "s_1")
    attr.write_pdp_csv(tmp_path / "p.csv", s)
    v, phi = attr.read_pdp_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(v, s.values)
    np.testing.assert_array_equal(phi, s.phi)
    attr.write_phi_csv(tmp_path / "phi.csv", t)
    lines = (tmp_path / "phi.csv").read_text().splitlines()
    assert lines[0] == "instance,output,input,phi,input_value"
    assert len(lines) == 1 + 4 * 2 * 3
