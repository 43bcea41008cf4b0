import numpy as np
import pytest

from sraskit.errors import DimMismatch, NoConvergence, SingularLinearization
from sraskit.repmap import (
    FixedPointMap,
    LayerSpec,
    RepMap,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
)


def random_net(rng, dims, activation="tanh", classifier=False, scale=1.0):
    layers = []
    for i in range(len(dims) - 1):
        w = rng.normal(size=(dims[i + 1], dims[i])) * scale / np.sqrt(dims[i])
        b = rng.normal(size=dims[i + 1]) * 0.1
        layers.append(LayerSpec.dense(w, b))
        if i < len(dims) - 2 or not classifier:
            layers.append(LayerSpec.activation(activation))
    return RepMap(layers, input_dim=dims[0], classifier=classifier)


def central_difference_jvp(fn, x, v, h):
    return (fn(x + h * v) - fn(x - h * v)) / (2.0 * h)


# ----------------------------------------------------------------- forward


def test_forward_identity_dense():
    net = RepMap([LayerSpec.dense(np.eye(3), np.zeros(3))], input_dim=3)
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(net.forward(x), x)


def test_forward_relu_linear_regime():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([0.5, 0.5])
    net = RepMap(
        [LayerSpec.dense(w, b), LayerSpec.activation("relu")], input_dim=2
    )
    x = np.array([1.0, 1.0])  # all preactivations positive
    assert np.allclose(net.forward(x), w @ x + b)


def test_forward_matches_manual_composition():
    w1 = np.array([[2.0, 0.0], [1.0, -1.0]])
    b1 = np.array([0.0, 1.0])
    w2 = np.array([[1.0, 1.0], [0.0, 3.0]])
    b2 = np.array([-1.0, 0.0])
    net = RepMap(
        [
            LayerSpec.dense(w1, b1),
            LayerSpec.activation("tanh"),
            LayerSpec.dense(w2, b2),
        ],
        input_dim=2,
    )
    x = np.array([0.3, -0.7])
    manual = w2 @ np.tanh(w1 @ x + b1) + b2
    assert np.array_equal(net.forward(x), manual)
    # intermediate layer readout
    assert np.array_equal(net.forward(x, layer_index=2), np.tanh(w1 @ x + b1))


def test_forward_dim_checks():
    net = RepMap([LayerSpec.dense(np.eye(2), np.zeros(2))], input_dim=2)
    with pytest.raises(DimMismatch):
        net.forward(np.zeros(3))
    with pytest.raises(DimMismatch):
        net.forward(np.zeros(2), layer_index=5)


def test_forward_batch_matches_single():
    rng = np.random.default_rng(0)
    net = random_net(rng, [3, 5, 4])
    xs = rng.normal(size=(6, 3))
    batch = net.forward_batch(xs)
    for i, x in enumerate(xs):
        assert np.allclose(batch[i], net.forward(x))


def test_mismatched_dense_dims_rejected():
    with pytest.raises(DimMismatch):
        RepMap(
            [
                LayerSpec.dense(np.ones((3, 2)), np.zeros(3)),
                LayerSpec.dense(np.ones((2, 4)), np.zeros(2)),
            ],
            input_dim=2,
        )


# --------------------------------------------------------------------- jvp


def test_jvp_linear_map_is_w():
    w = np.array([[1.0, -2.0], [0.5, 3.0]])
    net = RepMap([LayerSpec.dense(w, np.array([7.0, -7.0]))], input_dim=2)
    rng = np.random.default_rng(1)
    for _ in range(5):
        x, v = rng.normal(size=2), rng.normal(size=2)
        assert np.allclose(net.jvp(x, v), w @ v)


def test_jvp_tanh_at_zero():
    w = np.array([[2.0, 1.0], [0.0, -1.0]])
    net = RepMap(
        [LayerSpec.dense(w, np.zeros(2)), LayerSpec.activation("tanh")], input_dim=2
    )
    v = np.array([0.4, -0.2])
    assert np.allclose(net.jvp(np.zeros(2), v), w @ v)  # tanh'(0) = 1


@pytest.mark.parametrize("activation", ["tanh", "softplus"])
def test_jvp_against_central_differences(activation):
    rng = np.random.default_rng(2)
    net = random_net(rng, [4, 6, 5, 3], activation=activation)
    worst = 0.0
    for _ in range(100):
        x = rng.normal(size=4)
        v = rng.normal(size=4)
        h = 1e-5 * (1.0 + np.max(np.abs(x)))
        fd = central_difference_jvp(net.forward, x, v, h)
        ad = net.jvp(x, v)
        rel = np.linalg.norm(ad - fd) / (1.0 + np.linalg.norm(fd))
        worst = max(worst, rel)
    assert worst < 1e-4


def test_jvp_linearity():
    rng = np.random.default_rng(3)
    net = random_net(rng, [3, 5, 4])
    x = rng.normal(size=3)
    v, w = rng.normal(size=3), rng.normal(size=3)
    a, b = 1.7, -0.3
    lhs = net.jvp(x, a * v + b * w)
    rhs = a * net.jvp(x, v) + b * net.jvp(x, w)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1.0 + np.max(np.abs(rhs)))


def test_final_bias_shift_leaves_jvp_bit_identical():
    rng = np.random.default_rng(4)
    net = random_net(rng, [3, 5, 4])
    # drop the trailing activation so the final layer is the dense readout
    lin = RepMap(net.layers[:-1], input_dim=3)
    last = lin.layers[-1]
    shifted_layers = lin.layers[:-1] + [LayerSpec.dense(last.weight, last.bias + 13.7)]
    lin_shifted = RepMap(shifted_layers, input_dim=3)
    x, v = rng.normal(size=3), rng.normal(size=3)
    assert np.array_equal(lin.jvp(x, v), lin_shifted.jvp(x, v))


def test_jacobian_columns():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(4, 3))
    net = RepMap([LayerSpec.dense(w, np.zeros(4))], input_dim=3)
    x = rng.normal(size=3)
    cols = net.jacobian_columns(x, np.eye(3))
    assert np.allclose(cols, w)
    single = net.jacobian_columns(x, np.eye(3)[:, :1])
    assert np.allclose(single[:, 0], net.jvp(x, np.eye(3)[:, 0]))


def test_projected_metric_psd():
    rng = np.random.default_rng(6)
    net = random_net(rng, [5, 7, 6])
    p, _ = np.linalg.qr(rng.normal(size=(5, 3)))
    for _ in range(10):
        jp = net.jacobian_columns(rng.normal(size=5), p)
        g = jp.T @ jp
        assert np.linalg.eigvalsh(g)[0] >= -1e-12


# ------------------------------------------------------------------ margin


def make_fixed_logit_map(logits):
    # zero weight, bias = logits: constant classifier
    d = 2
    w = np.zeros((len(logits), d))
    return RepMap([LayerSpec.dense(w, np.asarray(logits, float))], input_dim=d, classifier=True)


def test_margin_examples():
    net = make_fixed_logit_map([3.0, 1.0, 0.0])
    assert net.margin(np.zeros(2), 0) == pytest.approx(2.0)
    tie = make_fixed_logit_map([1.0, 1.0])
    assert tie.margin(np.zeros(2), 0) == pytest.approx(0.0)


def test_margin_change_under_logit_shift():
    before = make_fixed_logit_map([2.0, 1.0, -1.0])
    after = make_fixed_logit_map([1.5, 1.5, -1.0])
    delta = before.margin(np.zeros(2), 0) - after.margin(np.zeros(2), 0)
    assert delta == pytest.approx(1.0)


def test_margin_errors():
    net = make_fixed_logit_map([1.0, 2.0])
    with pytest.raises(IndexError):
        net.margin(np.zeros(2), 5)
    plain = RepMap([LayerSpec.dense(np.eye(2), np.zeros(2))], input_dim=2)
    with pytest.raises(ValueError):
        plain.margin(np.zeros(2), 0)


# -------------------------------------------------------------- fixed point


def make_contractive_system(rng, n=8, d=3, rho=0.5, activation="tanh"):
    w = rng.normal(size=(n, n))
    w *= rho / np.linalg.norm(w, 2)
    wi = rng.normal(size=(n, d))
    bi = rng.normal(size=n) * 0.1
    return FixedPointMap(w, wi, bi, activation=activation, tol=1e-12, max_iter=1000)


def test_fixed_point_zero_recurrence():
    rng = np.random.default_rng(7)
    fp = FixedPointMap(
        np.zeros((4, 4)), rng.normal(size=(4, 2)), np.zeros(4), activation="tanh"
    )
    x = rng.normal(size=2)
    sol = fp.solve(x)
    assert np.allclose(sol.state, np.tanh(fp.input_weight @ x))
    assert sol.iterations <= 2


def test_fixed_point_linear_solves_exactly():
    rng = np.random.default_rng(8)
    fp = make_contractive_system(rng, n=6, d=2, rho=0.6, activation="identity")
    x = rng.normal(size=2)
    sol = fp.solve(x)
    expected = np.linalg.solve(np.eye(6) - fp.recurrent_weight, fp.drive(x))
    assert np.max(np.abs(sol.state - expected)) <= 1e-9


def test_fixed_point_geometric_convergence():
    rng = np.random.default_rng(9)
    fp = make_contractive_system(rng, n=8, d=3, rho=0.5)
    fp = FixedPointMap(
        fp.recurrent_weight, fp.input_weight, fp.input_bias, tol=1e-10, max_iter=100
    )
    sol = fp.solve(rng.normal(size=3))
    assert sol.residual <= 1e-10
    assert sol.iterations <= 40


def test_fixed_point_no_convergence_carries_residual():
    rng = np.random.default_rng(10)
    fp = make_contractive_system(rng, n=6, d=2, rho=0.9)
    tight = FixedPointMap(
        fp.recurrent_weight, fp.input_weight, fp.input_bias, tol=1e-16, max_iter=3
    )
    with pytest.raises(NoConvergence) as err:
        tight.solve(rng.normal(size=2))
    assert err.value.residual > 0


def test_contraction_warning():
    rng = np.random.default_rng(11)
    w = rng.normal(size=(4, 4))
    w *= 1.5 / np.linalg.norm(w, 2)
    with pytest.warns(UserWarning, match="contraction"):
        FixedPointMap(w, rng.normal(size=(4, 2)), np.zeros(4))


# --------------------------------------------------------- implicit jacobian


def test_implicit_jacobian_zero_recurrence_identity_activation():
    rng = np.random.default_rng(12)
    wi = rng.normal(size=(5, 3))
    fp = FixedPointMap(np.zeros((5, 5)), wi, np.zeros(5), activation="identity")
    assert np.allclose(fp.implicit_jacobian(rng.normal(size=3)), wi)


def test_implicit_jacobian_linear_closed_form():
    rng = np.random.default_rng(13)
    fp = make_contractive_system(rng, n=6, d=2, rho=0.6, activation="identity")
    x = rng.normal(size=2)
    expected = np.linalg.solve(np.eye(6) - fp.recurrent_weight, fp.input_weight)
    assert np.max(np.abs(fp.implicit_jacobian(x) - expected)) <= 1e-9


def test_implicit_jacobian_matches_finite_differences():
    rng = np.random.default_rng(14)
    fp = make_contractive_system(rng, n=8, d=3, rho=0.5)
    x = rng.normal(size=3)
    jac = fp.implicit_jacobian(x)
    h = 1e-5 * (1.0 + np.max(np.abs(x)))
    for j in range(3):
        v = np.eye(3)[:, j]
        fd = (fp.solve(x + h * v).state - fp.solve(x - h * v).state) / (2.0 * h)
        rel = np.linalg.norm(jac[:, j] - fd) / (1.0 + np.linalg.norm(fd))
        assert rel < 1e-4


def test_implicit_jvp_consistency():
    rng = np.random.default_rng(15)
    fp = make_contractive_system(rng, n=8, d=3, rho=0.5)
    x, v = rng.normal(size=3), rng.normal(size=3)
    assert np.allclose(fp.jvp(x, v), fp.implicit_jacobian(x) @ v, atol=1e-12)


def test_singular_linearization_detected():
    # identity activation with W = I makes I - DW exactly singular
    with warnings_suppressed():
        fp = FixedPointMap(
            np.eye(3), np.ones((3, 2)), np.zeros(3), activation="identity", max_iter=5
        )
    with pytest.raises((SingularLinearization, NoConvergence)):
        fp.implicit_jacobian(np.zeros(2))


class warnings_suppressed:
    def __enter__(self):
        import warnings

        self._cm = warnings.catch_warnings()
        self._cm.__enter__()
        import warnings as w

        w.simplefilter("ignore")
        return self

    def __exit__(self, *exc):
        return self._cm.__exit__(*exc)


# --------------------------------------------------------------------- IO


def test_model_json_round_trip(tmp_path):
    rng = np.random.default_rng(16)
    net = random_net(rng, [3, 4, 2], classifier=True)
    path = tmp_path / "model.json"
    save_model(net, path)
    loaded = load_model(path)
    assert loaded.classifier and loaded.input_dim == 3
    x = rng.normal(size=3)
    assert np.array_equal(loaded.forward(x), net.forward(x))


def test_dataset_csv_round_trip(tmp_path):
    rng = np.random.default_rng(17)
    x = rng.normal(size=(5, 3))
    y = np.array([0, 1, 1, 0, 2])
    path = tmp_path / "data.csv"
    save_dataset(path, x, y)
    x2, y2 = load_dataset(path)
    assert np.array_equal(x, x2)
    assert np.array_equal(y, y2)
    path2 = tmp_path / "unlabeled.csv"
    save_dataset(path2, x)
    x3, y3 = load_dataset(path2)
    assert np.array_equal(x, x3) and y3 is None


def test_dataset_bad_header_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        load_dataset(path)
