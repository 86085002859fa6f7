import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import all_layers_network, max_gradient_error

from microuq.ann import (
    AdamState,
    ArrayData,
    Concat,
    Conv3D,
    Dense,
    Dropout,
    HpSearchSpace,
    MaxPool3D,
    Network,
    ReLU,
    TrainConfig,
    adam_amsgrad_step,
    alexnet_lite,
    evaluate,
    forward,
    from_bytes,
    gradients,
    hp_random_search,
    init_glorot,
    l2_penalty,
    load,
    loss,
    save,
    sgd_step,
    to_bytes,
    train,
)
from microuq.dataset import N_NUMERIC, numeric_features
from microuq.errors import CorruptFile, DatasetTooSmall, EmptySet, ShapeMismatch
from microuq.tensor import MaterialParams, isotropic_stiffness


def linear_net(w=2.0, n_in=1, n_out=1):
    net = Network([], [], [Concat(), Dense(n_out, use_bias=False)], grid_n=0, n_numeric=n_in, n_out=n_out)
    net.build(None)
    net.trunk[1].params["W"][...] = w
    return net


def test_dense_forward():
    assert forward(linear_net(2.0), [[3.0]])[0, 0] == 6.0


def test_relu():
    assert np.array_equal(ReLU().forward(np.array([[-1.0, 2.0]])), [[0.0, 2.0]])


def test_conv_output_size():
    conv = Conv3D(4, 3)
    assert conv.output_shape((1, 32, 32, 32)) == (4, 30, 30, 30)
    conv.build((1, 5, 5, 5), np.random.default_rng(0))
    assert conv.forward(np.zeros((2, 1, 5, 5, 5))).shape == (2, 4, 3, 3, 3)


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(1)
    conv = Conv3D(2, 2)
    conv.build((3, 4, 4, 4), rng)
    conv.params["b"] = rng.normal(size=2)
    x = rng.normal(size=(1, 3, 4, 4, 4))
    y = conv.forward(x)
    K, b = conv.params["K"], conv.params["b"]
    for f in range(2):
        for i, j, k in np.ndindex(3, 3, 3):
            ref = np.sum(K[f] * x[0, :, i:i + 2, j:j + 2, k:k + 2]) + b[f]
            assert y[0, f, i, j, k] == pytest.approx(ref, rel=1e-12)


def test_maxpool_values_and_floor():
    x = np.arange(5**3, dtype=float).reshape(1, 1, 5, 5, 5)
    pool = MaxPool3D(2)
    y = pool.forward(x)
    assert y.shape == (1, 1, 2, 2, 2)
    assert y[0, 0, 0, 0, 0] == x[0, 0, 1, 1, 1]
    assert y[0, 0, 1, 1, 1] == x[0, 0, 3, 3, 3]


def test_maxpool_backward_routes_to_first_max():
    pool = MaxPool3D(2)
    pool.forward(np.ones((1, 1, 2, 2, 2)))
    dx = pool.backward(np.ones((1, 1, 1, 1, 1)))
    assert dx.sum() == 1.0 and dx[0, 0, 0, 0, 0] == 1.0


def test_loss_examples():
    net = linear_net(0.0, n_in=1, n_out=6)
    assert loss(net, [[1.0]], None, [[0.0] * 6]) == 0.0
    assert loss(net, [[1.0]], None, [[1, 0, 0, 0, 0, 0]]) == 1.0
    assert loss(linear_net(3.0), [[0.0]], None, [[0.0]], lambda_l2=0.01) == pytest.approx(0.09)


def test_gradient_by_hand():
    value, g = gradients(linear_net(2.0), [[3.0]], None, [[0.0]])
    assert value == 36.0
    assert g["trunk.1.W"][0, 0] == 36.0


def test_zero_input_zero_first_layer_gradient():
    net = alexnet_lite(0, 3, 2, n_u=8, n_L=1)
    net.build(np.random.default_rng(0))
    _, g = gradients(net, np.zeros((4, 3)), None, np.ones((4, 2)))
    assert np.all(g["trunk.1.W"] == 0)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    assert max_gradient_error(seed) < 1e-5


def test_dropout_off_at_inference():
    net = all_layers_network(0)
    x1, x2 = np.ones((2, 2)), np.random.default_rng(0).random((2, 7, 7, 7))
    assert np.array_equal(net.predict(x1, x2), net.predict(x1, x2))
    d = Dropout(0.5)
    x = np.ones((1000, 4))
    y = d.forward(x, train=True, rng=np.random.default_rng(0))
    assert set(np.unique(y)) == {0.0, 2.0}


def test_l2_penalty():
    net = all_layers_network(0)
    assert l2_penalty(net) > 0
    for k, p in net.parameters().items():
        p[...] = 0.0
    assert l2_penalty(net) == 0.0


def test_sgd_step():
    p = {"w": np.array([1.0])}
    sgd_step(p, {"w": np.array([0.5])}, 0.1)
    assert p["w"][0] == pytest.approx(0.95)
    sgd_step(p, {"w": np.array([0.0])}, 0.1)
    sgd_step(p, {"w": np.array([3.0])}, 0.0)
    assert p["w"][0] == pytest.approx(0.95)


def test_amsgrad():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_amsgrad_step(state, p, {"w": np.zeros(2)}, 1e-3)
    assert np.array_equal(p["w"], [1.0, -2.0])
    p, state = {"w": np.array([0.0])}, AdamState()
    adam_amsgrad_step(state, p, {"w": np.array([1.0])}, 1e-3)
    # t=1: m_hat = g, v_hat = g**2, so the step is alpha * g / (|g| + eps)
    assert p["w"][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=30))
def test_amsgrad_v_hat_non_decreasing(gs):
    p, state = {"w": np.zeros(1)}, AdamState()
    prev = 0.0
    for g in gs:
        adam_amsgrad_step(state, p, {"w": np.array([g])}, 1e-3)
        assert state.v_hat["w"][0] >= prev
        prev = state.v_hat["w"][0]


def test_glorot():
    net = linear_net(0.0, n_in=2, n_out=4)
    init_glorot(net, 3)
    w = net.trunk[1].params["W"]
    assert np.all(np.abs(w) <= 1.0)
    again = init_glorot(linear_net(0.0, n_in=2, n_out=4), 3).trunk[1].params["W"]
    assert np.array_equal(w, again)
    big = init_glorot(linear_net(0.0, n_in=100, n_out=100), 0).trunk[1].params["W"]
    assert abs(big.mean()) < 0.02


def test_evaluate_examples():
    net = linear_net(1.0, n_in=2, n_out=2)
    net.trunk[1].params["W"] = np.eye(2)
    y = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert evaluate(net, ArrayData(y, None, y)) == 0.0
    # the identity network predicts its input, so the input plays the role of y_hat
    assert evaluate(net, ArrayData(2 * y, None, y)) == pytest.approx(1.0)
    y_hat = y + 0.01 * np.linalg.norm(y, axis=1)[:, None] * np.array([1.0, 0.0])
    assert evaluate(net, ArrayData(y_hat, None, y)) == pytest.approx(0.01)
    with pytest.raises(EmptySet):
        evaluate(net, ArrayData(np.zeros((0, 2)), None, np.zeros((0, 2))))


def test_train_identity_map():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (100, 1))
    net = Network([], [], [Concat(), Dense(1)], grid_n=0, n_numeric=1, n_out=1)
    net = train(ArrayData(x, None, x), net, TrainConfig(alpha=1e-2, batch_size=10, max_epochs=400, patience=50))
    assert net.history[-1][1] < 1e-6 or net.meta.best_val_loss < 1e-6


def test_train_loss_decreases_on_linear_problem():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(64, 3))
    y = x @ np.array([[1.0], [-2.0], [0.5]])
    net = Network([], [], [Concat(), Dense(1)], grid_n=0, n_numeric=3, n_out=1)
    net = train(ArrayData(x, None, y), net, TrainConfig(alpha=1e-3, batch_size=32, max_epochs=50, patience=50))
    losses = [h[1] for h in net.history]
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_learns_homogeneous_homogenization():
    rng = np.random.default_rng(2)
    rows, ys = [], []
    for k in range(600):
        m = MaterialParams.from_e_nu(rng.uniform(1e3, 1e4), rng.uniform(0.1, 0.48))
        i = k % 6 + 1
        rows.append(numeric_features(m, i))
        ys.append(isotropic_stiffness(*m.bulk_shear())[:, i - 1])
    data = ArrayData(np.array(rows), None, np.array(ys))
    tr, va, te = data.subset(slice(0, 400)), data.subset(slice(400, 500)), data.subset(slice(500, 600))
    net = alexnet_lite(0, N_NUMERIC, 6, n_u=128, n_L=2, label_transform="symlog", label_scale=100.0)
    net = train(tr, net, TrainConfig(alpha=1e-2, max_epochs=1000, patience=30, seed=0), va)
    assert evaluate(net, te) < 0.02


def test_patience_one_constant_loss_stops_after_two_epochs():
    x = np.zeros((8, 1))
    net = Network([], [], [Concat(), Dense(1, use_bias=False)], grid_n=0, n_numeric=1, n_out=1)
    net = train(ArrayData(x, None, np.ones((8, 1))), net, TrainConfig(batch_size=4, patience=1))
    assert net.meta.epochs == 2


def test_train_too_small():
    x = np.zeros((10, 1))
    with pytest.raises(DatasetTooSmall):
        train(ArrayData(x, None, x), linear_net(), TrainConfig(batch_size=8))


def test_checkpoint_round_trip(tmp_path):
    net = all_layers_network(4)
    net.label_transform, net.label_scale = "symlog", 100.0
    x1, x2 = np.ones((2, 2)), np.random.default_rng(0).random((2, 7, 7, 7))
    save(net, tmp_path / "m.muqm")
    back = load(tmp_path / "m.muqm")
    assert np.array_equal(back.predict(x1, x2), net.predict(x1, x2))
    assert to_bytes(back) == to_bytes(net)
    buf = to_bytes(net)
    for bad in (buf[:-8], buf + b"\0", b"XXXX" + buf[4:]):
        with pytest.raises(CorruptFile):
            from_bytes(bad)


def test_training_is_deterministic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(64, 2))
    y = np.sin(x)
    make = lambda: alexnet_lite(0, 2, 2, n_u=16, n_L=1, beta=0.1)  # noqa: E731
    cfg = TrainConfig(max_epochs=5, seed=9)
    a = train(ArrayData(x, None, y), make(), cfg)
    b = train(ArrayData(x, None, y), make(), cfg)
    assert to_bytes(a) == to_bytes(b)


def test_alexnet_lite_shapes():
    net = alexnet_lite(16, N_NUMERIC)
    assert sum(isinstance(layer, Conv3D) for layer in net.voxel) == 2
    net32 = alexnet_lite(32, N_NUMERIC)
    assert sum(isinstance(layer, Conv3D) for layer in net32.voxel) == 3
    init_glorot(net, 0)
    out = net.predict(np.zeros((3, N_NUMERIC)), np.zeros((3, 16, 16, 16)))
    assert out.shape == (3, 6)
    shared = net.predict_shared(np.zeros((3, N_NUMERIC)), np.zeros((16, 16, 16)))
    assert np.allclose(shared, out, rtol=1e-12, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        net.predict(np.zeros((1, N_NUMERIC)), np.zeros((1, 8, 8, 8)))


def test_symlog_round_trip():
    net = alexnet_lite(0, 2, 3, label_transform="symlog", label_scale=100.0)
    y = np.array([[-1e4, 0.0, 3.5]])
    assert np.allclose(net.untransform_labels(net.transform_labels(y)), y, rtol=1e-14)


def test_hp_search_single_trial_and_collapsed_space():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(64, 2))
    data = ArrayData(x, None, x[:, :1] * 2)
    make = lambda n_F, n_u, n_L, beta: alexnet_lite(0, 2, 1, n_u=n_u, n_L=n_L, beta=beta)  # noqa: E731
    base = TrainConfig(max_epochs=3)
    space = HpSearchSpace(alpha=(2e-3, 2e-3), lambda_l2=(1e-4, 1e-4), lambda_l2_zero=False, n_u=(8,),
                          n_F=(8,), n_L=(1,), beta=(0.0,), trials=2)
    res = hp_random_search(space, data, data, make, base)
    assert (res.best_config.alpha, res.best_config.lambda_l2, res.best.n_u) == (2e-3, 1e-4, 8)
    one = hp_random_search(HpSearchSpace(trials=1, n_u=(8, 16)), data, data, make, base)
    t = one.trials[0]
    assert len(one.trials) == 1 and one.best is t
    assert one.best_config.alpha == t.alpha and one.best_config.lambda_l2 == t.lambda_l2
    assert math.isfinite(t.val_loss)


def test_reference_optimum_inside_default_space():
    assert HpSearchSpace().contains(alpha=0.005, lambda_l2=0.0, beta=0.0, n_u=2048, n_F=32, n_L=2)
