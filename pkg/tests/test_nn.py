import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oef.nn import Head, Net, TrainConfig, TrainingError, gradient_check, masked_softmax, train


def multi_head_net(seed=0):
    return Net(7, [6], [Head("p", 4, "softmax"), Head("v", 3, "linear"), Head("b", 2, "sigmoid")],
               seed=seed)


def multi_head_batch(rng, n=9):
    X = rng.normal(size=(n, 7))
    mask = rng.random((n, 4)) < 0.7
    mask[np.arange(n), rng.integers(0, 4, n)] = True
    targets = {
        "p": rng.dirichlet(np.ones(4), size=n),
        "v": rng.normal(size=(n, 3)),
        "b": (rng.random((n, 2)) < 0.5).astype(float),
    }
    return X, targets, mask


def test_zero_weights_give_uniform_softmax():
    net = Net(5, [4], Head("out", 3, "softmax"))
    for p in net.params():
        p[...] = 0
    np.testing.assert_allclose(net.forward(np.ones(5)), [1 / 3] * 3)


def test_softmax_outputs_sum_to_one():
    rng = np.random.default_rng(0)
    for seed in range(200):
        net = Net(6, [5], Head("out", 4, "softmax"), seed=seed)
        out = net.forward(rng.normal(scale=10, size=(5, 6)))
        assert np.all(np.abs(out.sum(axis=1) - 1) < 1e-9)


def test_identity_linear_head_copies_input_slice():
    net = Net(4, [], Head("out", 2, "linear"))
    net.weights[0][...] = 0
    net.weights[0][1, 0] = net.weights[0][2, 1] = 1
    net.biases[0][...] = 0
    x = np.array([0.3, -1.5, 2.0, 7.0])
    np.testing.assert_allclose(net.forward(x), x[1:3])


def test_shape_mismatch():
    net = Net(4, [3], Head("out", 2, "linear"))
    with pytest.raises(ValueError, match="shape mismatch"):
        net.forward(np.zeros(5))


def test_masked_softmax_examples():
    z = np.array([0.5, -1.0, 2.0])
    np.testing.assert_allclose(masked_softmax(z, [1, 1, 1]), np.exp(z) / np.exp(z).sum())
    np.testing.assert_array_equal(masked_softmax(z, [0, 1, 0]), [0, 1, 0])
    p = masked_softmax(z, [1, 0, 1])
    assert p[1] == 0.0 and p.sum() == pytest.approx(1)
    with pytest.raises(ValueError):
        masked_softmax(z, [0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=2, max_size=8), st.integers(0, 2**16))
def test_masked_softmax_property(logits, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random(len(logits)) < 0.5
    mask[rng.integers(len(logits))] = True
    p = masked_softmax(logits, mask)
    assert np.all(p[~mask] == 0)
    assert abs(p.sum() - 1) < 1e-9


def test_single_sample_memorisation():
    net = Net(5, [16], Head("out", 3, "softmax"), seed=1)
    X = np.array([[1.0, 0, 1, 0, 1]])
    Y = {"out": np.array([[0.0, 1.0, 0.0]])}
    losses = train(net, X, Y, TrainConfig(batch_size=1, epochs=500, learning_rate=0.1))
    assert losses[-1] < 1e-3


def test_last_layer_fit_is_monotone():
    rng = np.random.default_rng(3)
    net = Net(6, [10], Head("out", 2, "linear"), seed=2)
    X = rng.normal(size=(40, 6))
    Y = {"out": rng.normal(size=(40, 2))}
    losses = []
    for _ in range(10):
        loss, grads = net.loss_and_grads(X, Y)
        losses.append(loss)
        # hidden layer frozen: only the output layer moves
        net.weights[-1] -= 0.01 * grads[-2]
        net.biases[-1] -= 0.01 * grads[-1]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


@pytest.mark.parametrize("kind", ["softmax", "linear", "sigmoid"])
def test_gradient_check_per_head(kind):
    rng = np.random.default_rng(11)
    net = Net(5, [8], Head("h", 3, kind), seed=4)
    X = rng.normal(size=(6, 5))
    if kind == "softmax":
        Y = rng.dirichlet(np.ones(3), size=6)
    elif kind == "sigmoid":
        Y = (rng.random((6, 3)) < 0.5).astype(float)
    else:
        Y = rng.normal(size=(6, 3))
    assert gradient_check(net, X, {"h": Y}, num_coords=100) < 1e-4


def test_gradient_check_multi_head_with_weights_and_masks():
    rng = np.random.default_rng(5)
    net = multi_head_net()
    X, targets, mask = multi_head_batch(rng)
    err = gradient_check(
        net, X, targets, num_coords=100,
        sample_weight=rng.uniform(0.5, 2.0, size=9),
        head_weight={"p": 1.0, "v": 0.5, "b": 2.0},
        head_mask={"v": (rng.random(9) < 0.5).astype(float)},
        legal_mask={"p": mask})
    assert err < 1e-4


def test_gradient_check_two_hidden_layers():
    rng = np.random.default_rng(8)
    net = Net(4, [6, 5], Head("h", 3, "softmax"), seed=9)
    X = rng.normal(size=(5, 4))
    assert gradient_check(net, X, {"h": np.eye(3)[[0, 1, 2, 1, 0]]}) < 1e-4


def test_training_is_deterministic():
    rng = np.random.default_rng(0)
    X, targets, mask = multi_head_batch(rng, n=40)
    cfg = TrainConfig(batch_size=8, epochs=20, learning_rate=0.05, seed=3)
    a, b = multi_head_net(1), multi_head_net(1)
    train(a, X, targets, cfg, legal_mask={"p": mask})
    train(b, X, targets, cfg, legal_mask={"p": mask})
    assert a.param_hash() == b.param_hash()


def test_serialization_roundtrip(tmp_path):
    net = multi_head_net(7)
    path = tmp_path / "net.json"
    net.save(path)
    back = Net.load(path)
    assert back.param_hash() == net.param_hash()
    assert back.heads == net.heads
    x = np.linspace(-1, 1, 7)
    for k, v in net.forward_all(x).items():
        np.testing.assert_array_equal(back.forward_all(x)[k], v)


def test_load_rejects_bad_shapes(tmp_path):
    d = multi_head_net().to_dict()
    d["weights"][0]["shape"] = [6, 7]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ValueError, match="shape mismatch"):
        Net.load(path)


def test_nan_loss_aborts():
    net = Net(3, [4], Head("h", 2, "linear"))
    X = np.ones((4, 3))
    Y = {"h": np.full((4, 2), np.nan)}
    with pytest.raises(TrainingError, match="non-finite loss"):
        train(net, X, Y, TrainConfig(batch_size=2, epochs=1))


def test_parameters_stay_finite_with_extreme_logits():
    net = Net(3, [4], Head("h", 3, "softmax"))
    X = np.full((8, 3), 1e3)
    train(net, X, {"h": np.eye(3)[[0, 1, 2, 0, 1, 2, 0, 1]]}, TrainConfig(batch_size=4, epochs=5))
    assert all(np.all(np.isfinite(p)) for p in net.params())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
