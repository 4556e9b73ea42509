import math

import numpy as np
import pytest

from conftest import random_unit_vector
from qnnlab.dataset import EncodedSet, load_encoded
from qnnlab.errors import BoundsError, DomainError, ShapeError, UnsupportedModeError
from qnnlab.noise import bundled_device_path, load_device_model
from qnnlab.qnn import DenseHead, QnnModel, accuracy, init_model, predict, qnn_forward
from qnnlab.training import (
    AdamState,
    TrainConfig,
    adam_step,
    adjoint_gradients,
    cross_entropy,
    parameter_shift_gradient,
    sample_loss,
    train,
)


def finite_difference(x, model, label, idx, h=1e-5):
    out = []
    for sign in (1, -1):
        layers = model.layers.copy()
        layers[idx] += sign * h
        out.append(sample_loss(x, QnnModel(model.n_qubits, layers, model.head, model.class_labels), label))
    return (out[0] - out[1]) / (2 * h)


def test_cross_entropy_examples():
    assert cross_entropy([1.0, 0.0], 0) == pytest.approx(0.0, abs=1e-11)
    assert cross_entropy(np.full(10, 0.1), 7) == pytest.approx(math.log(10), rel=1e-10)
    assert cross_entropy([0.7, 0.3], 1) == pytest.approx(1.2039728043, rel=1e-9)
    with pytest.raises(BoundsError):
        cross_entropy([0.5, 0.5], 2)


def test_bias_gradient_is_softmax_minus_onehot():
    model = init_model(2, 1, (0, 1, 2), seed=0)
    model.layers[:] = 0.0
    x = np.full(4, 0.5)
    grads = adjoint_gradients(x, model, 2)
    ev, probs = qnn_forward(x, model)
    assert np.allclose(grads.head_bias, probs - np.eye(3)[2], atol=1e-10)
    assert np.allclose(grads.head_weights, np.outer(probs - np.eye(3)[2], ev), atol=1e-10)


def test_single_qubit_ry_closed_form():
    """One RY layer on one qubit: <Z> = cos(theta) for input |0>; the loss is linear in <Z> through the head."""
    theta = 0.83
    layers = np.array([[[0.0, theta, 0.0]]])
    head = DenseHead(np.array([[1.5], [-0.5]]), np.array([0.1, -0.2]))
    model = QnnModel(1, layers, head, (0, 1))
    x = np.array([1.0, 0.0])
    ev, probs = qnn_forward(x, model)
    assert ev[0] == pytest.approx(math.cos(theta), abs=1e-14)
    dloss_dz = (probs - np.array([1.0, 0.0])) @ head.weights[:, 0]
    expect = dloss_dz * -math.sin(theta)
    assert parameter_shift_gradient(x, model, 0, (0, 0, 1)) == pytest.approx(expect, abs=1e-12)
    assert adjoint_gradients(x, model, 0).layers[0, 0, 1] == pytest.approx(expect, abs=1e-12)


@pytest.mark.parametrize("n", [2, 4])
def test_adjoint_matches_shift_and_finite_difference(n):
    rng = np.random.default_rng(n)
    for trial in range(3):
        model = init_model(n, 2, (0, 1, 2), seed=trial)
        model.head.bias[:] = rng.normal(size=3)
        x = random_unit_vector(rng, 2**n, nonneg=True)
        label = int(rng.integers(3))
        grads = adjoint_gradients(x, model, label)
        for idx in np.ndindex(*model.layers.shape):
            ps = parameter_shift_gradient(x, model, label, idx)
            assert grads.layers[idx] == pytest.approx(ps, abs=1e-8)
        idx = tuple(int(rng.integers(s)) for s in model.layers.shape)
        assert grads.layers[idx] == pytest.approx(finite_difference(x, model, label, idx), rel=1e-5, abs=1e-9)


def test_head_gradients_match_finite_difference(rng):
    model = init_model(3, 1, (0, 1), seed=5)
    x = random_unit_vector(rng, 8, nonneg=True)
    grads = adjoint_gradients(x, model, 1)
    h = 1e-6
    for i, j in [(0, 0), (1, 2)]:
        vals = []
        for s in (1, -1):
            w = model.head.weights.copy()
            w[i, j] += s * h
            vals.append(sample_loss(x, QnnModel(3, model.layers, DenseHead(w, model.head.bias), (0, 1)), 1))
        assert grads.head_weights[i, j] == pytest.approx((vals[0] - vals[1]) / (2 * h), rel=1e-6)


def test_adjoint_refuses_noise(rng):
    model = init_model(2, 1, (0, 1), seed=0)
    with pytest.raises(UnsupportedModeError):
        adjoint_gradients(np.full(4, 0.5), model, 0, noise=load_device_model(bundled_device_path("example-lownoise")))


def test_parameter_shift_index_guard():
    model = init_model(2, 1, (0, 1), seed=0)
    with pytest.raises(BoundsError):
        parameter_shift_gradient(np.full(4, 0.5), model, 0, (1, 0, 0))
    with pytest.raises(DomainError):
        parameter_shift_gradient(np.full(4, 0.5), model, 0, 3)


def test_adam_zero_gradient_and_first_step():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState.zeros_like(params)
    same, state1 = adam_step(params, {"w": np.zeros(2)}, state, 0.01)
    assert np.array_equal(same["w"], params["w"]) and state1.step == 1
    moved, _ = adam_step(params, {"w": np.array([0.3, -5.0])}, state, 0.01)
    assert np.allclose(moved["w"] - params["w"], [-0.01, 0.01], atol=1e-9)
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(3)}, state, 0.01)


def test_adam_three_step_trajectory():
    """Hand recurrence with b1=0.9, b2=0.999, eps=1e-8, lr=0.1 on a scalar."""
    grads = [1.0, -0.5, 2.0]
    x, m, v = 0.0, 0.0, 0.0
    expect = []
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        expect.append(x)
    params = {"x": np.array(0.0)}
    state = AdamState.zeros_like(params)
    got = []
    for g in grads:
        params, state = adam_step(params, {"x": np.array(g)}, state, 0.1)
        got.append(float(params["x"]))
    assert got == pytest.approx(expect, abs=1e-15)
    assert got == pytest.approx([-0.1, -0.1266337, -0.1924449], abs=1e-6)


def test_train_config_defaults():
    assert TrainConfig("0-1").epochs == 1 and TrainConfig("0-3").epochs == 2 and TrainConfig("0-9").epochs == 4
    assert TrainConfig("0-1").max_samples is None and TrainConfig("0-9").max_samples == 8000
    with pytest.raises(DomainError):
        TrainConfig("0-1", learning_rate=0.0)
    with pytest.raises(DomainError):
        TrainConfig("1-2")


def test_train_rejects_bad_data():
    with pytest.raises(DomainError):
        train(EncodedSet(np.zeros((0, 16)), np.zeros(0, dtype=int)), TrainConfig("0-1"), n_qubits=4)
    amps = np.tile(np.full(16, 0.25), (3, 1))
    with pytest.raises(DomainError):
        train(EncodedSet(amps, np.array([0, 1, 5])), TrainConfig("0-1"), n_qubits=4)


def test_train_small_synthetic_is_deterministic():
    rng = np.random.default_rng(0)
    amps = np.abs(rng.normal(size=(64, 16)))
    amps[:32, :8] *= 4
    amps[32:, 8:] *= 4
    amps /= np.linalg.norm(amps, axis=1, keepdims=True)
    data = EncodedSet(amps, np.repeat([0, 1], 32))
    cfg = TrainConfig("0-1", layers=2, epochs=3, seed=3)
    a, log_a = train(data, cfg, n_qubits=4)
    b, log_b = train(data, cfg, n_qubits=4)
    assert np.array_equal(a.layers, b.layers) and np.array_equal(log_a.losses, log_b.losses)
    assert len(log_a.rows) == 3 * 4
    assert log_a.losses[-4:].mean() < log_a.losses[:4].mean()


@pytest.mark.slow
def test_loss_decreases_over_first_steps(mnist_dir):
    data = load_encoded(mnist_dir, "train", "0-1", limit=2000)
    passed = 0
    for seed in range(5):
        batch = data.subset(np.random.default_rng(seed).choice(len(data), 16, replace=False))
        # one batch of 16 and ten epochs: ten Adam steps on the same fixed batch
        _, log = train(batch, TrainConfig("0-1", epochs=10, seed=seed))
        passed += log.losses[-1] < log.losses[0]
    assert passed >= 4


@pytest.mark.slow
def test_subset_training_descends(mnist_dir):
    data = load_encoded(mnist_dir, "train", "0-1", limit=2000)
    model, log = train(data, TrainConfig("0-1", layers=1, epochs=1, seed=0))
    assert log.losses[-10:].mean() < log.losses[:10].mean()
    test = load_encoded(mnist_dir, "test", "0-1", limit=300)
    assert accuracy(predict(test.amplitudes, model), test.labels) > 0.8
