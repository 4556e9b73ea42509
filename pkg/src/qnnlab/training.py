"""Noise-free supervised training with adjoint-mode circuit gradients and Adam."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import EncodedSet, SPLITS, split_classes
from .errors import BoundsError, DomainError, ShapeError, UnsupportedModeError
from .qnn import QnnModel, DenseHead, init_model, prepared_states, softmax
from .rng import make_rng
from .state import apply_matrix_vec, cnot_permutation, gate_matrix, z_expectations, z_signs

EPS_LOG = 1e-12
DEFAULT_EPOCHS = {"0-1": 1, "0-3": 2, "0-9": 4}
DEFAULT_MAX_SAMPLES = {"0-1": None, "0-3": 8000, "0-9": 8000}

_PAULI_Y = np.array([[0, -1j], [1j, 0]])


@dataclass
class TrainConfig:
    class_split: str = "0-1"
    layers: int = 1
    learning_rate: float = 0.01
    batch_size: int = 16
    epochs: int | None = None
    seed: int = 0
    max_samples: int | None = -1

    def __post_init__(self):
        if self.class_split not in SPLITS:
            raise DomainError(f"unknown split {self.class_split!r}")
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.class_split]
        if self.max_samples == -1:
            self.max_samples = DEFAULT_MAX_SAMPLES[self.class_split]
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1 or self.layers < 1:
            raise DomainError("learning_rate > 0, batch_size >= 1, epochs >= 1 and layers >= 1 required")


# -- loss ----------------------------------------------------------------------


def cross_entropy(probs, label: int) -> float:
    probs = np.asarray(probs, dtype=float)
    if not 0 <= label < probs.shape[-1]:
        raise BoundsError(f"label {label} outside {probs.shape[-1]} classes")
    return float(-np.log(probs[label] + EPS_LOG))


def _label_index(model: QnnModel, labels) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(model.class_labels)}
    try:
        return np.array([lookup[int(y)] for y in np.atleast_1d(labels)])
    except KeyError as exc:
        raise DomainError(f"label {exc.args[0]} is not one of {model.class_labels}") from None


# -- circuit gradients -----------------------------------------------------------


def _elementary_ops(layers: np.ndarray, n: int):
    """Layer circuit as (kind, qubit-or-pair, angle, param index) with Rot split into RZ, RY, RZ."""
    ops = []
    n_cnots = 0 if n == 1 else (1 if n == 2 else n)
    for l, layer in enumerate(layers):
        for q in range(n):
            phi, theta, omega = layer[q]
            ops.append(("RZ", q, phi, (l, q, 0)))
            ops.append(("RY", q, theta, (l, q, 1)))
            ops.append(("RZ", q, omega, (l, q, 2)))
        for i in range(n_cnots):
            ops.append(("CNOT", (i, (i + 1) % n), None, None))
    return ops


def _apply(vecs, kind, where, angle, n):
    if kind == "CNOT":
        return vecs[:, cnot_permutation(n, *where)]
    return apply_matrix_vec(vecs, gate_matrix(kind, (angle,)), where, n)


def _generator(vecs, kind, q, n):
    if kind == "RZ":
        return vecs * z_signs(n)[:, q]
    return apply_matrix_vec(vecs, _PAULI_Y, q, n)


def forward_from_prepared(states: np.ndarray, model: QnnModel) -> tuple[np.ndarray, np.ndarray]:
    """Final layer states and ``<Z_i>`` for already-embedded inputs."""
    n = model.n_qubits
    vecs = np.asarray(states, dtype=complex)
    for kind, where, angle, _ in _elementary_ops(model.layers, n):
        vecs = _apply(vecs, kind, where, angle, n)
    return vecs, z_expectations(np.abs(vecs) ** 2, n)


@dataclass
class Gradients:
    layers: np.ndarray
    head_weights: np.ndarray
    head_bias: np.ndarray

    def as_dict(self) -> dict:
        return {"layers": self.layers, "head_weights": self.head_weights, "head_bias": self.head_bias}


def _head_backward(expvals, label_idx, model):
    """Mean cross-entropy, its gradients w.r.t. head params, and dL/d<Z>."""
    batch = expvals.shape[0]
    probs = softmax(expvals @ model.head.weights.T + model.head.bias)
    py = probs[np.arange(batch), label_idx]
    loss = float(np.mean(-np.log(py + EPS_LOG)))
    onehot = np.zeros_like(probs)
    onehot[np.arange(batch), label_idx] = 1.0
    g_logits = (py / (py + EPS_LOG))[:, None] * (probs - onehot) / batch
    return loss, g_logits.T @ expvals, g_logits.sum(axis=0), g_logits @ model.head.weights


def loss_and_gradients(states: np.ndarray, labels, model: QnnModel) -> tuple[float, Gradients]:
    """Mean cross-entropy over a batch and its exact gradient (adjoint sweep).

    ``states`` are the embedded inputs ``(B, 2**n)``.  The backward pass
    replays the layer circuit with inverse gates, carrying the state and the
    co-state ``H|psi>`` where ``H = sum_i dL/d<Z_i> Z_i``.
    """
    n = model.n_qubits
    label_idx = _label_index(model, labels)
    ops = _elementary_ops(model.layers, n)
    psi = np.asarray(states, dtype=complex)
    for kind, where, angle, _ in ops:
        psi = _apply(psi, kind, where, angle, n)
    expvals = z_expectations(np.abs(psi) ** 2, n)
    loss, g_w, g_b, g_e = _head_backward(expvals, label_idx, model)

    lam = (g_e @ z_signs(n).T) * psi
    g_layers = np.zeros_like(model.layers)
    for kind, where, angle, pidx in reversed(ops):
        if pidx is not None:
            g_layers[pidx] = np.sum(np.imag(np.vdot(lam, _generator(psi, kind, where, n))))
            psi = _apply(psi, kind, where, -angle, n)
            lam = _apply(lam, kind, where, -angle, n)
        else:
            psi = _apply(psi, kind, where, None, n)
            lam = _apply(lam, kind, where, None, n)
    return loss, Gradients(g_layers, g_w, g_b)


def adjoint_gradients(x, model: QnnModel, label: int, noise=None) -> Gradients:
    """Exact gradient of ``cross_entropy`` for one input; noise-free evolution only."""
    if noise is not None:
        raise UnsupportedModeError("adjoint differentiation requires noise-free (unitary) evolution")
    states = prepared_states(np.asarray(x)[None, :], model.n_qubits)
    return loss_and_gradients(states, [label], model)[1]


def sample_loss(x, model: QnnModel, label: int) -> float:
    states = prepared_states(np.asarray(x)[None, :], model.n_qubits)
    _, ev = forward_from_prepared(states, model)
    probs = softmax(ev @ model.head.weights.T + model.head.bias)[0]
    return cross_entropy(probs, int(_label_index(model, [label])[0]))


def parameter_shift_gradient(x, model: QnnModel, label: int, index) -> float:
    """d loss / d rotation angle ``index = (layer, qubit, k)`` via the two-term shift rule.

    The shift rule is exact for each ``<Z_i>``; the loss derivative follows by
    the chain rule through the dense head and softmax.
    """
    try:
        idx = tuple(int(i) for i in index)
    except TypeError:
        raise DomainError("parameter index must be a (layer, qubit, k) rotation angle") from None
    if len(idx) != 3 or any(not 0 <= i < s for i, s in zip(idx, model.layers.shape)):
        raise BoundsError(f"rotation index {index} outside layer weights {model.layers.shape}")
    states = prepared_states(np.asarray(x)[None, :], model.n_qubits)
    _, ev = forward_from_prepared(states, model)
    _, _, _, g_e = _head_backward(ev, _label_index(model, [label]), model)
    shifted = []
    for sign in (1.0, -1.0):
        layers = model.layers.copy()
        layers[idx] += sign * np.pi / 2
        tmp = QnnModel(model.n_qubits, layers, model.head, model.class_labels)
        shifted.append(forward_from_prepared(states, tmp)[1])
    dev = 0.5 * (shifted[0] - shifted[1])
    return float(np.sum(g_e * dev))


# -- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ShapeError("params, grads and optimizer state must share keys")
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=float)
        if g.shape != np.shape(p) or state.m[k].shape != g.shape:
            raise ShapeError(f"shape mismatch for {k!r}: {np.shape(p)} vs {g.shape}")
        m = state.beta1 * state.m[k] + (1 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, state.beta1, state.beta2, state.eps)


def _params(model: QnnModel) -> dict:
    return {"layers": model.layers, "head_weights": model.head.weights, "head_bias": model.head.bias}


def _with_params(model: QnnModel, params: dict) -> QnnModel:
    return QnnModel(
        model.n_qubits,
        params["layers"],
        DenseHead(params["head_weights"], params["head_bias"]),
        model.class_labels,
        model.provenance,
    )


# -- training loop ---------------------------------------------------------------


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    wallclock_ms: float = 0.0

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "epoch", "batch_loss"])
            for step, epoch, loss in self.rows:
                w.writerow([step, epoch, repr(float(loss))])


def train(data: EncodedSet, config: TrainConfig, n_qubits: int = 8) -> tuple[QnnModel, TrainingLog]:
    """Train a fresh model on embedded samples; deterministic for a fixed seed."""
    classes = split_classes(config.class_split)
    if len(data) == 0:
        raise DomainError("cannot train on an empty dataset")
    if np.any(~np.isin(data.labels, classes)):
        raise DomainError(f"dataset contains labels outside split {config.class_split}")
    if config.max_samples is not None and len(data) > config.max_samples:
        data = data.subset(np.arange(config.max_samples))
    start = time.perf_counter()
    model = init_model(n_qubits, config.layers, classes, config.seed)
    model.provenance.update(
        {
            "split": config.class_split,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "train_samples": len(data),
        }
    )
    states = prepared_states(data.amplitudes, n_qubits)
    params = _params(model)
    opt = AdamState.zeros_like(params)
    log = TrainingLog()
    step = 0
    for epoch in range(config.epochs):
        order = make_rng(config.seed, 0xE90C, epoch).permutation(len(data))
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            loss, grads = loss_and_gradients(states[idx], data.labels[idx], model)
            params, opt = adam_step(params, grads.as_dict(), opt, config.learning_rate)
            model = _with_params(model, params)
            log.rows.append((step, epoch, loss))
            step += 1
    log.wallclock_ms = (time.perf_counter() - start) * 1e3
    return model, log
