"""Quantum classifier: amplitude embedding, strongly entangling layers, dense softmax head.

The quantum part outputs ``<Z_i>`` for every qubit; a classical dense layer
maps those ``n_qubits`` features to class logits.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .mottonen import prep_ops
from .noise import DeviceNoiseModel, insert_noise, measured_probabilities
from .rng import item_seed, make_rng
from .state import (
    Circuit,
    GateOp,
    ProbDist,
    clean_probabilities,
    counts_to_probs,
    run_statevector,
    sample_counts,
    z_expectations,
)

MODEL_FORMAT = "qnnmodel/1"


@dataclass
class DenseHead:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"head shapes inconsistent: W{self.weights.shape}, b{self.bias.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise DomainError("head parameters must be finite")


@dataclass
class QnnModel:
    n_qubits: int
    layers: np.ndarray
    head: DenseHead
    class_labels: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layers = np.asarray(self.layers, dtype=float)
        self.class_labels = tuple(int(c) for c in self.class_labels)
        if self.layers.ndim != 3 or self.layers.shape[1:] != (self.n_qubits, 3):
            raise ShapeError(f"layer weights must be [L][{self.n_qubits}][3], got {self.layers.shape}")
        if not np.all(np.isfinite(self.layers)):
            raise DomainError("layer weights must be finite")
        if self.head.weights.shape[1] != self.n_qubits:
            raise ShapeError("head input width must equal n_qubits")
        if len(self.class_labels) != self.head.weights.shape[0]:
            raise ShapeError("one class label per head output required")

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)


def init_model(n_qubits: int, n_layers: int, class_labels: Sequence[int], seed: int) -> QnnModel:
    """Rotation angles uniform in [0, 2pi); head weights Glorot-uniform; zero bias."""
    rng = make_rng(seed, 0x1A1)
    layers = rng.uniform(0.0, 2 * np.pi, size=(n_layers, n_qubits, 3))
    n_classes = len(class_labels)
    limit = math.sqrt(6.0 / (n_qubits + n_classes))
    weights = rng.uniform(-limit, limit, size=(n_classes, n_qubits))
    head = DenseHead(weights, np.zeros(n_classes))
    return QnnModel(n_qubits, layers, head, tuple(class_labels), {"seed": int(seed), "init": "uniform-2pi/glorot"})


def strongly_entangling_layer(params, n_qubits: int) -> list[GateOp]:
    """``Rot`` on every qubit, then a CNOT ring ``i -> (i+1) mod n``.

    One qubit gets no CNOT; two qubits get the single CNOT ``0 -> 1``.
    """
    params = np.asarray(params)
    if n_qubits < 1 or params.shape[:2] != (n_qubits, 3):
        raise ShapeError(f"expected [{n_qubits}][3] angles, got {params.shape}")
    ops = [GateOp("Rot", (q,), tuple(params[q])) for q in range(n_qubits)]
    n_cnots = 0 if n_qubits == 1 else (1 if n_qubits == 2 else n_qubits)
    ops += [GateOp("CNOT", (i, (i + 1) % n_qubits)) for i in range(n_cnots)]
    return ops


def layer_ops(weights: np.ndarray, n_qubits: int) -> list[GateOp]:
    ops = []
    for layer in weights:
        ops.extend(strongly_entangling_layer(layer, n_qubits))
    return ops


def build_circuit(amplitudes, model: QnnModel) -> Circuit:
    amps = np.asarray(amplitudes, dtype=float)
    if amps.shape != (2**model.n_qubits,):
        raise ShapeError(f"input must have {2**model.n_qubits} amplitudes")
    return Circuit(model.n_qubits, tuple(prep_ops(amps)) + tuple(layer_ops(model.layers, model.n_qubits)))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_probs(expvals: np.ndarray, head: DenseHead) -> np.ndarray:
    return softmax(np.asarray(expvals) @ head.weights.T + head.bias)


def prepared_states(inputs: np.ndarray, n_qubits: int) -> np.ndarray:
    """Noise-free outputs of the embedding circuits for a batch of inputs."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != 2**n_qubits:
        raise ShapeError(f"inputs must have {2**n_qubits} amplitudes")
    return run_statevector(prep_ops(inputs), n_qubits, batch=inputs.shape[0])


def _sampled(dist: np.ndarray, n: int, shots: int, seed: int) -> np.ndarray:
    counts = sample_counts(ProbDist(n, dist), shots, seed)
    return counts_to_probs(counts, n)


def output_distributions(
    inputs, model: QnnModel, noise: DeviceNoiseModel | None = None
) -> np.ndarray:
    """Final basis distributions, one row per input (readout confusion included under noise)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    n = model.n_qubits
    if noise is None:
        states = run_statevector(layer_ops(model.layers, n), n, prepared_states(inputs, n))
        return clean_probabilities(np.abs(states) ** 2)
    if noise.n_qubits < n:
        raise ShapeError(f"device {noise.name!r} has {noise.n_qubits} qubits, model needs {n}")
    out = np.empty((inputs.shape[0], 2**n))
    for i, x in enumerate(inputs):
        noisy = insert_noise(build_circuit(x, model), noise)
        out[i] = measured_probabilities(noisy).probs
    return out


def batch_expvals(
    inputs,
    model: QnnModel,
    noise: DeviceNoiseModel | None = None,
    shots: int | None = None,
    seed: int | None = None,
) -> np.ndarray:
    """``<Z_i>`` per input; with ``shots`` they are estimated from sampled counts.

    Item ``i`` samples with seed ``seed ^ i``.
    """
    if shots is not None and seed is None:
        raise DomainError("a seed is required when sampling shots")
    dists = output_distributions(inputs, model, noise)
    n = model.n_qubits
    if shots is not None:
        dists = np.stack([_sampled(d, n, shots, item_seed(seed, i)) for i, d in enumerate(dists)])
    return z_expectations(dists, n)


def qnn_forward(
    x,
    model: QnnModel,
    noise: DeviceNoiseModel | None = None,
    shots: int | None = None,
    seed: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(expvals, class_probs)`` for a single input."""
    ev = batch_expvals(np.asarray(x)[None, :], model, noise, shots, seed)[0]
    return ev, head_probs(ev, model.head)


def predict(
    inputs,
    model: QnnModel,
    noise: DeviceNoiseModel | None = None,
    shots: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Predicted class labels; ties resolve to the lowest label."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise DomainError("predict needs a non-empty batch of inputs")
    probs = head_probs(batch_expvals(inputs, model, noise, shots, seed), model.head)
    order = np.argsort(model.class_labels, kind="stable")
    labels = np.asarray(model.class_labels)[order]
    return labels[np.argmax(probs[:, order], axis=1)]


def accuracy(predicted, labels) -> float:
    predicted = np.asarray(predicted)
    return float(np.mean(predicted == np.asarray(labels)))


# -- serialization -------------------------------------------------------------


def _tagged(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}


def _untag(obj: dict) -> np.ndarray:
    return np.asarray(obj["data"], dtype=float).reshape(obj["shape"])


def model_to_dict(model: QnnModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "n_qubits": model.n_qubits,
        "class_labels": list(model.class_labels),
        "layers": _tagged(model.layers),
        "head": {"weights": _tagged(model.head.weights), "bias": _tagged(model.head.bias)},
        "provenance": model.provenance,
    }


def model_from_dict(data: dict) -> QnnModel:
    if data.get("format") != MODEL_FORMAT:
        raise DomainError(f"unsupported model format {data.get('format')!r}")
    head = DenseHead(_untag(data["head"]["weights"]), _untag(data["head"]["bias"]))
    return QnnModel(
        int(data["n_qubits"]), _untag(data["layers"]), head, tuple(data["class_labels"]), dict(data.get("provenance", {}))
    )


def save_model(model: QnnModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> QnnModel:
    return model_from_dict(json.loads(Path(path).read_text()))
