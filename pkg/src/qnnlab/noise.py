"""Kraus channels, device calibration files and noisy circuit execution.

A device model rewrites a circuit so that every gate is followed by thermal
relaxation on each qubit it touches (gate duration against that qubit's
T1/T2) and then a depolarizing channel whose parameter is the calibrated gate
error.  Readout confusion is kept aside and applied to the final
distribution.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .errors import (
    BoundsError,
    ConnectivityError,
    DomainError,
    PhysicalityError,
    SchemaError,
    ShapeError,
)
from .state import (
    Circuit,
    DensityMatrix,
    GateOp,
    ProbDist,
    PureState,
    apply_matrix_left_right,
    apply_op_rho,
    canonical_kind,
    clean_probabilities,
)

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """Trace-preserving map ``rho -> sum_k K rho K^dagger``.

    ``name``/``params`` let the simulator use a closed-form update for the
    built-in channels; ``kraus`` is always the authoritative definition.
    """

    kraus: tuple
    name: str = "kraus"
    params: tuple = ()

    def __post_init__(self):
        mats = tuple(np.array(k, dtype=complex) for k in self.kraus)
        if not mats:
            raise ShapeError("a channel needs at least one Kraus operator")
        dim = mats[0].shape[0]
        if dim not in (2, 4) or any(k.shape != (dim, dim) for k in mats):
            raise ShapeError("Kraus operators must all be 2x2 or all be 4x4")
        if np.max(np.abs(completeness(mats) - np.eye(dim))) > 1e-10:
            raise PhysicalityError("Kraus operators are not trace preserving")
        for k in mats:
            k.flags.writeable = False
        object.__setattr__(self, "kraus", mats)

    @property
    def arity(self) -> int:
        return 1 if self.kraus[0].shape[0] == 2 else 2


def completeness(kraus: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_k K_k^dagger K_k``; the identity for a trace-preserving channel."""
    return sum(k.conj().T @ k for k in kraus)


def _check_prob(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0 or math.isnan(value):
        raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return value


def identity_channel(arity: int = 1) -> KrausChannel:
    return KrausChannel((np.eye(2**arity),), "identity")


def depolarizing(p: float, arity: int = 1) -> KrausChannel:
    """``rho -> (1-p) rho + p I/2^arity`` on the target subsystem."""
    p = _check_prob("p", p)
    if arity not in (1, 2):
        raise ShapeError("depolarizing arity must be 1 or 2")
    n_paulis = 4**arity
    ops = []
    for labels in np.ndindex(*(4,) * arity):
        mat = np.array([[1.0 + 0j]])
        for lab in labels:
            mat = np.kron(mat, _PAULI["IXYZ"[lab]])
        weight = 1 - p + p / n_paulis if not any(labels) else p / n_paulis
        ops.append(np.sqrt(weight) * mat)
    return KrausChannel(tuple(ops), "depolarizing", (p,))


def amplitude_damping(gamma: float) -> KrausChannel:
    g = _check_prob("gamma", gamma)
    k0 = np.array([[1, 0], [0, np.sqrt(1 - g)]], dtype=complex)
    k1 = np.array([[0, np.sqrt(g)], [0, 0]], dtype=complex)
    return KrausChannel((k0, k1), "amplitude_damping", (g,))


def phase_damping(lam: float) -> KrausChannel:
    lam = _check_prob("lambda", lam)
    k0 = np.array([[1, 0], [0, np.sqrt(1 - lam)]], dtype=complex)
    k1 = np.array([[0, 0], [0, np.sqrt(lam)]], dtype=complex)
    return KrausChannel((k0, k1), "phase_damping", (lam,))


def relaxation_parameters(t1_us: float, t2_us: float, duration_ns: float) -> tuple[float, float]:
    """Damping ``gamma`` and dephasing ``lambda`` for one gate duration."""
    t1 = float(t1_us)
    t2 = float(t2_us)
    if not (t1 > 0 and t2 > 0):
        raise PhysicalityError("T1 and T2 must be positive")
    if t2 > 2 * t1 * (1 + 1e-12):
        raise PhysicalityError(f"T2={t2} us exceeds 2*T1={2 * t1} us")
    if duration_ns < 0 or math.isnan(duration_ns):
        raise DomainError("duration must be >= 0")
    t = duration_ns * 1e-3
    if t == 0:
        return 0.0, 0.0
    gamma = -math.expm1(-t / t1)
    dephasing_rate = max(0.0, 1.0 / t2 - 0.5 / t1)
    lam = -math.expm1(-t * dephasing_rate)
    return gamma, lam


def thermal_relaxation(t1_us: float, t2_us: float, duration_ns: float) -> KrausChannel:
    """Amplitude damping followed by pure dephasing over ``duration_ns``.

    ``math.inf`` is accepted for T1 and T2 (no relaxation).
    """
    gamma, lam = relaxation_parameters(t1_us, t2_us, duration_ns)
    ad = amplitude_damping(gamma).kraus
    pd = phase_damping(lam).kraus
    ops = tuple(p @ a for p in pd for a in ad)
    return KrausChannel(ops, "thermal_relaxation", (gamma, lam))


def readout_confusion(p01: float, p10: float) -> np.ndarray:
    """Columns are true outcomes, rows observed: ``[[1-p01, p10], [p01, 1-p10]]``."""
    return np.array([[1 - p01, p10], [p01, 1 - p10]])


def apply_readout_array(probs: np.ndarray, calib: Sequence[tuple[float, float]]) -> np.ndarray:
    """Product confusion on the last axis of ``probs`` (length ``2**len(calib)``)."""
    n = len(calib)
    lead = probs.shape[:-1]
    t = np.asarray(probs, dtype=float).reshape(lead + (2,) * n)
    nlead = len(lead)
    for q, (p01, p10) in enumerate(calib):
        t = np.moveaxis(np.tensordot(readout_confusion(p01, p10), t, axes=(1, nlead + q)), 0, nlead + q)
    return t.reshape(probs.shape)


def apply_readout_error(dist: ProbDist, calib: Sequence[tuple[float, float]]) -> ProbDist:
    calib = [(_check_prob("p01", a), _check_prob("p10", b)) for a, b in calib]
    if len(calib) != dist.n_qubits:
        raise ShapeError(f"need one (p01, p10) pair per qubit, got {len(calib)}")
    return ProbDist(dist.n_qubits, clean_probabilities(apply_readout_array(dist.probs, calib)))


# -- device calibration ------------------------------------------------------


@dataclass(frozen=True)
class QubitCalibration:
    t1_us: float
    t2_us: float
    readout_p01: float = 0.0
    readout_p10: float = 0.0

    def __post_init__(self):
        if not (self.t1_us > 0 and self.t2_us > 0):
            raise PhysicalityError("t1_us and t2_us must be positive")
        if self.t2_us > 2 * self.t1_us * (1 + 1e-12):
            raise PhysicalityError(f"t2_us={self.t2_us} exceeds 2*t1_us={2 * self.t1_us}")
        _check_prob("readout_p01", self.readout_p01)
        _check_prob("readout_p10", self.readout_p10)


@dataclass(frozen=True)
class GateCalibration:
    kind: str
    qubits: tuple
    error: float
    duration_ns: float

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        _check_prob("error", self.error)
        if self.duration_ns < 0:
            raise DomainError("duration_ns must be >= 0")


@dataclass(frozen=True)
class DeviceNoiseModel:
    name: str
    n_qubits: int
    qubits: tuple
    gates: tuple
    coupling_map: tuple
    _lookup: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(self.qubits))
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "coupling_map", tuple(tuple(int(q) for q in pair) for pair in self.coupling_map))
        if len(self.qubits) != self.n_qubits:
            raise SchemaError(f"qubits: expected {self.n_qubits} entries, got {len(self.qubits)}")
        for pair in self.coupling_map:
            if len(pair) != 2 or pair[0] == pair[1] or not all(0 <= q < self.n_qubits for q in pair):
                raise SchemaError(f"coupling_map: invalid pair {list(pair)}")
        lookup = {}
        for g in self.gates:
            if any(not 0 <= q < self.n_qubits for q in g.qubits):
                raise SchemaError(f"gates: {g.kind} qubits {list(g.qubits)} out of range")
            if g.kind == "CNOT" and g.qubits and not self.coupled(*g.qubits):
                raise SchemaError(f"gates: cnot pair {list(g.qubits)} missing from coupling_map")
            lookup[(g.kind, g.qubits)] = g
        object.__setattr__(self, "_lookup", lookup)

    def coupled(self, a: int, b: int) -> bool:
        return (a, b) in self.coupling_map or (b, a) in self.coupling_map

    def gate_calibration(self, kind: str, qubits: Sequence[int]) -> GateCalibration:
        kind = canonical_kind(kind)
        key = (kind, tuple(qubits))
        cal = self._lookup.get(key) or self._lookup.get((kind, ()))
        if cal is None:
            raise SchemaError(f"gates: no calibration for {kind.lower()} on {list(qubits)} and no default entry")
        return cal

    @property
    def readout(self) -> tuple:
        return tuple((q.readout_p01, q.readout_p10) for q in self.qubits)

    def scaled(self, factor: float) -> "DeviceNoiseModel":
        """Scale every error source: gate errors and readout linearly, relaxation rates by ``factor``."""
        f = float(factor)
        if f < 0:
            raise DomainError("noise scale must be >= 0")

        def stretch(t):
            return math.inf if f == 0 else t / f

        qubits = [
            QubitCalibration(stretch(q.t1_us), stretch(q.t2_us), min(1.0, q.readout_p01 * f), min(1.0, q.readout_p10 * f))
            for q in self.qubits
        ]
        gates = [replace(g, error=min(1.0, g.error * f)) for g in self.gates]
        return DeviceNoiseModel(f"{self.name}x{f:g}", self.n_qubits, tuple(qubits), tuple(gates), self.coupling_map)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_qubits": self.n_qubits,
            "qubits": [
                {"t1_us": q.t1_us, "t2_us": q.t2_us, "readout_p01": q.readout_p01, "readout_p10": q.readout_p10}
                for q in self.qubits
            ],
            "gates": [
                {"kind": g.kind.lower(), "qubits": list(g.qubits), "error": g.error, "duration_ns": g.duration_ns}
                for g in self.gates
            ],
            "coupling_map": [list(p) for p in self.coupling_map],
        }


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}{key}: missing field")
    return obj[key]


def device_model_from_dict(data: dict) -> DeviceNoiseModel:
    if not isinstance(data, dict):
        raise SchemaError("calibration root must be a JSON object")
    name = str(_require(data, "name", ""))
    n = _require(data, "n_qubits", "")
    if not isinstance(n, int) or n < 1:
        raise SchemaError("n_qubits: must be a positive integer")
    qubits = []
    for i, q in enumerate(_require(data, "qubits", "")):
        where = f"qubits[{i}]."
        try:
            qubits.append(
                QubitCalibration(
                    float(_require(q, "t1_us", where)),
                    float(_require(q, "t2_us", where)),
                    float(_require(q, "readout_p01", where)),
                    float(_require(q, "readout_p10", where)),
                )
            )
        except (PhysicalityError, DomainError) as exc:
            raise SchemaError(f"{where[:-1]}: {exc}") from None
    gates = []
    for i, g in enumerate(_require(data, "gates", "")):
        where = f"gates[{i}]."
        try:
            gates.append(
                GateCalibration(
                    str(_require(g, "kind", where)),
                    tuple(_require(g, "qubits", where)),
                    float(_require(g, "error", where)),
                    float(_require(g, "duration_ns", where)),
                )
            )
        except DomainError as exc:
            raise SchemaError(f"{where[:-1]}: {exc}") from None
    coupling = _require(data, "coupling_map", "")
    return DeviceNoiseModel(name, n, tuple(qubits), tuple(gates), tuple(tuple(p) for p in coupling))


def load_device_model(path: Union[str, Path]) -> DeviceNoiseModel:
    text = Path(path).read_text()
    if not text.strip():
        raise SchemaError(f"{path}: empty calibration file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return device_model_from_dict(data)


def bundled_device_path(name: str) -> Path:
    """Path of a calibration fixture shipped with the package (``example-lownoise`` etc.)."""
    stem = name[:-5] if name.endswith(".json") else name
    path = Path(__file__).parent / "devices" / f"{stem}.json"
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def resolve_device(spec: Union[str, Path]) -> Path:
    """A calibration file path, falling back to the bundled fixtures by name."""
    p = Path(spec)
    if p.exists():
        return p
    return bundled_device_path(str(spec))


# -- noisy circuits ----------------------------------------------------------


@dataclass(frozen=True)
class ChannelOp:
    channel: KrausChannel
    targets: tuple


@dataclass(frozen=True)
class NoisyCircuit:
    n_qubits: int
    ops: tuple
    readout: tuple

    def count(self, cls) -> int:
        return sum(isinstance(op, cls) for op in self.ops)


@lru_cache(maxsize=4096)
def _relaxation(t1: float, t2: float, duration: float) -> KrausChannel:
    return thermal_relaxation(t1, t2, duration)


@lru_cache(maxsize=256)
def _depolarizing(p: float, arity: int) -> KrausChannel:
    return depolarizing(p, arity)


def noise_after(op: GateOp, model: DeviceNoiseModel) -> list[ChannelOp]:
    cal = model.gate_calibration(op.kind, op.targets)
    duration = cal.duration_ns if op.duration_ns is None else op.duration_ns
    out = []
    for q in op.targets:
        qc = model.qubits[q]
        out.append(ChannelOp(_relaxation(qc.t1_us, qc.t2_us, duration), (q,)))
    out.append(ChannelOp(_depolarizing(cal.error, len(op.targets)), tuple(op.targets)))
    return out


def insert_noise(circuit: Circuit, model: DeviceNoiseModel) -> NoisyCircuit:
    if circuit.n_qubits > model.n_qubits:
        raise ShapeError(f"circuit needs {circuit.n_qubits} qubits, device {model.name!r} has {model.n_qubits}")
    ops = []
    for op in circuit.ops:
        if op.kind == "CNOT" and not model.coupled(*op.targets):
            raise ConnectivityError(f"CNOT{op.targets} is not in the coupling map of {model.name!r}")
        ops.append(op)
        ops.extend(noise_after(op, model))
    return NoisyCircuit(circuit.n_qubits, tuple(ops), model.readout[: circuit.n_qubits])


def apply_channel_inplace(rho: np.ndarray, chop: ChannelOp, n_active: int) -> np.ndarray:
    """Apply a channel; closed-form kernels for the built-ins, generic Kraus otherwise.

    Returns the (possibly new) array holding the result.
    """
    ch = chop.channel
    bits = [n_active - 1 - q for q in chop.targets]
    if ch.name == "identity":
        return rho
    if ch.name in ("thermal_relaxation", "amplitude_damping", "phase_damping"):
        if ch.name == "thermal_relaxation":
            gamma, lam = ch.params
        elif ch.name == "amplitude_damping":
            gamma, lam = ch.params[0], 0.0
        else:
            gamma, lam = 0.0, ch.params[0]
        if gamma or lam:
            _kernels.relax_1q(rho, bits[0], gamma, math.sqrt((1 - gamma) * (1 - lam)))
        return rho
    if ch.name == "depolarizing":
        p = ch.params[0]
        if p == 0:
            return rho
        if len(bits) == 1:
            _kernels.depolarize_1q(rho, bits[0], p)
        else:
            _kernels.depolarize_2q(rho, bits[0], bits[1], p)
        return rho
    return apply_matrix_left_right(rho, ch.kraus, chop.targets, n_active)


def _expand_rho(rho: np.ndarray, active: int, new_active: int) -> np.ndarray:
    factor = 2 ** (new_active - active)
    dim = 2**new_active
    out = np.zeros((dim, dim), dtype=complex)
    out[::factor, ::factor] = rho
    return out


def evolve_density(ops: Sequence, n_qubits: int, initial: np.ndarray | None = None) -> np.ndarray:
    """Run gates and channels on a density matrix; returns the final ``2**n x 2**n`` array.

    Without an initial state the register starts in ``|0...0>`` and low-order
    qubits join the simulation only when an operation first touches them.
    """
    if initial is None:
        active = 1
        rho = np.zeros((2, 2), dtype=complex)
        rho[0, 0] = 1.0
    else:
        rho = np.array(initial, dtype=complex)
        active = n_qubits
    for op in ops:
        targets = op.targets
        top = max(targets) + 1
        if top > n_qubits:
            raise BoundsError(f"operation on {targets} exceeds {n_qubits} qubits")
        if top > active:
            rho = _expand_rho(rho, active, top)
            active = top
        if isinstance(op, GateOp):
            apply_op_rho(rho, op, active)
        else:
            rho = apply_channel_inplace(rho, op, active)
    if active < n_qubits:
        rho = _expand_rho(rho, active, n_qubits)
    return rho


def _initial_matrix(initial) -> np.ndarray | None:
    if isinstance(initial, PureState):
        return np.outer(initial.amplitudes, initial.amplitudes.conj())
    if isinstance(initial, DensityMatrix):
        return np.asarray(initial.matrix)
    return initial


def simulate_noisy(noisy: NoisyCircuit, initial: Union[PureState, DensityMatrix, None] = None) -> DensityMatrix:
    rho = evolve_density(noisy.ops, noisy.n_qubits, _initial_matrix(initial))
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(noisy.n_qubits, rho / np.trace(rho).real)


def measured_probabilities(noisy: NoisyCircuit, initial: Union[PureState, DensityMatrix, None] = None) -> ProbDist:
    """Final distribution after the density stage and readout confusion."""
    rho = evolve_density(noisy.ops, noisy.n_qubits, _initial_matrix(initial))
    raw = clean_probabilities(np.diagonal(rho).real)
    return ProbDist(noisy.n_qubits, clean_probabilities(apply_readout_array(raw, noisy.readout)))
