"""Dense pure-state and density-matrix simulation.

Bit ordering: qubit 0 is the most significant bit of a basis index, so for
three qubits the index of ``|q0 q1 q2>`` is ``4*q0 + 2*q1 + q2``.  Every
module in the package relies on this convention.

Values are immutable from the caller's point of view: each operation returns
a fresh state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .errors import (
    BoundsError,
    CapacityError,
    DomainError,
    NormalizationError,
    NumericalIntegrityError,
    ShapeError,
)
from .rng import make_rng

MAX_QUBITS = 12

GATE_ARITY = {"RX": 1, "RY": 1, "RZ": 1, "Rot": 1, "H": 1, "X": 1, "CNOT": 2}
GATE_NPARAMS = {"RX": 1, "RY": 1, "RZ": 1, "Rot": 3, "H": 0, "X": 0, "CNOT": 0}
_KIND_ALIASES = {k.lower(): k for k in GATE_ARITY} | {"cx": "CNOT"}


def canonical_kind(kind: str) -> str:
    try:
        return _KIND_ALIASES[kind.lower()]
    except (KeyError, AttributeError):
        raise DomainError(f"unknown gate kind {kind!r}") from None


def _check_qubits(n_qubits: int) -> int:
    n = int(n_qubits)
    if not 1 <= n <= MAX_QUBITS:
        raise CapacityError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    return n


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PureState:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        n = _check_qubits(self.n_qubits)
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (2**n,):
            raise ShapeError(f"expected {2**n} amplitudes, got shape {amps.shape}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-10:
            raise NormalizationError(f"state norm {norm!r} is not 1")
        object.__setattr__(self, "amplitudes", _frozen(amps))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    n_qubits: int
    matrix: np.ndarray

    def __post_init__(self):
        n = _check_qubits(self.n_qubits)
        mat = np.array(self.matrix, dtype=complex)
        if mat.shape != (2**n, 2**n):
            raise ShapeError(f"expected {2**n}x{2**n} matrix, got shape {mat.shape}")
        if np.max(np.abs(mat - mat.conj().T), initial=0.0) > 1e-10:
            raise NumericalIntegrityError("density matrix is not Hermitian")
        tr = np.trace(mat).real
        if abs(tr - 1.0) > 1e-10:
            raise NumericalIntegrityError(f"density matrix trace {tr!r} is not 1")
        object.__setattr__(self, "matrix", _frozen(mat))

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        dim = 2 ** _check_qubits(n_qubits)
        return cls(n_qubits, np.eye(dim) / dim)


@dataclass(frozen=True)
class GateOp:
    """A gate on ordered qubit indices.

    For CNOT, ``targets`` is ``(control, target)``.  ``params`` are angles in
    radians; batched simulation also accepts 1-D arrays here, one angle per
    batch member.
    """

    kind: str
    targets: tuple
    params: tuple = ()
    duration_ns: float | None = None

    def __post_init__(self):
        kind = canonical_kind(self.kind)
        targets = tuple(int(t) for t in self.targets)
        params = tuple(self.params)
        if len(targets) != GATE_ARITY[kind]:
            raise ShapeError(f"{kind} acts on {GATE_ARITY[kind]} qubit(s), got {targets}")
        if len(set(targets)) != len(targets):
            raise BoundsError(f"{kind} targets must be distinct, got {targets}")
        if any(t < 0 for t in targets):
            raise BoundsError(f"negative qubit index in {targets}")
        if len(params) != GATE_NPARAMS[kind]:
            raise ShapeError(f"{kind} takes {GATE_NPARAMS[kind]} parameter(s), got {len(params)}")
        if self.duration_ns is not None and self.duration_ns < 0:
            raise DomainError("duration_ns must be >= 0")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "params", params)


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    ops: tuple = field(default_factory=tuple)

    def __post_init__(self):
        n = _check_qubits(self.n_qubits)
        ops = tuple(self.ops)
        for op in ops:
            if max(op.targets) >= n:
                raise BoundsError(f"{op.kind} on {op.targets} exceeds {n} qubits")
        object.__setattr__(self, "ops", ops)

    def __len__(self):
        return len(self.ops)

    def count(self, kind: str) -> int:
        kind = canonical_kind(kind)
        return sum(op.kind == kind for op in self.ops)


@dataclass(frozen=True, eq=False)
class ProbDist:
    n_qubits: int
    probs: np.ndarray

    def __post_init__(self):
        n = int(self.n_qubits)
        p = np.array(self.probs, dtype=float)
        if p.shape != (2**n,):
            raise ShapeError(f"expected {2**n} probabilities, got shape {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise NumericalIntegrityError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", _frozen(p))


State = Union[PureState, DensityMatrix]


# -- gate matrices -----------------------------------------------------------

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


def _rx(t):
    t = np.asarray(t, dtype=float)
    c, s = np.cos(t / 2), np.sin(t / 2)
    out = np.empty(t.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -1j * s
    out[..., 1, 0] = -1j * s
    out[..., 1, 1] = c
    return out


def _ry(t):
    t = np.asarray(t, dtype=float)
    c, s = np.cos(t / 2), np.sin(t / 2)
    out = np.empty(t.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def _rz(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-0.5j * t)
    out[..., 1, 1] = np.exp(0.5j * t)
    return out


def gate_matrix(kind: str, params: Sequence = ()) -> np.ndarray:
    """Unitary of a gate; array-valued params give a stack of matrices.

    ``Rot(phi, theta, omega) = RZ(omega) @ RY(theta) @ RZ(phi)``.
    """
    kind = canonical_kind(kind)
    if len(params) != GATE_NPARAMS[kind]:
        raise ShapeError(f"{kind} takes {GATE_NPARAMS[kind]} parameter(s)")
    if kind == "RX":
        return _rx(params[0])
    if kind == "RY":
        return _ry(params[0])
    if kind == "RZ":
        return _rz(params[0])
    if kind == "Rot":
        phi, theta, omega = params
        return _rz(omega) @ _ry(theta) @ _rz(phi)
    if kind == "H":
        return _H.copy()
    if kind == "X":
        return _X.copy()
    return _CNOT.copy()


# -- state-vector engine -----------------------------------------------------


@lru_cache(maxsize=None)
def cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    pc = n_qubits - 1 - control
    pt = n_qubits - 1 - target
    perm = np.where((idx >> pc) & 1, idx ^ (1 << pt), idx)
    return _frozen(perm)


def apply_op_vec(vecs: np.ndarray, op: GateOp, n_qubits: int) -> np.ndarray:
    """Apply ``op`` to a batch of state vectors shaped ``(B, 2**n)``."""
    if max(op.targets) >= n_qubits:
        raise BoundsError(f"{op.kind} on {op.targets} exceeds {n_qubits} qubits")
    if op.kind == "CNOT":
        return vecs[:, cnot_permutation(n_qubits, *op.targets)]
    return apply_matrix_vec(vecs, gate_matrix(op.kind, op.params), op.targets[0], n_qubits)


def apply_matrix_vec(vecs: np.ndarray, mat: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Single-qubit matrix (or a ``(B, 2, 2)`` stack) on ``qubit`` of ``(B, 2**n)`` vectors."""
    batch = vecs.shape[0]
    view = vecs.reshape(batch, 2**qubit, 2, 2 ** (n_qubits - qubit - 1))
    if mat.ndim == 2:
        out = np.einsum("ij,bajc->baic", mat, view)
    else:
        out = np.einsum("bij,bajc->baic", mat, view)
    return out.reshape(batch, 2**n_qubits)


def _expand_vec(vecs: np.ndarray, active: int, new_active: int) -> np.ndarray:
    factor = 2 ** (new_active - active)
    out = np.zeros((vecs.shape[0], 2**new_active), dtype=complex)
    out[:, ::factor] = vecs
    return out


def run_statevector(
    ops: Sequence[GateOp], n_qubits: int, initial: np.ndarray | None = None, batch: int = 1
) -> np.ndarray:
    """Evolve a batch of state vectors through ``ops``; returns ``(B, 2**n)``.

    Starting from ``|0...0>`` (``initial=None``), qubits are activated lazily:
    the low-order qubits no gate has touched yet are still ``|0>``, so early
    gates run on a smaller register.
    """
    n = _check_qubits(n_qubits)
    if initial is None:
        active = 1
        vecs = np.zeros((batch, 2), dtype=complex)
        vecs[:, 0] = 1.0
    else:
        vecs = np.array(initial, dtype=complex).reshape(-1, 2**n)
        active = n
    for op in ops:
        top = max(op.targets) + 1
        if top > n:
            raise BoundsError(f"{op.kind} on {op.targets} exceeds {n} qubits")
        if top > active:
            vecs = _expand_vec(vecs, active, top)
            active = top
        vecs = apply_op_vec(vecs, op, active)
    if active < n:
        vecs = _expand_vec(vecs, active, n)
    return vecs


def simulate(circuit: Circuit, initial: PureState | None = None) -> PureState:
    """Noise-free evolution of a circuit from ``|0...0>`` (or ``initial``)."""
    init = None if initial is None else initial.amplitudes
    if initial is not None and initial.n_qubits != circuit.n_qubits:
        raise ShapeError("initial state and circuit disagree on qubit count")
    vec = run_statevector(circuit.ops, circuit.n_qubits, init)[0]
    return PureState(circuit.n_qubits, vec / np.linalg.norm(vec))


# -- density-matrix helpers --------------------------------------------------


def apply_op_rho(rho: np.ndarray, op: GateOp, n_qubits: int) -> None:
    """Apply ``op`` to a single density matrix in place."""
    if max(op.targets) >= n_qubits:
        raise BoundsError(f"{op.kind} on {op.targets} exceeds {n_qubits} qubits")
    if op.kind == "CNOT":
        c, t = op.targets
        _kernels.cnot(rho, n_qubits - 1 - c, n_qubits - 1 - t)
        return
    mat = np.ascontiguousarray(gate_matrix(op.kind, op.params), dtype=complex)
    _kernels.unitary_1q(rho, mat, n_qubits - 1 - op.targets[0])


def apply_matrix_left_right(rho: np.ndarray, mats: Sequence[np.ndarray], targets, n_qubits: int):
    """Generic ``sum_k K rho K^dagger`` on arbitrary target qubits (tensor contraction)."""
    targets = list(targets)
    arity = len(targets)
    tensor = rho.reshape((2,) * (2 * n_qubits))
    row_axes = targets
    col_axes = [n_qubits + t for t in targets]
    out = np.zeros_like(tensor)
    for k in mats:
        kt = np.asarray(k, dtype=complex).reshape((2,) * (2 * arity))
        tmp = np.tensordot(kt, tensor, axes=(list(range(arity, 2 * arity)), row_axes))
        tmp = np.moveaxis(tmp, list(range(arity)), row_axes)
        tmp = np.tensordot(kt.conj(), tmp, axes=(list(range(arity, 2 * arity)), col_axes))
        tmp = np.moveaxis(tmp, list(range(arity)), col_axes)
        out += tmp
    return out.reshape(2**n_qubits, 2**n_qubits)


# -- public single-state API -------------------------------------------------


def new_zero_state(n_qubits: int) -> PureState:
    n = _check_qubits(n_qubits)
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = 1.0
    return PureState(n, amps)


def apply_gate(state: State, op: GateOp) -> State:
    """``U|psi>`` for pure states, ``U rho U^dagger`` for density matrices."""
    n = state.n_qubits
    if max(op.targets) >= n:
        raise BoundsError(f"{op.kind} on {op.targets} exceeds {n} qubits")
    if isinstance(state, PureState):
        vec = apply_op_vec(state.amplitudes[None, :], op, n)[0]
        return PureState(n, vec)
    rho = np.array(state.matrix, dtype=complex)
    apply_op_rho(rho, op, n)
    return DensityMatrix(n, rho)


def to_density(state: PureState) -> DensityMatrix:
    a = state.amplitudes
    return DensityMatrix(state.n_qubits, np.outer(a, a.conj()))


def apply_channel(rho: DensityMatrix, channel, targets: Sequence[int]) -> DensityMatrix:
    """``rho -> sum_k K_k rho K_k^dagger`` on ``targets`` (qubit order = Kraus order)."""
    targets = [int(t) for t in targets]
    if len(targets) != channel.arity:
        raise ShapeError(f"channel arity {channel.arity} does not match targets {targets}")
    n = rho.n_qubits
    if any(t < 0 or t >= n for t in targets) or len(set(targets)) != len(targets):
        raise BoundsError(f"invalid channel targets {targets} for {n} qubits")
    out = apply_matrix_left_right(np.asarray(rho.matrix), channel.kraus, targets, n)
    return DensityMatrix(n, out)


def clean_probabilities(raw: np.ndarray) -> np.ndarray:
    """Clip tiny negatives; renormalize drift below 1e-6, refuse anything larger."""
    p = np.clip(np.asarray(raw, dtype=float), 0.0, None)
    total = p.sum(axis=-1, keepdims=True)
    drift = np.max(np.abs(total - 1.0))
    if drift >= 1e-6:
        raise NumericalIntegrityError(f"probability mass drifted by {drift:.3g}")
    if drift > 1e-12:
        p = p / total
    return p


def probabilities(state: State) -> ProbDist:
    if isinstance(state, PureState):
        raw = np.abs(state.amplitudes) ** 2
    else:
        raw = np.diagonal(state.matrix).real
    return ProbDist(state.n_qubits, clean_probabilities(raw))


@lru_cache(maxsize=None)
def z_signs(n_qubits: int) -> np.ndarray:
    """``(2**n, n)`` matrix of Z eigenvalues: +1 where the qubit's bit is 0."""
    idx = np.arange(2**n_qubits)[:, None]
    shifts = n_qubits - 1 - np.arange(n_qubits)[None, :]
    return _frozen(1.0 - 2.0 * ((idx >> shifts) & 1))


def z_expectations(probs: np.ndarray, n_qubits: int) -> np.ndarray:
    """All single-qubit <Z> values from (a batch of) basis distributions."""
    return np.asarray(probs) @ z_signs(n_qubits)


def expect_z(state: State, qubit: int) -> float:
    n = state.n_qubits
    if not 0 <= qubit < n:
        raise BoundsError(f"qubit {qubit} out of range for {n} qubits")
    p = probabilities(state).probs
    return float(p @ z_signs(n)[:, qubit])


def sample_counts(dist: ProbDist, shots: int, seed: int) -> dict[int, int]:
    if int(shots) < 1:
        raise DomainError("shots must be >= 1")
    rng = make_rng(seed, 0x5A3)
    counts = rng.multinomial(int(shots), dist.probs)
    return {int(i): int(c) for i, c in enumerate(counts) if c}


def counts_to_probs(counts: dict[int, int], n_qubits: int) -> np.ndarray:
    p = np.zeros(2**n_qubits)
    for idx, c in counts.items():
        p[idx] = c
    return p / p.sum()
