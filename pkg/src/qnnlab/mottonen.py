"""Amplitude embedding of non-negative real vectors with uniformly controlled RY.

Level ``k`` of the construction rotates qubit ``k`` conditioned on qubits
``0..k-1``; each such multiplexer is realized as alternating RY and CNOT gates
whose controls follow a cyclic gray code.  No gate cancellation is performed,
so gate counts and layout are fixed for a given register size.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, NormalizationError, ShapeError
from .state import Circuit, GateOp


@dataclass(frozen=True, eq=False)
class AngleTree:
    """``levels[k]`` holds the ``2**k`` angles of the rotation on qubit ``k``.

    With a batch of inputs each level has shape ``(B, 2**k)``.
    """

    levels: tuple

    @property
    def n_qubits(self) -> int:
        return len(self.levels)


def _validate_amplitudes(amplitudes) -> np.ndarray:
    amps = np.asarray(amplitudes, dtype=float)
    size = amps.shape[-1] if amps.ndim else 0
    if amps.ndim not in (1, 2) or size < 2 or size & (size - 1):
        raise ShapeError(f"amplitude vector length must be a power of two >= 2, got shape {amps.shape}")
    if not np.all(np.isfinite(amps)):
        raise DomainError("amplitudes must be finite")
    if np.any(amps < 0):
        raise DomainError("only non-negative real amplitudes are supported")
    norms = np.linalg.norm(amps, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise NormalizationError("amplitude vector must have unit L2 norm")
    return amps


def compute_angle_tree(amplitudes) -> AngleTree:
    """Rotation angles ``2*arcsin(|right half| / |parent block|)`` per block.

    Blocks with zero norm get angle 0.  Accepts one vector or a ``(B, 2**n)``
    batch.
    """
    amps = _validate_amplitudes(amplitudes)
    n = amps.shape[-1].bit_length() - 1
    lead = amps.shape[:-1]
    levels = []
    for k in range(n):
        blocks = amps.reshape(lead + (2**k, 2, 2 ** (n - k - 1)))
        left = np.linalg.norm(blocks[..., 0, :], axis=-1)
        right = np.linalg.norm(blocks[..., 1, :], axis=-1)
        # atan2 form of 2*arcsin(right/parent); atan2(0, 0) == 0 covers empty blocks
        levels.append(2.0 * np.arctan2(right, left))
    return AngleTree(tuple(levels))


def gray_code(k: int) -> np.ndarray:
    i = np.arange(2**k)
    return i ^ (i >> 1)


@lru_cache(maxsize=None)
def _rotation_transform(k: int) -> np.ndarray:
    """``M[i, j] = 2**-k * (-1)**popcount(j & g_i)`` mapping multiplexer angles to RY angles."""
    g = gray_code(k)
    j = np.arange(2**k)
    parity = np.array([[bin(int(gi) & int(jj)).count("1") & 1 for jj in j] for gi in g])
    m = (1.0 - 2.0 * parity) / 2**k
    m.flags.writeable = False
    return m


@lru_cache(maxsize=None)
def _cnot_controls(k: int) -> tuple:
    """Index into ``controls`` of the CNOT following each RY (cycle closes on the MSB)."""
    out = []
    for i in range(2**k):
        nxt = (i + 1) % 2**k
        changed = int(gray_code(k)[i] ^ gray_code(k)[nxt])
        bit = changed.bit_length() - 1
        out.append(k - 1 - bit)
    return tuple(out)


def multiplexed_ry(angles, controls, target: int) -> list[GateOp]:
    """RY on ``target`` by ``angles[x]`` when the controls read ``x`` (``controls[0]`` = MSB).

    ``angles`` may carry a trailing batch axis ``(2**k, B)`` for batched synthesis.
    """
    angles = np.asarray(angles, dtype=float)
    controls = [int(c) for c in controls]
    k = len(controls)
    if angles.shape[0] != 2**k:
        raise ShapeError(f"{k} controls need {2**k} angles, got {angles.shape[0]}")
    if k == 0:
        return [GateOp("RY", (target,), (_param(angles[0]),))]
    rotated = np.tensordot(_rotation_transform(k), angles, axes=(1, 0))
    ops = []
    for i, ci in enumerate(_cnot_controls(k)):
        ops.append(GateOp("RY", (target,), (_param(rotated[i]),)))
        ops.append(GateOp("CNOT", (controls[ci], target)))
    return ops


def _param(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def prep_ops(amplitudes) -> list[GateOp]:
    """Gate sequence preparing ``amplitudes`` from ``|0...0>``.

    A ``(B, 2**n)`` batch yields one shared gate layout whose RY angles are
    length-``B`` arrays.
    """
    tree = compute_angle_tree(amplitudes)
    ops = []
    for k, level in enumerate(tree.levels):
        angles = level.T if level.ndim == 2 else level
        ops.extend(multiplexed_ry(angles, range(k), k))
    return ops


def synthesize_prep(amplitudes) -> Circuit:
    amps = np.asarray(amplitudes, dtype=float)
    if amps.ndim != 1:
        raise ShapeError("synthesize_prep takes a single amplitude vector")
    ops = prep_ops(amps)
    return Circuit(amps.size.bit_length() - 1, tuple(ops))
