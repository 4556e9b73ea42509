"""Distances between distributions, state fidelity and decay-rate fitting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .state import DensityMatrix, ProbDist, PureState

SMOOTHING = 1e-12
FLOOR = 1e-9


def _probs(dist) -> np.ndarray:
    return np.asarray(dist.probs if isinstance(dist, ProbDist) else dist, dtype=float)


def chi2_to_uniform(dist) -> float:
    """``sum_i (p_i - u)^2 / u`` with ``u = 2**-n``; zero only for the uniform distribution."""
    p = _probs(dist)
    u = 1.0 / p.shape[-1]
    return float(np.sum((p - u) ** 2) / u)


def chi2_between(dist, ref) -> float:
    """``sum_i (p_i - r_i)^2 / (r_i + 1e-12)``.  Not symmetric in its arguments."""
    p, r = _probs(dist), _probs(ref)
    if p.shape != r.shape:
        raise ShapeError(f"distribution sizes differ: {p.shape} vs {r.shape}")
    return float(np.sum((p - r) ** 2 / (r + SMOOTHING)))


def total_variation(dist, ref) -> float:
    p, r = _probs(dist), _probs(ref)
    if p.shape != r.shape:
        raise ShapeError(f"distribution sizes differ: {p.shape} vs {r.shape}")
    return float(0.5 * np.sum(np.abs(p - r)))


def fidelity(rho: DensityMatrix, target: PureState) -> float:
    """``<psi|rho|psi>``, clipped into [0, 1]."""
    if rho.n_qubits != target.n_qubits:
        raise ShapeError("state sizes differ")
    psi = target.amplitudes
    value = float(np.real(np.vdot(psi, rho.matrix @ psi)))
    if value < -1e-12 or value > 1 + 1e-12:
        raise DomainError(f"fidelity {value} outside [0, 1]")
    return min(1.0, max(0.0, value))


@dataclass
class DecaySeries:
    layer_index: np.ndarray
    value: np.ndarray
    fitted_rate: float | None = None
    fit_r2: float | None = None

    def __post_init__(self):
        self.layer_index = np.asarray(self.layer_index, dtype=int)
        self.value = np.asarray(self.value, dtype=float)
        if self.layer_index.shape != self.value.shape:
            raise ShapeError("layer_index and value must have equal length")
        if np.any(np.diff(self.layer_index) <= 0):
            raise DomainError("layer indices must be strictly increasing")

    def pre_floor(self) -> "DecaySeries":
        """Points before the series first drops below the 1e-9 noise floor."""
        below = np.nonzero(self.value < FLOOR)[0]
        stop = below[0] if below.size else self.value.size
        return DecaySeries(self.layer_index[:stop], self.value[:stop])


def fit_exponential_decay(series: DecaySeries) -> tuple[float, float]:
    """Least-squares line through ``(layer, ln value)``; returns ``(rate, r2)``.

    ``rate`` is the negated slope.  A constant series has no variance to
    explain and reports ``r2 = 0``.
    """
    x = series.layer_index.astype(float)
    y = series.value
    if x.size < 5:
        raise DomainError("need at least 5 points to fit a decay")
    if np.any(y <= 0):
        raise DomainError("decay fit needs strictly positive values")
    logy = np.log(y)
    slope, intercept = np.polyfit(x, logy, 1)
    resid = logy - (slope * x + intercept)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    if ss_tot <= 1e-24:
        return 0.0, 0.0
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot
    rate = -float(slope)
    series.fitted_rate, series.fit_r2 = rate, r2
    return rate, r2
