"""In-place numba kernels for dense density matrices.

All kernels address a qubit by its *bit position* ``p`` inside the basis
index (``p = n - 1 - qubit`` under the MSB-first convention) and mutate
``rho`` in place.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _insert_zero(x, p):
    lo = x & ((1 << p) - 1)
    return ((x >> p) << (p + 1)) | lo


@njit(cache=True)
def unitary_1q(rho, u, p):
    dim = rho.shape[0]
    s = 1 << p
    half = dim // 2
    u00 = u[0, 0]
    u01 = u[0, 1]
    u10 = u[1, 0]
    u11 = u[1, 1]
    c00 = np.conj(u00)
    c01 = np.conj(u01)
    c10 = np.conj(u10)
    c11 = np.conj(u11)
    for ii in range(half):
        i = _insert_zero(ii, p)
        r0 = rho[i]
        r1 = rho[i + s]
        for jj in range(half):
            j = _insert_zero(jj, p)
            a = r0[j]
            b = r0[j + s]
            c = r1[j]
            d = r1[j + s]
            t00 = u00 * a + u01 * c
            t01 = u00 * b + u01 * d
            t10 = u10 * a + u11 * c
            t11 = u10 * b + u11 * d
            r0[j] = t00 * c00 + t01 * c01
            r0[j + s] = t00 * c10 + t01 * c11
            r1[j] = t10 * c00 + t11 * c01
            r1[j + s] = t10 * c10 + t11 * c11


@njit(cache=True)
def cnot(rho, pc, pt):
    dim = rho.shape[0]
    sc = 1 << pc
    st = 1 << pt
    # rows
    for i in range(dim):
        if (i & sc) and not (i & st):
            k = i | st
            for j in range(dim):
                tmp = rho[i, j]
                rho[i, j] = rho[k, j]
                rho[k, j] = tmp
    # columns
    for i in range(dim):
        row = rho[i]
        for j in range(dim):
            if (j & sc) and not (j & st):
                k = j | st
                tmp = row[j]
                row[j] = row[k]
                row[k] = tmp


@njit(cache=True)
def relax_1q(rho, p, gamma, coherence):
    """Amplitude damping by ``gamma`` and coherence scaling by ``coherence``."""
    dim = rho.shape[0]
    s = 1 << p
    half = dim // 2
    keep = 1.0 - gamma
    for ii in range(half):
        i = _insert_zero(ii, p)
        r0 = rho[i]
        r1 = rho[i + s]
        for jj in range(half):
            j = _insert_zero(jj, p)
            r0[j] += gamma * r1[j + s]
            r1[j + s] *= keep
            r0[j + s] *= coherence
            r1[j] *= coherence


@njit(cache=True)
def depolarize_1q(rho, p, prob):
    dim = rho.shape[0]
    s = 1 << p
    half = dim // 2
    keep = 1.0 - prob
    mix = 0.5 * prob
    for ii in range(half):
        i = _insert_zero(ii, p)
        r0 = rho[i]
        r1 = rho[i + s]
        for jj in range(half):
            j = _insert_zero(jj, p)
            t = r0[j] + r1[j + s]
            r0[j] = keep * r0[j] + mix * t
            r1[j + s] = keep * r1[j + s] + mix * t
            r0[j + s] *= keep
            r1[j] *= keep


@njit(cache=True)
def depolarize_2q(rho, pa, pb, prob):
    dim = rho.shape[0]
    lo = min(pa, pb)
    hi = max(pa, pb)
    sa = 1 << pa
    sb = 1 << pb
    quarter = dim // 4
    keep = 1.0 - prob
    mix = 0.25 * prob
    offs = np.array([0, sb, sa, sa + sb])
    for ii in range(quarter):
        i = _insert_zero(_insert_zero(ii, lo), hi)
        for jj in range(quarter):
            j = _insert_zero(_insert_zero(jj, lo), hi)
            t = 0j
            for x in range(4):
                t += rho[i + offs[x], j + offs[x]]
            for x in range(4):
                for y in range(4):
                    rho[i + offs[x], j + offs[y]] *= keep
                rho[i + offs[x], j + offs[x]] += mix * t
