"""Numba-compiled twins of the kernels in ``_kernels_numpy``.

Same signatures, same semantics, explicit loops so the JIT emits tight
machine code. ``nogil=True`` lets per-head work fan out across threads;
``cache=True`` persists compiled artifacts between runs.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def softmax_rows(logits, divisor):
    rows, cols = logits.shape
    out = np.empty((rows, cols), dtype=np.float64)
    for r in range(rows):
        m = logits[r, 0]
        for c in range(1, cols):
            if logits[r, c] > m:
                m = logits[r, c]
        m /= divisor
        total = 0.0
        for c in range(cols):
            e = np.exp(logits[r, c] / divisor - m)
            out[r, c] = e
            total += e
        for c in range(cols):
            out[r, c] /= total
    return out


@njit(**_JIT)
def max_pool_same(v, kernel):
    n = v.shape[0]
    half = kernel // 2
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        lo = i - half
        if lo < 0:
            lo = 0
        hi = i + half + 1
        if hi > n:
            hi = n
        m = v[lo]
        for j in range(lo + 1, hi):
            if v[j] > m:
                m = v[j]
        out[i] = m
    return out


@njit(**_JIT)
def row_abs_sums(m):
    rows = m.shape[0]
    out = np.empty(rows, dtype=np.float64)
    for r in range(rows):
        s = 0.0
        for c in range(m.shape[1]):
            s += abs(m[r, c])
        out[r] = s
    return out


@njit(**_JIT)
def row_euclid_norms(m):
    rows = m.shape[0]
    out = np.empty(rows, dtype=np.float64)
    for r in range(rows):
        s = 0.0
        for c in range(m.shape[1]):
            s += m[r, c] * m[r, c]
        out[r] = np.sqrt(s)
    return out


@njit(**_JIT)
def masked_renormalize(a, keep):
    n = a.shape[0]
    out = np.zeros(n, dtype=np.float64)
    mass = 0.0
    for i in range(n):
        if keep[i]:
            mass += a[i]
    if mass <= 0.0:
        return out, 0.0
    for i in range(n):
        if keep[i]:
            out[i] = a[i] / mass
    return out, mass


@njit(**_JIT)
def perturbation_distance(a, keep, pv, use_l2):
    n, d = pv.shape
    mass = 0.0
    for i in range(n):
        if keep[i]:
            mass += a[i]
    acc = 0.0
    for c in range(d):
        s = 0.0
        for i in range(n):
            if keep[i]:
                s += (a[i] - a[i] / mass) * pv[i, c]
            else:
                s += a[i] * pv[i, c]
        if use_l2:
            acc += s * s
        else:
            acc += abs(s)
    if use_l2:
        return np.sqrt(acc)
    return acc


@njit(**_JIT)
def theta_terms(a, keep, norms):
    c_const = 0.0
    kept_mass = 0.0
    kept_weighted = 0.0
    for i in range(a.shape[0]):
        w = a[i] * norms[i]
        c_const += w
        if keep[i]:
            kept_mass += a[i]
            kept_weighted += w
    return c_const, kept_mass, kept_weighted


@njit(**_JIT)
def min_perturbation_exhaustive(a, pv, b, use_l2):
    n = a.shape[0]
    idx = np.arange(b)
    keep = np.zeros(n, dtype=np.uint8)
    best_keep = np.zeros(n, dtype=np.uint8)
    best = np.inf
    while True:
        for i in range(n):
            keep[i] = 0
        for j in range(b):
            keep[idx[j]] = 1
        dist = perturbation_distance(a, keep, pv, use_l2)
        if dist < best:
            best = dist
            for i in range(n):
                best_keep[i] = keep[i]
        i = b - 1
        while i >= 0 and idx[i] == i + n - b:
            i -= 1
        if i < 0:
            break
        idx[i] += 1
        for j in range(i + 1, b):
            idx[j] = idx[j - 1] + 1
    return best_keep, best


@njit(**_JIT)
def min_stage2_theta_hat_exhaustive(weights, free, b2, c_prime, factor):
    n = weights.shape[0]
    m = free.shape[0]
    best_keep = np.zeros(n, dtype=np.uint8)
    if b2 == 0:
        return best_keep
    idx = np.arange(b2)
    best = np.inf
    while True:
        s = 0.0
        for j in range(b2):
            s += weights[free[idx[j]]]
        val = c_prime - factor * s
        if val < best:
            best = val
            for i in range(n):
                best_keep[i] = 0
            for j in range(b2):
                best_keep[free[idx[j]]] = 1
        i = b2 - 1
        while i >= 0 and idx[i] == i + m - b2:
            i -= 1
        if i < 0:
            break
        idx[i] += 1
        for j in range(i + 1, b2):
            idx[j] = idx[j - 1] + 1
    return best_keep
