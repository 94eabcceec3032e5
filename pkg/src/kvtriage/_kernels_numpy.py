"""Pure-numpy implementations of the hot numeric kernels.

Reference backend: every function here has a numba twin in
``_kernels_numba`` with identical signatures and semantics. Inputs are
C-contiguous float64 arrays (callers coerce); reductions run in float64.
"""

import numpy as np


def softmax_rows(logits, divisor):
    """Row-wise softmax of ``logits / divisor`` with max-subtraction."""
    z = logits / divisor
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def max_pool_same(v, kernel):
    """Sliding max of odd width ``kernel``, windows truncated at the edges."""
    n = v.shape[0]
    half = kernel // 2
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        lo = i - half if i - half > 0 else 0
        hi = i + half + 1 if i + half + 1 < n else n
        out[i] = v[lo:hi].max()
    return out


def row_abs_sums(m):
    return np.abs(m).sum(axis=1)


def row_euclid_norms(m):
    return np.sqrt((m * m).sum(axis=1))


def masked_renormalize(a, keep):
    """Zero evicted entries and rescale the kept ones to unit mass.

    Returns (renormalized weights, kept mass). Kept mass 0 is the caller's
    degenerate-mask case; here it yields an all-zero vector.
    """
    kept = a * keep
    mass = kept.sum()
    if mass <= 0.0:
        return np.zeros_like(a), 0.0
    return kept / mass, mass


def perturbation_distance(a, keep, pv, use_l2):
    """Distance between full and kept-only attention outputs.

    Computes ``|| (a - a') @ pv ||`` where a' renormalizes ``a`` over the
    kept entries; L1 or L2 per ``use_l2``. Kept mass must be positive.
    """
    kept = a * keep
    mass = kept.sum()
    delta = a - kept / mass
    out = delta @ pv
    if use_l2:
        return float(np.sqrt((out * out).sum()))
    return float(np.abs(out).sum())


def theta_terms(a, keep, norms):
    """Accumulate the three sums the worst-case bound is built from.

    Returns (total weighted norm mass, kept attention mass, kept weighted
    norm mass); the bound itself is assembled by the caller.
    """
    w = a * norms
    c_const = w.sum()
    kept_mass = (a * keep).sum()
    kept_weighted = (w * keep).sum()
    return float(c_const), float(kept_mass), float(kept_weighted)


def min_perturbation_exhaustive(a, pv, b, use_l2):
    """Enumerate every size-``b`` keep set; return the distance minimizer.

    Combinations are visited in lexicographic index order and only a
    strictly smaller distance replaces the incumbent, so ties resolve to
    the lexicographically first keep set.
    """
    n = a.shape[0]
    idx = np.arange(b, dtype=np.int64)
    keep = np.zeros(n, dtype=np.uint8)
    best_keep = np.zeros(n, dtype=np.uint8)
    best = np.inf
    while True:
        keep[:] = 0
        keep[idx] = 1
        dist = perturbation_distance(a, keep, pv, use_l2)
        if dist < best:
            best = dist
            best_keep[:] = keep
        # advance to the next combination
        i = b - 1
        while i >= 0 and idx[i] == i + n - b:
            i -= 1
        if i < 0:
            break
        idx[i] += 1
        for j in range(i + 1, b):
            idx[j] = idx[j - 1] + 1
    return best_keep, float(best)


def min_stage2_theta_hat_exhaustive(weights, free, b2, c_prime, factor):
    """Enumerate every size-``b2`` completion over ``free`` indices.

    ``weights[i]`` is the attention-times-norm weight of entry i; the bound
    for a completion S is ``c_prime - factor * sum(weights[S])``. Returns
    the uint8 keep vector of the minimizing completion (lexicographically
    first on ties).
    """
    n = weights.shape[0]
    m = free.shape[0]
    best_keep = np.zeros(n, dtype=np.uint8)
    if b2 == 0:
        return best_keep
    idx = np.arange(b2, dtype=np.int64)
    best = np.inf
    while True:
        s = 0.0
        for j in range(b2):
            s += weights[free[idx[j]]]
        val = c_prime - factor * s
        if val < best:
            best = val
            best_keep[:] = 0
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
