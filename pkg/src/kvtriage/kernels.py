"""Dense numeric kernels: softmax, row norms, Top-K, 1-D max pooling.

Matrices are stored float32 (matching dump precision); every reduction
accumulates in float64 and probability/norm vectors come back float64.
Public functions validate shapes and finiteness; the arithmetic lives in
the selected backend (see ``backend``).
"""

import numpy as np

from .backend import active_backend


def as_f64(x, name="array"):
    a = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def as_f64_matrix(x, name="matrix"):
    a = as_f64(x, name)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array")
    return a


def as_f64_vector(x, name="vector"):
    a = as_f64(x, name)
    if a.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    return a


def check_probability_vector(a, name="attention weights", tol=1e-6):
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    if np.any(a < -tol):
        raise ValueError(f"{name} has negative entries")
    total = float(a.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} sums to {total:.8f}, expected 1 within {tol}")


def softmax_scaled(logits, scale_divisor=1.0):
    """Softmax of ``logits / scale_divisor``, computed with max-subtraction."""
    v = as_f64_vector(logits, "logits")
    if v.size == 0:
        raise ValueError("empty logits")
    if not scale_divisor > 0:
        raise ValueError("scale_divisor must be positive")
    out = active_backend().softmax_rows(v.reshape(1, -1), float(scale_divisor))
    return out[0]


def softmax_rows_scaled(logits, scale_divisor=1.0):
    """Row-wise variant of :func:`softmax_scaled` for 2-D logits."""
    m = as_f64_matrix(logits, "logits")
    if not scale_divisor > 0:
        raise ValueError("scale_divisor must be positive")
    return active_backend().softmax_rows(m, float(scale_divisor))


def row_l1_norms(m):
    """Per-row sum of absolute values."""
    return active_backend().row_abs_sums(as_f64_matrix(m))


def row_l2_norms(m):
    """Per-row Euclidean norm."""
    return active_backend().row_euclid_norms(as_f64_matrix(m))


def top_k_indices(scores, k):
    """Indices of the ``k`` largest scores, ties going to the lower index.

    Returned sorted ascending; deterministic for any input.
    """
    s = as_f64_vector(scores, "scores")
    k = int(k)
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k > s.size:
        raise ValueError("budget exceeds entries")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-s, kind="stable")[:k]
    order.sort()
    return order.astype(np.int64)


def max_pool_1d(v, kernel):
    """Same-length sliding max; windows are truncated at the boundaries."""
    a = as_f64_vector(v, "values")
    kernel = int(kernel)
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("pooling kernel must be odd and >= 1")
    if a.size == 0:
        raise ValueError("empty vector")
    if kernel == 1:
        return a.copy()
    return active_backend().max_pool_same(a, kernel)
