"""Critical-entry selection under a budget.

Two production selectors plus exhaustive oracles used to audit them:

* ``select_attention_only`` — plain Top-K on attention weights.
* ``select_perturbation_constrained`` — two-stage greedy: stage 1 spends
  ``b' = max(1, floor(b * alpha))`` of the budget on the largest attention
  weights; stage 2 spends the rest on the largest ``(a_i + eps) * norm_i``
  scores among the remainder, folding the projected-value row norms in.
  ``eps`` only stabilizes the stage-2 ranking; bounds always use raw
  attention weights.

The oracles enumerate keep sets outright (guarded to n <= 22) and break
ties lexicographically, so their output is reproducible and independent
of the greedy code paths they check.
"""

import math
from dataclasses import dataclass

import numpy as np

from .backend import active_backend
from .bounds import SelectionMask, _check_metric, theta_hat_bound
from .kernels import as_f64_matrix, as_f64_vector, check_probability_vector, top_k_indices

ORACLE_MAX_ENTRIES = 22

DEFAULT_ALPHA = 0.5
DEFAULT_EPSILON = 1e-4


@dataclass(frozen=True)
class SelectionConfig:
    budget: int
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    metric: str = "l1"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be nonnegative")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        _check_metric(self.metric)


@dataclass(frozen=True)
class StagedSelection:
    """A selection with its stage-1/stage-2 split retained."""

    mask: SelectionMask
    stage1: SelectionMask
    stage2: SelectionMask


def stage_budgets(budget, alpha):
    """Split ``budget`` into (stage-1, stage-2) shares.

    Stage 1 is kept nonempty so the stage-1 mass sigma is always defined,
    even at budget 1. The tiny floor-guard absorbs float dust in
    ``budget * alpha``.
    """
    b1 = int(math.floor(budget * alpha + 1e-9))
    b1 = min(budget, max(1, b1))
    return b1, budget - b1


def _checked_weights(a, n_budget):
    a = as_f64_vector(a, "attention weights")
    check_probability_vector(a)
    if n_budget > a.shape[0]:
        raise ValueError("budget exceeds entries")
    return a


def select_attention_only(a, budget):
    """Keep the ``budget`` largest attention weights."""
    a = _checked_weights(a, budget)
    return SelectionMask.from_indices(a.shape[0], top_k_indices(a, budget))


def select_perturbation_constrained(a, value_norms, cfg):
    """Two-stage greedy selection constraining the worst-case perturbation."""
    a = _checked_weights(a, cfg.budget)
    norms = as_f64_vector(value_norms, "value_norms")
    if norms.shape[0] != a.shape[0]:
        raise ValueError("value_norms length must match entry count")
    n = a.shape[0]
    b1, b2 = stage_budgets(cfg.budget, cfg.alpha)
    stage1 = SelectionMask.from_indices(n, top_k_indices(a, b1))
    free = np.flatnonzero(~stage1.keep)
    scores = (a[free] + cfg.epsilon) * norms[free]
    stage2 = SelectionMask.from_indices(n, free[top_k_indices(scores, b2)])
    mask = SelectionMask.from_keep(stage1.keep | stage2.keep)
    return StagedSelection(mask=mask, stage1=stage1, stage2=stage2)


def _check_oracle_size(n):
    if n > ORACLE_MAX_ENTRIES:
        raise ValueError(
            f"instance too large for oracle: {n} entries > {ORACLE_MAX_ENTRIES}"
        )


def brute_force_min_perturbation(a, projected_values, budget, metric="l1"):
    """Enumerate all C(n, budget) keep sets; return the perturbation minimizer.

    Returns ``(mask, achieved_l)``. Lexicographically first keep set wins
    ties.
    """
    use_l2 = _check_metric(metric)
    a = _checked_weights(a, budget)
    if budget < 1:
        raise ValueError("budget must be at least 1")
    pv = as_f64_matrix(projected_values, "projected_values")
    if pv.shape[0] != a.shape[0]:
        raise ValueError("projected_values row count must match entry count")
    _check_oracle_size(a.shape[0])
    keep_u8, best = active_backend().min_perturbation_exhaustive(
        a, pv, int(budget), use_l2
    )
    return SelectionMask.from_keep(keep_u8.astype(bool)), float(best)


def brute_force_min_theta_hat(a, value_norms, stage1, b_stage2):
    """Enumerate all stage-2 completions; return the bound minimizer.

    The stage-2 objective is evaluated literally for every completion
    (no Top-K shortcut), which is what makes this an oracle for the
    greedy stage 2.
    """
    a = as_f64_vector(a, "attention weights")
    check_probability_vector(a)
    norms = as_f64_vector(value_norms, "value_norms")
    if norms.shape[0] != a.shape[0] or stage1.n != a.shape[0]:
        raise ValueError("length mismatch between weights, norms and stage-1 mask")
    _check_oracle_size(a.shape[0])
    free = np.flatnonzero(~stage1.keep).astype(np.int64)
    b2 = int(b_stage2)
    if b2 < 0 or b2 > free.shape[0]:
        raise ValueError("stage-2 budget exceeds remaining entries")
    sigma = float(a[stage1.keep].sum())
    if sigma <= 0.0:
        raise ValueError("degenerate mask: stage-1 carries zero attention mass")
    factor = 2.0 - 1.0 / sigma
    c_const = float((a * norms).sum())
    c_prime = c_const - factor * float((a * norms)[stage1.keep].sum())
    keep_u8 = active_backend().min_stage2_theta_hat_exhaustive(
        a * norms, free, b2, c_prime, factor
    )
    return SelectionMask.from_keep(keep_u8.astype(bool))


def staged_attention_only(a, budget, alpha=DEFAULT_ALPHA):
    """Attention-only selection expressed with the same stage split.

    Both selectors share stage 1 (Top-K on attention); this returns the
    attention-only stage-2 completion so bounds of the two strategies can
    be compared at stage parity.
    """
    a = _checked_weights(a, budget)
    n = a.shape[0]
    b1, b2 = stage_budgets(budget, alpha)
    stage1 = SelectionMask.from_indices(n, top_k_indices(a, b1))
    free = np.flatnonzero(~stage1.keep)
    stage2 = SelectionMask.from_indices(n, free[top_k_indices(a[free], b2)])
    mask = SelectionMask.from_keep(stage1.keep | stage2.keep)
    return StagedSelection(mask=mask, stage1=stage1, stage2=stage2)


def theta_hat_of(a, value_norms, staged):
    """Stage-2 bound value of a staged selection (convenience for audits)."""
    return theta_hat_bound(a, staged.stage1, staged.stage2, value_norms).theta_hat
