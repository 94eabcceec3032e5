"""Observation-window cache eviction across heads.

Per head: softmax the window queries against every cached key, average the
rows, max-pool, then hand the pooled scores to a selector. The last
``n_window`` entries (the observation window itself) are always retained
and count against the budget; the selector only fills the remaining
budget from the prefix. Budgets are either split equally across heads
(flat) or assigned by a global score competition with a per-head floor
(adaptive).
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .bounds import SelectionMask, output_perturbation, theta_bound
from .kernels import max_pool_1d, row_l1_norms, row_l2_norms, softmax_rows_scaled, top_k_indices
from .selection import (
    SelectionConfig,
    select_attention_only,
    select_perturbation_constrained,
)

ALLOCATION_MODES = ("flat", "adaptive")
SELECTORS = ("attention_only", "perturbation_constrained")
DIVISOR_MODES = ("sqrt_head_dim", "none")

DEFAULT_WINDOW = 32
DEFAULT_POOL_KERNEL = 7


def _as_f32_matrix(x, name):
    a = np.ascontiguousarray(x, dtype=np.float32)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


@dataclass
class HeadSnapshot:
    """One attention head's inputs: window queries, cached K/V, output slice."""

    layer: int
    head: int
    q_window: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    w_o_slice: np.ndarray
    _pv: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.q_window = _as_f32_matrix(self.q_window, "q_window")
        self.keys = _as_f32_matrix(self.keys, "keys")
        self.values = _as_f32_matrix(self.values, "values")
        self.w_o_slice = _as_f32_matrix(self.w_o_slice, "w_o_slice")
        d_h = self.q_window.shape[1]
        if self.keys.shape[1] != d_h or self.values.shape[1] != d_h:
            raise ValueError("keys/values head dimension must match q_window")
        if self.keys.shape[0] != self.values.shape[0]:
            raise ValueError("keys and values must have the same entry count")
        if self.w_o_slice.shape[0] != d_h:
            raise ValueError("w_o_slice must have head_dim rows")
        if self.n_window > self.n:
            raise ValueError("window longer than cache")

    @property
    def n(self):
        return self.keys.shape[0]

    @property
    def n_window(self):
        return self.q_window.shape[0]

    @property
    def head_dim(self):
        return self.q_window.shape[1]

    @property
    def model_dim(self):
        return self.w_o_slice.shape[1]

    def projected_values(self):
        """Value states pushed through the output slice, cached per head."""
        if self._pv is None:
            self._pv = self.values.astype(np.float64) @ self.w_o_slice.astype(np.float64)
        return self._pv

    def value_norms(self, metric="l1"):
        pv = self.projected_values()
        return row_l1_norms(pv) if metric == "l1" else row_l2_norms(pv)


@dataclass(frozen=True)
class EvictionConfig:
    total_budget_fraction: float = 0.2
    window: int = DEFAULT_WINDOW
    pool_kernel: int = DEFAULT_POOL_KERNEL
    allocation: str = "flat"
    selector: str = "perturbation_constrained"
    alpha: float = 0.5
    epsilon: float = 1e-4
    metric: str = "l1"
    logit_divisor_mode: str = "sqrt_head_dim"

    def __post_init__(self):
        if not 0.0 < self.total_budget_fraction <= 1.0:
            raise ValueError("total_budget_fraction must lie in (0, 1]")
        if self.allocation not in ALLOCATION_MODES:
            raise ValueError(f"allocation must be one of {ALLOCATION_MODES}")
        if self.selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        if self.logit_divisor_mode not in DIVISOR_MODES:
            raise ValueError(f"logit_divisor_mode must be one of {DIVISOR_MODES}")
        if self.pool_kernel < 1 or self.pool_kernel % 2 == 0:
            raise ValueError("pool_kernel must be odd and >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def divisor(self, head_dim):
        return math.sqrt(head_dim) if self.logit_divisor_mode == "sqrt_head_dim" else 1.0

    def selection_config(self, budget):
        return SelectionConfig(
            budget=budget, alpha=self.alpha, epsilon=self.epsilon, metric=self.metric
        )


@dataclass(frozen=True)
class BudgetAllocation:
    per_head: np.ndarray
    total: int

    def __post_init__(self):
        per_head = np.ascontiguousarray(self.per_head, dtype=np.int64)
        object.__setattr__(self, "per_head", per_head)
        if int(per_head.sum()) != self.total:
            raise ValueError("per-head budgets do not add up to the total")


@dataclass
class HeadEviction:
    layer: int
    head: int
    mask: SelectionMask
    keys: np.ndarray
    values: np.ndarray
    pooled_scores: np.ndarray


@dataclass
class LayerEviction:
    allocation: BudgetAllocation
    heads: List[HeadEviction]


def window_mean_attention(snap, cfg):
    """Mean attention of the window queries over all entries (pre-pooling).

    A probability vector: each window row softmaxes over the full cache,
    rows are averaged.
    """
    q = snap.q_window.astype(np.float64)
    k = snap.keys.astype(np.float64)
    rows = softmax_rows_scaled(q @ k.T, cfg.divisor(snap.head_dim))
    return rows.mean(axis=0)


def accumulate_window_attention(snap, cfg):
    """Pooled per-entry scores: window softmax, row mean, 1-D max pool."""
    return max_pool_1d(window_mean_attention(snap, cfg), cfg.pool_kernel)


def allocate_budgets(layer_scores, total, mode, floor=0):
    """Split ``total`` across heads by score vectors.

    flat: equal shares, remainder going to the lowest head indices.
    adaptive: every head gets ``floor``; the remaining slots go to the
    globally largest scores over the concatenation of all heads' vectors
    (ties to the lower flat index, i.e. lower head first).
    """
    heads = len(layer_scores)
    if heads == 0:
        raise ValueError("no heads to allocate")
    total = int(total)
    floor = int(floor)
    if mode not in ALLOCATION_MODES:
        raise ValueError(f"allocation must be one of {ALLOCATION_MODES}")
    if total < heads * floor:
        raise ValueError(
            f"infeasible floor: total {total} < heads {heads} x floor {floor}"
        )
    if mode == "flat":
        base, rem = divmod(total, heads)
        per_head = np.full(heads, base, dtype=np.int64)
        per_head[:rem] += 1
        return BudgetAllocation(per_head=per_head, total=total)
    lengths = np.array([len(s) for s in layer_scores], dtype=np.int64)
    extra = total - heads * floor
    if extra > int(lengths.sum()):
        raise ValueError("total exceeds allocatable entries")
    flat_scores = np.concatenate([np.asarray(s, dtype=np.float64) for s in layer_scores])
    winners = top_k_indices(flat_scores, extra)
    bounds = np.cumsum(lengths)
    owner = np.searchsorted(bounds, winners, side="right")
    per_head = np.full(heads, floor, dtype=np.int64)
    np.add.at(per_head, owner, 1)
    return BudgetAllocation(per_head=per_head, total=total)


def _prefix_selection(scores, norms, budget, cfg):
    """Run the configured selector on prefix scores renormalized to unit mass."""
    total = float(scores.sum())
    if total <= 0.0:
        probs = np.full(scores.shape[0], 1.0 / scores.shape[0])
    else:
        probs = scores / total
    if cfg.selector == "attention_only":
        return select_attention_only(probs, budget)
    staged = select_perturbation_constrained(probs, norms, cfg.selection_config(budget))
    return staged.mask


def evict_head(snap, budget, cfg, pooled_scores=None):
    """Evict one head down to ``budget`` entries.

    The whole observation window is retained and counted against the
    budget; the selector fills the rest from the prefix using the pooled
    window scores and the projected-value row norms. Returned keys/values
    hold exactly ``budget`` rows in original order.
    """
    budget = int(budget)
    if budget > snap.n:
        raise ValueError("budget exceeds entries")
    if budget < snap.n_window:
        raise ValueError(
            f"budget below window: {budget} < window {snap.n_window}"
        )
    if pooled_scores is None:
        pooled_scores = accumulate_window_attention(snap, cfg)
    prefix_len = snap.n - snap.n_window
    prefix_budget = budget - snap.n_window
    keep = np.zeros(snap.n, dtype=bool)
    keep[prefix_len:] = True
    if prefix_budget > 0 and prefix_len > 0:
        norms = snap.value_norms(cfg.metric)[:prefix_len]
        prefix_mask = _prefix_selection(
            pooled_scores[:prefix_len], norms, prefix_budget, cfg
        )
        keep[:prefix_len] = prefix_mask.keep
    mask = SelectionMask.from_keep(keep)
    return HeadEviction(
        layer=snap.layer,
        head=snap.head,
        mask=mask,
        keys=snap.keys[keep],
        values=snap.values[keep],
        pooled_scores=pooled_scores,
    )


def head_budget(n, n_window, budget_fraction):
    """Per-head budget for a fraction: floor(fraction * n), window-clamped.

    The tiny shift keeps exact products like (k/n) * n from flooring to
    k - 1 through float dust.
    """
    return min(n, max(n_window, int(math.floor(budget_fraction * n + 1e-9))))


def evict_layer(snaps, cfg, map_fn=map):
    """Accumulate, allocate, evict every head of a layer.

    Adaptive allocation competes on prefix scores only (the window is
    covered by the floor), keeping every head's budget within [window, n].
    ``map_fn`` lets callers fan the per-head work out over threads.
    """
    if not snaps:
        raise ValueError("no heads to evict")
    n = snaps[0].n
    n_window = snaps[0].n_window
    for s in snaps:
        if s.n != n or s.n_window != n_window:
            raise ValueError("heads of one layer must share n and window length")
    pooled = list(map_fn(lambda s: accumulate_window_attention(s, cfg), snaps))
    nominal = head_budget(n, n_window, cfg.total_budget_fraction)
    total = nominal * len(snaps)
    if cfg.allocation == "flat":
        allocation = allocate_budgets(pooled, total, "flat", floor=n_window)
    else:
        prefix_scores = [p[: n - n_window] for p in pooled]
        allocation = allocate_budgets(prefix_scores, total, "adaptive", floor=n_window)
    evictions = list(
        map_fn(
            lambda args: evict_head(args[0], args[1], cfg, pooled_scores=args[2]),
            zip(snaps, allocation.per_head, pooled),
        )
    )
    return LayerEviction(allocation=allocation, heads=evictions)


def attention_for_query(snap, query, cfg):
    """Full-cache attention weights of one query (probability vector)."""
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if q.shape[1] != snap.head_dim:
        raise ValueError("query dimension must match head_dim")
    k = snap.keys.astype(np.float64)
    return softmax_rows_scaled(q @ k.T, cfg.divisor(snap.head_dim))[0]


def probe_queries(snap, steps, rng):
    """Held-out queries drawn like the window queries.

    Sampled around the window queries' empirical mean with their
    per-dimension spread, mimicking post-eviction decoding queries.
    """
    q = snap.q_window.astype(np.float64)
    center = q.mean(axis=0)
    spread = q.std(axis=0)
    return center + spread * rng.standard_normal((int(steps), q.shape[1]))


def probe_perturbation(snap, mask, query, cfg):
    """Actual perturbation and its bound for one probe query."""
    a = attention_for_query(snap, query, cfg)
    pv = snap.projected_values()
    norms = snap.value_norms(cfg.metric)
    l_actual = output_perturbation(a, mask, pv, metric=cfg.metric)
    theta = theta_bound(a, mask, norms).theta
    return l_actual, theta
