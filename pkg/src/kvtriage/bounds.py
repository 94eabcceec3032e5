"""Output-perturbation math for cache eviction.

When attention is restricted to a kept subset of cache entries, the
softmax renormalizes over that subset: the restricted weights are
``a' = keep * a / mass`` with ``mass`` the kept attention mass. The
resulting output shift ``L = ||(a - a') @ PV||`` (PV = value states
projected through the output matrix) admits a closed-form worst-case
bound built from the attention weights and the row norms of PV:

    theta      = c_const - (2 - 1/mass) * kept_weighted
    c_const    = sum_i a_i * norm_i
    kept_weighted = sum_{kept} a_i * norm_i

Splitting the kept set into a high-attention stage and a remainder stage
with stage-1 mass ``sigma`` gives a stage-2 objective bound

    theta_hat  = c_prime - (2 - 1/sigma) * sum_{stage2} a_i * norm_i
    c_prime    = c_const - (2 - 1/sigma) * sum_{stage1} a_i * norm_i

and replacing each norm by the global minimum M relaxes it further to

    theta_relax = c_prime - M * (2 - 1/sigma) * sum_{stage2} a_i

Whenever sigma > 0.5 the chain theta < theta_hat <= theta_relax holds;
sigma <= 0.5 is flagged, not rejected. theta is reported unclipped — it
can go negative for pathological masks and clipping would hide bugs.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .backend import active_backend
from .kernels import as_f64_matrix, as_f64_vector, check_probability_vector

SIGMA_THRESHOLD = 0.5

_METRICS = ("l1", "l2")


def _check_metric(metric):
    if metric not in _METRICS:
        raise ValueError(f"metric must be one of {_METRICS}, got {metric!r}")
    return metric == "l2"


@dataclass(frozen=True)
class SelectionMask:
    """Binary keep/evict vector over cache entries with budget accounting."""

    keep: np.ndarray
    budget: int

    def __post_init__(self):
        keep = np.ascontiguousarray(self.keep, dtype=bool)
        object.__setattr__(self, "keep", keep)
        if keep.ndim != 1:
            raise ValueError("keep must be a 1-D vector")
        if int(keep.sum()) != self.budget:
            raise ValueError(
                f"budget accounting broken: {int(keep.sum())} kept != budget {self.budget}"
            )

    @classmethod
    def from_keep(cls, keep):
        keep = np.ascontiguousarray(keep, dtype=bool)
        return cls(keep=keep, budget=int(keep.sum()))

    @classmethod
    def from_indices(cls, n, indices):
        keep = np.zeros(int(n), dtype=bool)
        keep[np.asarray(indices, dtype=np.int64)] = True
        return cls.from_keep(keep)

    @classmethod
    def keep_all(cls, n):
        return cls(keep=np.ones(int(n), dtype=bool), budget=int(n))

    @property
    def n(self):
        return self.keep.shape[0]

    def indices(self):
        return np.flatnonzero(self.keep).astype(np.int64)

    def keep_u8(self):
        return self.keep.view(np.uint8)


class ThetaBound(NamedTuple):
    theta: float
    c_const: float


class ThetaHatBound(NamedTuple):
    theta_hat: float
    c_prime: float
    sigma: float
    assumption_satisfied: bool


@dataclass(frozen=True)
class BoundReport:
    """Actual perturbation next to its worst-case bounds for one mask."""

    actual_l: float
    theta: float
    sigma: float
    c_const: float
    theta_hat: Optional[float] = None
    theta_relax: Optional[float] = None
    c_prime: Optional[float] = None
    assumption_satisfied: bool = True


def _validated(a, mask):
    a = as_f64_vector(a, "attention weights")
    check_probability_vector(a)
    if mask.n != a.shape[0]:
        raise ValueError(f"mask length {mask.n} != weights length {a.shape[0]}")
    return a


def masked_attention(a, mask):
    """Attention weights after eviction: kept entries renormalized, rest zero."""
    a = _validated(a, mask)
    out, mass = active_backend().masked_renormalize(a, mask.keep_u8())
    if mass <= 0.0:
        raise ValueError("degenerate mask: kept entries carry zero attention mass")
    return out


def output_perturbation(a, mask, projected_values, metric="l1"):
    """L = ||(a - a') @ projected_values|| under the chosen metric."""
    use_l2 = _check_metric(metric)
    a = _validated(a, mask)
    pv = as_f64_matrix(projected_values, "projected_values")
    if pv.shape[0] != a.shape[0]:
        raise ValueError("projected_values row count must match entry count")
    mass = float(a[mask.keep].sum())
    if mass <= 0.0:
        raise ValueError("degenerate mask: kept entries carry zero attention mass")
    return float(active_backend().perturbation_distance(a, mask.keep_u8(), pv, use_l2))


def theta_bound(a, mask, value_norms):
    """Worst-case perturbation bound for a keep set, plus the constant term."""
    a = _validated(a, mask)
    norms = as_f64_vector(value_norms, "value_norms")
    if norms.shape[0] != a.shape[0]:
        raise ValueError("value_norms length must match entry count")
    c_const, mass, kept_weighted = active_backend().theta_terms(
        a, mask.keep_u8(), norms
    )
    if mass <= 0.0:
        raise ValueError("degenerate mask: kept entries carry zero attention mass")
    theta = c_const - (2.0 - 1.0 / mass) * kept_weighted
    return ThetaBound(theta=float(theta), c_const=float(c_const))


def _check_stages(a, stage1, stage2):
    if stage1.n != a.shape[0] or stage2.n != a.shape[0]:
        raise ValueError("stage masks must match entry count")
    if np.any(stage1.keep & stage2.keep):
        raise ValueError("stage-1 and stage-2 masks overlap")


def theta_hat_bound(a, stage1, stage2, value_norms):
    """Stage-2 objective bound given a fixed stage-1 selection.

    sigma is the stage-1 attention mass; sigma <= 0.5 only flags
    ``assumption_satisfied=False`` — the value is still meaningful and
    the caller decides what to do with it.
    """
    a = _validated(a, stage1)
    norms = as_f64_vector(value_norms, "value_norms")
    if norms.shape[0] != a.shape[0]:
        raise ValueError("value_norms length must match entry count")
    _check_stages(a, stage1, stage2)
    sigma = float(a[stage1.keep].sum())
    if sigma <= 0.0:
        raise ValueError("degenerate mask: stage-1 carries zero attention mass")
    factor = 2.0 - 1.0 / sigma
    c_const = float((a * norms).sum())
    c_prime = c_const - factor * float((a * norms)[stage1.keep].sum())
    theta_hat = c_prime - factor * float((a * norms)[stage2.keep].sum())
    return ThetaHatBound(
        theta_hat=float(theta_hat),
        c_prime=float(c_prime),
        sigma=sigma,
        assumption_satisfied=sigma > SIGMA_THRESHOLD,
    )


def theta_relax_bound(a, stage1, stage2, value_norms):
    """Relaxation of the stage-2 bound using the minimum row norm."""
    a = _validated(a, stage1)
    norms = as_f64_vector(value_norms, "value_norms")
    if norms.shape[0] != a.shape[0]:
        raise ValueError("value_norms length must match entry count")
    _check_stages(a, stage1, stage2)
    sigma = float(a[stage1.keep].sum())
    if sigma <= 0.0:
        raise ValueError("degenerate mask: stage-1 carries zero attention mass")
    factor = 2.0 - 1.0 / sigma
    c_const = float((a * norms).sum())
    c_prime = c_const - factor * float((a * norms)[stage1.keep].sum())
    m_min = float(norms.min())
    return float(c_prime - m_min * factor * float(a[stage2.keep].sum()))


def combine_stages(stage1, stage2):
    """Union of two disjoint stage masks as a single keep set."""
    if stage1.n != stage2.n:
        raise ValueError("stage masks must have equal length")
    if np.any(stage1.keep & stage2.keep):
        raise ValueError("stage-1 and stage-2 masks overlap")
    return SelectionMask.from_keep(stage1.keep | stage2.keep)


def bound_report(a, mask, projected_values, value_norms, metric="l1",
                 stage1=None, stage2=None):
    """Assemble actual perturbation and every applicable bound for one mask.

    Without a stage split, sigma reports the kept attention mass of the
    whole mask and the stage-2 bounds stay None.
    """
    actual = output_perturbation(a, mask, projected_values, metric=metric)
    tb = theta_bound(a, mask, value_norms)
    if stage1 is None:
        a64 = as_f64_vector(a)
        sigma = float(a64[mask.keep].sum())
        return BoundReport(
            actual_l=actual,
            theta=tb.theta,
            sigma=sigma,
            c_const=tb.c_const,
            assumption_satisfied=sigma > SIGMA_THRESHOLD,
        )
    if stage2 is None:
        stage2 = SelectionMask.from_keep(mask.keep & ~stage1.keep)
    hat = theta_hat_bound(a, stage1, stage2, value_norms)
    relax = theta_relax_bound(a, stage1, stage2, value_norms)
    return BoundReport(
        actual_l=actual,
        theta=tb.theta,
        sigma=hat.sigma,
        c_const=tb.c_const,
        theta_hat=hat.theta_hat,
        theta_relax=relax,
        c_prime=hat.c_prime,
        assumption_satisfied=hat.assumption_satisfied,
    )
