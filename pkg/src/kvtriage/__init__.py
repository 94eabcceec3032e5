"""Perturbation-constrained critical KV-cache selection.

Reconstructs single-head attention from dumped or synthetic tensors,
evaluates worst-case output-perturbation bounds, runs two-stage
budgeted selection inside an observation-window eviction pipeline, and
ships brute-force oracles and statistical harnesses to audit all of it.
"""

from .backend import BACKEND_ENV, backend_name, use_backend
from .bounds import (
    BoundReport,
    SelectionMask,
    ThetaBound,
    ThetaHatBound,
    bound_report,
    combine_stages,
    masked_attention,
    output_perturbation,
    theta_bound,
    theta_hat_bound,
    theta_relax_bound,
)
from .io_formats import (
    HeadDumpError,
    read_dump_tree,
    read_head_dump,
    read_report,
    write_dump_tree,
    write_head_dump,
    write_report,
)
from .kernels import max_pool_1d, row_l1_norms, row_l2_norms, softmax_scaled, top_k_indices
from .pipeline import (
    BudgetAllocation,
    EvictionConfig,
    HeadEviction,
    HeadSnapshot,
    LayerEviction,
    accumulate_window_attention,
    allocate_budgets,
    attention_for_query,
    evict_head,
    evict_layer,
    head_budget,
    probe_queries,
    window_mean_attention,
)
from .selection import (
    SelectionConfig,
    StagedSelection,
    brute_force_min_perturbation,
    brute_force_min_theta_hat,
    select_attention_only,
    select_perturbation_constrained,
    staged_attention_only,
    theta_hat_of,
)
from .synthetic import (
    AssumptionReport,
    PerturbationReport,
    ReductionRow,
    SyntheticSpec,
    generate_head,
    generate_layer,
    reduction_sweep,
    validate_assumption,
)

__version__ = "0.1.0"
