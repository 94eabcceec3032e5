"""Command-line front end.

Subcommands: gen, select, evict, bound-check, assumption-check,
reduction-report, oracle. Exit codes: 0 success, 1 usage error, 2 data
error, 3 violated mathematical invariant. Every run writes the fully
resolved configuration (defaults expanded) into its report header;
KVTRIAGE_THREADS caps per-head parallelism.
"""

import argparse
import os
import sys

import numpy as np

from . import io_formats
from .backend import backend_name
from .bounds import SelectionMask, output_perturbation, theta_bound
from .parallel import parallel_map
from .pipeline import (
    EvictionConfig,
    HeadSnapshot,
    accumulate_window_attention,
    evict_layer,
    head_budget,
    probe_queries,
    attention_for_query,
    window_mean_attention,
)
from .selection import (
    SelectionConfig,
    brute_force_min_perturbation,
    select_attention_only,
    select_perturbation_constrained,
)
from .synthetic import SyntheticSpec, generate_layer, reduction_sweep, validate_assumption

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VIOLATION = 3

BOUND_SLACK = 1e-5


def _budget_kind(text):
    """Fractions carry a decimal point or '%'; bare integers are counts."""
    t = text.strip().lower()
    try:
        if t.endswith("%"):
            value = float(t[:-1]) / 100.0
            kind = "fraction"
        elif "." in t or "e" in t:
            value = float(t)
            kind = "fraction"
        else:
            value = int(t)
            kind = "count"
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad budget {text!r}")
    if kind == "fraction" and not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError("budget fraction must lie in (0, 1]")
    if kind == "count" and value < 1:
        raise argparse.ArgumentTypeError("budget count must be >= 1")
    return kind, value


def _fraction_list(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        value = float(part)
        if not 0.0 < value <= 1.0:
            raise argparse.ArgumentTypeError("budget fractions must lie in (0, 1]")
        out.append(value)
    if not out:
        raise argparse.ArgumentTypeError("empty budget list")
    return out


def _add_synthetic_flags(p):
    p.add_argument("--heads", type=int, default=8, help="heads per layer")
    p.add_argument("--layers", type=int, default=1, help="layer count")
    p.add_argument("--n", type=int, default=256, help="cache entries per head")
    p.add_argument("--window", type=int, default=32, help="observation window length")
    p.add_argument("--d-h", type=int, default=16, help="head dimension")
    p.add_argument("--d", type=int, default=8, help="model (output) dimension")
    p.add_argument("--zipf", type=float, default=1.0, help="attention skew exponent")
    p.add_argument("--value-scale", type=float, default=1.0, help="value state scale")
    p.add_argument("--seed", type=int, default=0, help="generation seed")


def _add_selector_flags(p, with_selector=True):
    if with_selector:
        p.add_argument(
            "--selector",
            choices=("attention_only", "perturbation_constrained"),
            default="perturbation_constrained",
        )
    p.add_argument("--alpha", type=float, default=0.5, help="stage-1 budget share")
    p.add_argument("--epsilon", type=float, default=1e-4, help="stage-2 score stabilizer")
    p.add_argument("--metric", choices=("l1", "l2"), default="l1")
    p.add_argument(
        "--divisor",
        choices=("sqrt_head_dim", "none"),
        default="sqrt_head_dim",
        help="softmax logit divisor mode",
    )
    p.add_argument("--kernel", type=int, default=7, help="max-pooling kernel (odd)")


def _spec_from_args(args):
    return SyntheticSpec(
        n=args.n,
        d_h=args.d_h,
        d=args.d,
        n_heads=args.heads,
        zipf_exponent=args.zipf,
        value_scale=args.value_scale,
        seed=args.seed,
    )


def _synthetic_tree(args):
    spec = _spec_from_args(args)
    snaps = []
    for layer in range(args.layers):
        snaps.extend(generate_layer(spec, layer=layer, window=args.window))
    return snaps


def _load_heads(args):
    """Heads from --dumps when given, else freshly generated synthetic ones."""
    if getattr(args, "dumps", None):
        return io_formats.read_dump_tree(args.dumps)
    return _synthetic_tree(args)


def _eviction_config(args, budget_fraction=None):
    return EvictionConfig(
        total_budget_fraction=1.0 if budget_fraction is None else budget_fraction,
        window=getattr(args, "window", 32),
        pool_kernel=args.kernel,
        allocation=getattr(args, "allocation", "flat"),
        selector=getattr(args, "selector", "perturbation_constrained"),
        alpha=args.alpha,
        epsilon=args.epsilon,
        metric=args.metric,
        logit_divisor_mode=args.divisor,
    )


def _config_dict(args, parser_defaults=()):
    skip = {"func", "out", "dumps", "dump"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}
    cfg["backend"] = backend_name()
    for key, value in parser_defaults:
        cfg[key] = value
    return cfg


def _group_layers(snaps):
    layers = {}
    for snap in snaps:
        layers.setdefault(snap.layer, []).append(snap)
    return [sorted(layers[k], key=lambda s: s.head) for k in sorted(layers)]


def _normalized(scores):
    total = float(scores.sum())
    if total <= 0.0:
        return np.full(scores.shape[0], 1.0 / scores.shape[0])
    return scores / total


def _resolve_head_budget(kind, value, n, n_window):
    if kind == "count":
        budget = int(value)
        if budget > n:
            raise ValueError(f"budget exceeds entries: {budget} > {n}")
        return budget
    return head_budget(n, n_window, value)


def _keep_to_text(mask):
    return ";".join(str(i) for i in mask.indices())


# --- subcommands -----------------------------------------------------------


def _cmd_gen(args):
    snaps = _synthetic_tree(args)
    io_formats.write_dump_tree(snaps, args.out)
    cfg = _config_dict(args)
    lines = [f"# {k}={io_formats._format_cell(v)}" for k, v in sorted(cfg.items())]
    lines.append(f"# files={len(snaps)}")
    io_formats.write_text(os.path.join(args.out, "manifest.txt"), "\n".join(lines) + "\n")
    print(f"wrote {len(snaps)} head dumps under {args.out}")
    return EXIT_OK


def _cmd_select(args):
    snaps = _load_heads(args)
    cfg = _eviction_config(args)
    kind, value = args.budget
    rows = []
    for snap in snaps:
        pooled = accumulate_window_attention(snap, cfg)
        probs = _normalized(pooled)
        budget = _resolve_head_budget(kind, value, snap.n, 1)
        if args.selector == "attention_only":
            mask = select_attention_only(probs, budget)
        else:
            mask = select_perturbation_constrained(
                probs,
                snap.value_norms(args.metric),
                SelectionConfig(
                    budget=budget, alpha=args.alpha, epsilon=args.epsilon, metric=args.metric
                ),
            ).mask
        rows.append((snap.layer, snap.head, snap.n, budget, args.selector, _keep_to_text(mask)))
    out = os.path.join(args.out, "masks.csv")
    io_formats.write_report(
        out,
        ("layer", "head", "n", "budget", "selector", "kept"),
        rows,
        config=_config_dict(args, [("budget", args.budget[1])]),
    )
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_evict(args):
    snaps = _load_heads(args)
    kind, value = args.budget
    mask_rows = []
    written = 0
    for layer_snaps in _group_layers(snaps):
        n = layer_snaps[0].n
        n_window = layer_snaps[0].n_window
        nominal = _resolve_head_budget(kind, value, n, n_window)
        if nominal < n_window:
            raise ValueError(f"budget below window: {nominal} < {n_window}")
        cfg = _eviction_config(args, budget_fraction=min(1.0, nominal / n))
        evicted = evict_layer(layer_snaps, cfg, map_fn=parallel_map)
        for snap, ev in zip(layer_snaps, evicted.heads):
            compact = replace_snapshot(snap, ev)
            io_formats.write_head_dump(
                compact, io_formats.dump_path(args.out, snap.layer, snap.head)
            )
            written += 1
            mask_rows.append(
                (
                    snap.layer,
                    snap.head,
                    snap.n,
                    ev.mask.budget,
                    args.selector,
                    _keep_to_text(ev.mask),
                )
            )
    io_formats.write_report(
        os.path.join(args.out, "masks.csv"),
        ("layer", "head", "n", "budget", "selector", "kept"),
        mask_rows,
        config=_config_dict(args, [("budget", args.budget[1])]),
    )
    print(f"wrote {written} compacted dumps under {args.out}")
    return EXIT_OK


def replace_snapshot(snap, eviction):
    """Snapshot with compacted keys/values (window queries and W_O kept)."""
    return HeadSnapshot(
        layer=snap.layer,
        head=snap.head,
        q_window=snap.q_window,
        keys=eviction.keys,
        values=eviction.values,
        w_o_slice=snap.w_o_slice,
    )


def _cmd_bound_check(args):
    snaps = _load_heads(args)
    kind, value = args.budget
    rng = np.random.default_rng(args.probe_seed)
    rows = []
    violations = 0

    def check(snap, a, mask, label, probe_step):
        nonlocal violations
        pv = snap.projected_values()
        norms = snap.value_norms(args.metric)
        l_actual = output_perturbation(a, mask, pv, metric=args.metric)
        theta = theta_bound(a, mask, norms).theta
        ok = l_actual <= theta + BOUND_SLACK * max(1.0, abs(theta))
        if not ok:
            violations += 1
        rows.append((snap.layer, snap.head, label, probe_step, l_actual, theta, ok))

    for snap in snaps:
        cfg = _eviction_config(args)
        pooled = accumulate_window_attention(snap, cfg)
        probs = _normalized(pooled)
        budget = _resolve_head_budget(kind, value, snap.n, 1)
        masks = {
            "attention_only": select_attention_only(probs, budget),
            "perturbation_constrained": select_perturbation_constrained(
                probs,
                snap.value_norms(args.metric),
                SelectionConfig(budget=budget, alpha=args.alpha, epsilon=args.epsilon,
                                metric=args.metric),
            ).mask,
        }
        for i in range(args.random_masks):
            keep_idx = rng.choice(snap.n, size=budget, replace=False)
            masks[f"random_{i}"] = SelectionMask.from_indices(snap.n, keep_idx)
        probes = probe_queries(snap, args.probes, rng)
        for step in range(args.probes):
            a = attention_for_query(snap, probes[step], cfg)
            for label, mask in masks.items():
                check(snap, a, mask, label, step)
    out = os.path.join(args.out, "bound_report.csv")
    io_formats.write_report(
        out,
        ("layer", "head", "mask", "probe", "l", "theta", "ok"),
        rows,
        config=_config_dict(args, [("budget", args.budget[1])]),
    )
    if violations:
        print(f"BOUND VIOLATION: {violations} of {len(rows)} checks failed ({out})")
        return EXIT_VIOLATION
    print(f"all {len(rows)} bound checks passed ({out})")
    return EXIT_OK


def _cmd_assumption_check(args):
    snaps = _load_heads(args)
    cfg = _eviction_config(args)
    weights = parallel_map(lambda s: window_mean_attention(s, cfg), snaps)
    report = validate_assumption(weights, args.budget, alpha=args.alpha)
    rows = [
        (snap.layer, snap.head, snap.n, sigma, sigma > 0.5)
        for snap, sigma in zip(snaps, report.sigmas)
    ]
    out = os.path.join(args.out, "assumption_report.csv")
    io_formats.write_report(
        out,
        ("layer", "head", "n", "sigma", "satisfied"),
        rows,
        config=_config_dict(args),
    )
    summary = (
        f"heads={len(snaps)}\n"
        f"budget_fraction={report.budget_fraction}\n"
        f"alpha={report.alpha}\n"
        f"fraction_satisfied={report.fraction_satisfied:.6f}\n"
        f"min_sigma={report.sigmas.min():.6f}\n"
        f"mean_sigma={report.sigmas.mean():.6f}\n"
    )
    io_formats.write_text(os.path.join(args.out, "assumption_summary.txt"), summary)
    print(
        f"fraction_satisfied={report.fraction_satisfied:.4f} over {len(snaps)} heads ({out})"
    )
    return EXIT_OK


def _cmd_reduction_report(args):
    snaps = _load_heads(args)
    cfg = _eviction_config(args)
    report = reduction_sweep(
        snaps,
        args.budgets,
        cfg,
        probe_steps=args.probe_steps,
        seed=args.probe_seed,
        map_fn=parallel_map,
    )
    rows = [
        (
            r.layer, r.head, r.token_step, r.budget_fraction,
            r.l_baseline, r.l_ours, r.theta_baseline, r.theta_ours, r.improved,
        )
        for r in report.rows
    ]
    out = os.path.join(args.out, "perturbation_report.csv")
    io_formats.write_report(
        out,
        (
            "layer", "head", "token_step", "budget_fraction",
            "l_baseline", "l_ours", "theta_baseline", "theta_ours", "improved",
        ),
        rows,
        config=_config_dict(args, [("budgets", ",".join(map(str, args.budgets)))]),
    )
    lines = [f"rows={len(report.rows)}"]
    for frac in report.budgets():
        lines.append(
            f"budget={frac:g} mean_l_baseline={report.mean_l('baseline', frac):.6g} "
            f"mean_l_ours={report.mean_l('ours', frac):.6g} "
            f"improved_fraction={report.fraction_improved(frac):.4f}"
        )
    lines.append(f"overall_improved_fraction={report.fraction_improved():.4f}")
    io_formats.write_text(os.path.join(args.out, "reduction_summary.txt"), "\n".join(lines) + "\n")
    bad = [
        r for r in report.rows
        if r.l_baseline > r.theta_baseline + BOUND_SLACK * max(1.0, abs(r.theta_baseline))
        or r.l_ours > r.theta_ours + BOUND_SLACK * max(1.0, abs(r.theta_ours))
    ]
    if bad:
        print(f"BOUND VIOLATION in {len(bad)} report rows ({out})")
        return EXIT_VIOLATION
    print(f"wrote {out} ({len(report.rows)} rows)")
    return EXIT_OK


def _cmd_oracle(args):
    if args.dump:
        snaps = [io_formats.read_head_dump(args.dump)]
    else:
        snaps = _load_heads(args)
    kind, value = args.budget
    for key, val in sorted(_config_dict(args, [("budget", args.budget[1])]).items()):
        print(f"# {key}={io_formats._format_cell(val)}")
    for snap in snaps:
        cfg = _eviction_config(args)
        a = _normalized(window_mean_attention(snap, cfg))
        pv = snap.projected_values()
        norms = snap.value_norms(args.metric)
        budget = _resolve_head_budget(kind, value, snap.n, 1)
        oracle_mask, oracle_l = brute_force_min_perturbation(a, pv, budget, metric=args.metric)
        ours = select_perturbation_constrained(
            a, norms,
            SelectionConfig(budget=budget, alpha=args.alpha, epsilon=args.epsilon,
                            metric=args.metric),
        ).mask
        base = select_attention_only(a, budget)
        ours_l = output_perturbation(a, ours, pv, metric=args.metric)
        base_l = output_perturbation(a, base, pv, metric=args.metric)
        tag = f"layer {snap.layer} head {snap.head}:"
        print(f"{tag} oracle keep {{{', '.join(map(str, oracle_mask.indices()))}}} "
              f"perturbation {oracle_l:.6g}")
        match = " oracle-matching" if ours_l <= oracle_l + 1e-9 else ""
        print(f"{tag} perturbation_constrained keep "
              f"{{{', '.join(map(str, ours.indices()))}}} perturbation {ours_l:.6g}{match}")
        match = " oracle-matching" if base_l <= oracle_l + 1e-9 else ""
        print(f"{tag} attention_only keep {{{', '.join(map(str, base.indices()))}}} "
              f"perturbation {base_l:.6g}{match}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kvtriage",
        description="Perturbation-constrained critical KV-cache selection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic head-dump tree")
    _add_synthetic_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("select", help="select critical entries per head (no window retention)")
    p.add_argument("--dumps", help="dump file or tree (default: synthetic)")
    _add_synthetic_flags(p)
    _add_selector_flags(p)
    p.add_argument("--budget", type=_budget_kind, required=True,
                   help="fraction (e.g. 0.2, 20%%) or absolute count (e.g. 64)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("evict", help="full observation-window eviction with compaction")
    p.add_argument("--dumps", help="dump tree (default: synthetic)")
    _add_synthetic_flags(p)
    _add_selector_flags(p)
    p.add_argument("--allocation", choices=("flat", "adaptive"), default="flat")
    p.add_argument("--budget", type=_budget_kind, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evict)

    p = sub.add_parser("bound-check", help="verify actual perturbation <= bound")
    p.add_argument("--dumps")
    _add_synthetic_flags(p)
    _add_selector_flags(p, with_selector=False)
    p.add_argument("--budget", type=_budget_kind, required=True)
    p.add_argument("--probes", type=int, default=3)
    p.add_argument("--random-masks", type=int, default=3)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bound_check)

    p = sub.add_parser("assumption-check", help="stage-1 attention-mass report")
    p.add_argument("--dumps")
    _add_synthetic_flags(p)
    _add_selector_flags(p, with_selector=False)
    p.add_argument("--budget", type=float, default=0.1, help="budget fraction")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_assumption_check)

    p = sub.add_parser("reduction-report", help="selector-vs-selector perturbation sweep")
    p.add_argument("--dumps")
    _add_synthetic_flags(p)
    _add_selector_flags(p, with_selector=False)
    p.add_argument("--budgets", type=_fraction_list, default=[0.025, 0.05, 0.1, 0.2, 0.4])
    p.add_argument("--probe-steps", type=int, default=3)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reduction_report)

    p = sub.add_parser("oracle", help="brute-force comparison on small dumps")
    p.add_argument("--dump", help="single dump file")
    p.add_argument("--dumps", help="dump tree")
    _add_synthetic_flags(p)
    _add_selector_flags(p, with_selector=False)
    p.add_argument("--budget", type=_budget_kind, required=True)
    p.set_defaults(func=_cmd_oracle)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (io_formats.HeadDumpError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
