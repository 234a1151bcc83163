"""Command-line entry point.

Exit status is 0 when every invariant check of the command passed, 1 when a
check failed and 2 for unusable input.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from nestsim.errors import NestsimError
from nestsim.harness.checks import CHECK_KINDS, check_weight_kind
from nestsim.harness.config import EXAMPLES, load_config
from nestsim.harness.experiments import run_experiment
from nestsim.harness.figures import FIGURE_IDS, emit_figure_data, variance_sweep, write_rows
from nestsim.payoffs import asian_purchase_price, default_asian_basket, oracle_true_loss


def parse_grid(text) -> np.ndarray:
    """``lo:hi:count`` for an equidistant grid, or a comma-separated list of values."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("grid must be lo:hi:count")
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise argparse.ArgumentTypeError("grid count must be positive")
        return np.linspace(lo, hi, count)
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse grid {text!r}") from None


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    report = run_experiment(cfg, measure_timing=False if args.no_timing else None)
    out = args.out or cfg.output_dir or f"results/{cfg.example}"
    report.write(out)
    for row in report.summary_rows():
        mse = row.get("mse", "")
        print(f"{row['method']:>10}  mean={row['estimate_mean']:.6g}  sd={row['estimate_sd']:.3g}"
              + (f"  mse={mse:.4g}" if mse != "" else "")
              + f"  inner_paths={row['inner_paths']}")
    for name, ok in report.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"wrote {out}")
    return 0 if report.ok else 1


def _cmd_oracle(args) -> int:
    grid = parse_grid(args.grid)
    problem = None
    if args.example == "asian":
        basket = default_asian_basket()
        c = asian_purchase_price(basket, m=min(args.budget, 2_000_000), seed=args.seed)
        problem = dataclasses.replace(basket, purchase_price=c)
    rows = []
    partial = False
    for x in grid:
        res = oracle_true_loss(args.example, float(x), args.budget, seed=args.seed,
                               target_se=args.target_se, problem=problem)
        partial = partial or res.partial
        rows.append({"scenario_value": float(x), "loss": res.loss, "se": res.se, "paths": res.n_paths,
                     "partial": int(res.partial)})
    if args.out:
        write_rows(rows, args.out)
        print(f"wrote {args.out}")
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return 1 if partial else 0


def _cmd_weights(args) -> int:
    kinds = CHECK_KINDS if args.model == "all" else (args.model,)
    ok = True
    for kind in kinds:
        c = check_weight_kind(kind, seed=args.seed, mean_m=args.mean_draws)
        ok = ok and c.ok
        print(f"{'PASS' if c.ok else 'FAIL'} {kind}: max error {c.max_scaled_error:.2e} over {c.n_inputs} inputs, "
              f"reflexive {'exact' if c.reflexive_exact else 'NOT exact'}, "
              f"mean weight {c.mean_weight:.6f} (z = {c.mean_z:+.2f})")
    return 0 if ok else 1


def _cmd_toy(args) -> int:
    rows = variance_sweep(args.axis, fixed=args.fixed, trials=args.trials, seed=args.seed)
    path = write_rows(rows, Path(args.out) / f"toy_sweep_{args.axis}.csv")
    print(f"wrote {path}")
    return 0


def _cmd_figure(args) -> int:
    cfg = load_config(args.config) if args.config else None
    path = emit_figure_data(args.figure, args.out, cfg)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nestsim", description="Nested Monte Carlo with sample recycling.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: config output_dir or results/<example>)")
    r.add_argument("--no-timing", action="store_true", help="skip the gamma/delta timing step")
    r.set_defaults(func=_cmd_run)

    o = sub.add_parser("oracle", help="high-resolution loss oracle")
    osub = o.add_subparsers(dest="oracle_command", required=True)
    ob = osub.add_parser("build", help="oracle losses on a scenario grid")
    ob.add_argument("example", choices=[e for e in EXAMPLES if e != "toy"])
    ob.add_argument("grid", help="lo:hi:count or comma-separated values")
    ob.add_argument("--budget", type=int, default=10**6, help="paths per scenario")
    ob.add_argument("--seed", type=int, default=0)
    ob.add_argument("--target-se", type=float, default=None)
    ob.add_argument("--out")
    ob.set_defaults(func=_cmd_oracle)

    w = sub.add_parser("weights", help="weight consistency checks")
    wsub = w.add_subparsers(dest="weights_command", required=True)
    wc = wsub.add_parser("check", help="closed form vs density ratio, reflexivity, mean one")
    wc.add_argument("model", choices=list(CHECK_KINDS) + ["all"])
    wc.add_argument("--seed", type=int, default=0)
    wc.add_argument("--mean-draws", type=int, default=10**6)
    wc.set_defaults(func=_cmd_weights)

    t = sub.add_parser("toy", help="toy-model variance studies")
    tsub = t.add_subparsers(dest="toy_command", required=True)
    ts = tsub.add_parser("sweep", help="analytic and empirical variances along n or m")
    ts.add_argument("axis", choices=["n", "m"])
    ts.add_argument("--fixed", type=int, default=1000, help="value of the other loop count")
    ts.add_argument("--trials", type=int, default=200)
    ts.add_argument("--seed", type=int, default=12345)
    ts.add_argument("--out", default="results")
    ts.set_defaults(func=_cmd_toy)

    f = sub.add_parser("figure", help="plot-ready CSV for one figure")
    f.add_argument("figure", choices=FIGURE_IDS)
    f.add_argument("config", nargs="?", help="config supplying seed and sizes")
    f.add_argument("--out", default="results")
    f.set_defaults(func=_cmd_figure)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NestsimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
