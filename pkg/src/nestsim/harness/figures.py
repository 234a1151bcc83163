"""Plot-ready CSV data for the variance sweep, loss-curve and likelihood-ratio figures.

Column schemas
--------------
fig2  n_or_m, n, m, var_sn_analytic, var_sr_analytic, var_sn_emp, var_sr_emp
fig3  scenario_value, true_loss, sr_loss, regression_loss, true_excess, sr_excess,
      regression_excess, is_reference, is_sample_point
fig4  bin, breakpoint_lo, breakpoint, ref_count, target_count, empirical_ratio,
      true_ratio, true_ratio_mid
fig5  scenario_value, true_loss, sr_loss, nsr_loss, reference_value
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from scipy import stats

from nestsim import analysis
from nestsim.empirical import build_empirical_ratio
from nestsim.engine import (
    BarrierProblem,
    barrier_basis,
    estimate_nsr,
    estimate_regression,
    estimate_sr,
    make_reference_plan,
)
from nestsim.errors import ConfigError
from nestsim.models import GbmParams, OuterScenario, OuterScenarios, TimeGrid, simulate_inner_paths
from nestsim.payoffs import (
    barrier_loss_curve,
    barrier_purchase_prices,
    default_barrier_model,
    default_barrier_portfolio,
)
from nestsim.rng import Streams, make_rng
from nestsim.weights import gbm_weight

FIGURE_IDS = ("fig2", "fig3", "fig4", "fig5")
FIG2_N_GRID = (1, 2, 5, 10, 50, 100, 500, 1000)
FIG2_M_GRID = (10, 100, 1000, 10000)


def _barrier_problem():
    model = default_barrier_model()
    port = default_barrier_portfolio()
    return BarrierProblem(model, port.with_purchase_prices(barrier_purchase_prices(model, port)))


def variance_sweep(axis="n", grid=None, fixed=1000, trials=200, seed=12345) -> list:
    """Analytic and empirical toy-model variances along ``n`` (m fixed) or ``m`` (n fixed)."""
    if axis not in ("n", "m"):
        raise ValueError("axis must be 'n' or 'm'")
    grid = (FIG2_N_GRID if axis == "n" else FIG2_M_GRID) if grid is None else grid
    consts = analysis.compute_toy_constants()
    rows = []
    for v in grid:
        n, m = (int(v), int(fixed)) if axis == "n" else (int(fixed), int(v))
        var_sn_emp, var_sr_emp, _, _ = analysis.toy_variances(n, m, trials, seed)
        rows.append({
            "n_or_m": int(v), "n": n, "m": m,
            "var_sn_analytic": analysis.var_sn(consts, n, m),
            "var_sr_analytic": analysis.var_sr(consts, n, m),
            "var_sn_emp": var_sn_emp,
            "var_sr_emp": var_sr_emp,
        })
    return rows


def barrier_curve_data(n=760, m=1316, s=5, points=20, seed=12345, c=0.3608) -> list:
    """True, recycled and regression barrier losses on one trial's outer scenarios."""
    problem = _barrier_problem()
    ts = Streams(seed).trial(0)
    sc = problem.model.simulate_outer(n, problem.portfolio.tau, ts.outer())
    order = np.argsort(sc.values, kind="stable")
    sc = sc.subset(order)
    plan = make_reference_plan(sc, "equidistant_blocks", s, "right_endpoint")
    sr = estimate_sr(problem, sc, plan, m, ts)
    pts = np.linspace(sc.values.min(), sc.values.max(), points + 1)[1:]
    basis = barrier_basis([o.barrier for o in problem.portfolio.options])
    reg = estimate_regression(problem, sc, pts, m, basis, ts, rank_policy="min_norm")
    true = barrier_loss_curve(problem.model, problem.portfolio, sc.values)
    refs = set(int(r) for r in plan.references)
    rows = []
    for i, x in enumerate(sc.values):
        rows.append({
            "scenario_value": float(x),
            "true_loss": float(true[i]),
            "sr_loss": float(sr.losses[i]),
            "regression_loss": float(reg.losses[i]),
            "true_excess": max(float(true[i]) - c, 0.0),
            "sr_excess": max(float(sr.losses[i]) - c, 0.0),
            "regression_excess": max(float(reg.losses[i]) - c, 0.0),
            "is_reference": int(i in refs),
            "is_sample_point": 0,
        })
    true_pts = barrier_loss_curve(problem.model, problem.portfolio, pts)
    # regression sample points are not outer scenarios; emit them as extra marker rows
    for x, t in zip(pts, true_pts):
        rows.append({
            "scenario_value": float(x), "true_loss": float(t), "sr_loss": "", "regression_loss": "",
            "true_excess": max(float(t) - c, 0.0), "sr_excess": "", "regression_excess": "",
            "is_reference": 0, "is_sample_point": 1,
        })
    return rows


def likelihood_ratio_data(ref=99.0, target=99.2, m=1000, l=5, dt=1 / 624, seed=12345,
                          model: GbmParams = None) -> list:
    """Binned empirical ratio of one-step GBM samples against the exact ratio.

    ``true_ratio`` is the exact target-to-reference mass ratio of each bin (the
    value the estimator converges to for fixed bins); ``true_ratio_mid`` is the
    pointwise weight at the bin midpoint.
    """
    model = default_barrier_model() if model is None else model
    grid = TimeGrid(0.0 + dt, 2 * dt, dt)
    ys = simulate_inner_paths(model, OuterScenario(ref), grid, m, make_rng(seed, 40, 0)).first_step
    yt = simulate_inner_paths(model, OuterScenario(target), grid, m, make_rng(seed, 40, 1)).first_step
    r = build_empirical_ratio(ys, yt, l)
    drift, vol = model.step_log_moments(dt)

    def cdf(y, x):
        return stats.norm.cdf((np.log(y) - math.log(x) - drift) / vol)

    bp = r.breakpoints
    rows = []
    for a in range(r.l):
        lo, hi = bp[a], bp[a + 1]
        mass_t = cdf(hi, target) - cdf(lo, target)
        mass_r = cdf(hi, ref) - cdf(lo, ref)
        mid = 0.5 * (lo + hi)
        rows.append({
            "bin": a + 1,
            "breakpoint_lo": float(lo),
            "breakpoint": float(hi),
            "ref_count": int(r.ref_counts[a]),
            "target_count": int(r.target_counts[a]),
            "empirical_ratio": float(r.ratios[a]),
            "true_ratio": float(mass_t / mass_r),
            "true_ratio_mid": float(gbm_weight(ref, target, mid, model.r, model.sigma, dt)),
        })
    return rows


def nsr_curve_data(lo=91.0, hi=110.8, points=100, s=10, m=1316, l=5, seed=12345) -> list:
    """SR and NSR barrier loss curves on an equidistant scenario grid with right-endpoint references."""
    problem = _barrier_problem()
    sc = OuterScenarios(np.linspace(lo, hi, points))
    plan = make_reference_plan(sc, "equidistant_blocks", s, "right_endpoint")
    ts = Streams(seed).trial(0)
    sr = estimate_sr(problem, sc, plan, m, ts)
    nsr = estimate_nsr(problem, sc, plan, m, ts, l)
    true = barrier_loss_curve(problem.model, problem.portfolio, sc.values)
    ref_of = plan.primary_reference()
    return [{
        "scenario_value": float(sc.values[i]),
        "true_loss": float(true[i]),
        "sr_loss": float(sr.losses[i]),
        "nsr_loss": float(nsr.losses[i]),
        "reference_value": float(sc.values[ref_of[i]]),
    } for i in range(points)]


def write_rows(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval="", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return path


def emit_figure_data(figure_id, out_dir, cfg=None, **overrides) -> Path:
    """Compute one figure's data and write ``<out_dir>/<figure_id>.csv``.

    Seeds and sizes come from ``cfg`` when given; keyword overrides win.
    """
    if figure_id not in FIGURE_IDS:
        raise ConfigError(f"unknown figure {figure_id!r}; expected one of {FIGURE_IDS}")
    kw = {}
    if cfg is not None:
        kw["seed"] = cfg.seed
        if figure_id == "fig2":
            kw["fixed"] = cfg.m
            kw["trials"] = cfg.trials
        elif figure_id == "fig3":
            kw.update(n=cfg.n, m=cfg.m, s=cfg.plan.get("s", 5))
        elif figure_id == "fig5":
            kw.update(m=cfg.m, s=cfg.plan.get("s", 10), l=cfg.nsr.get("bins", 5))
    kw.update(overrides)
    builders = {
        "fig2": variance_sweep,
        "fig3": barrier_curve_data,
        "fig4": likelihood_ratio_data,
        "fig5": nsr_curve_data,
    }
    rows = builders[figure_id](**kw)
    return write_rows(rows, Path(out_dir) / f"{figure_id}.csv")
