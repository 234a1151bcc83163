"""Acceptance criteria, one printed pass/fail line each (see the terminal summary).

Tolerances are the stated ones.  Criterion 5's full-scale magnitudes run only
with NESTSIM_FULL_SCALE=1.
"""

import dataclasses
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import record_criterion
from scipy.stats import norm

from nestsim import analysis
from nestsim.engine import ReferencePlan, estimate_sr, path_problem
from nestsim.harness.checks import CHECK_KINDS, check_weight_kind
from nestsim.harness.config import config_from_dict, load_config
from nestsim.harness.experiments import measure_gamma_delta, run_experiment
from nestsim.harness.figures import likelihood_ratio_data, nsr_curve_data, variance_sweep
from nestsim.models import GbmParams, TimeGrid
from nestsim.payoffs import EuropeanPut
from nestsim.rng import Streams

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEED = 12345
FULL_SCALE = os.environ.get("NESTSIM_FULL_SCALE") == "1"

pytestmark = pytest.mark.slow


def same_order(a, b):
    return abs(math.log10(a / b)) < 0.5


# --------------------------------------------------------------------------- 1


def test_c1_weight_correctness():
    start = time.perf_counter()
    results = [check_weight_kind(kind, n_refs=100, targets_per_ref=10, draws_per_ref=10, mean_m=10**6, seed=0)
               for kind in CHECK_KINDS]
    elapsed = time.perf_counter() - start
    for c in results:
        record_criterion(f"C1.{c.kind}", c.ok,
                         f"{c.n_inputs} inputs, max error {c.max_scaled_error:.1e} (tol 1e-9), reflexive "
                         f"{'exact' if c.reflexive_exact else 'not exact'}, mean weight z={c.mean_z:+.2f} (|z|<4)")
    ok = all(c.ok for c in results) and elapsed < 60
    record_criterion("C1", ok, f"all kinds, runtime {elapsed:.1f}s (< 60s)")
    assert all(c.n_inputs == 10**4 for c in results)
    assert ok


# --------------------------------------------------------------------------- 2


def test_c2_toy_variance_formulas(toy_constants):
    n, m, trials = 100, 1000, 2000
    v_sn, v_sr, _, _ = analysis.toy_variances(n, m, trials, seed=SEED)
    a_sn, a_sr = analysis.var_sn(toy_constants, n, m), analysis.var_sr(toy_constants, n, m)
    e_sn, e_sr = abs(v_sn / a_sn - 1), abs(v_sr / a_sr - 1)
    ok_var = record_criterion("C2.variances", e_sn < 0.05 and e_sr < 0.05,
                              f"SN emp {v_sn:.4e} vs {a_sn:.4e} ({e_sn:.1%}), SR emp {v_sr:.4e} vs {a_sr:.4e} "
                              f"({e_sr:.1%}); tol 5%")
    limit = analysis.var_sr_limit(toy_constants, 1000)
    ok_lim = record_criterion("C2.limit", abs(limit / 1.0150e-4 - 1) < 0.01,
                              f"(D - A1^2)/1000 = {limit:.4e} vs 1.0150e-4 (tol 1%)")
    printed = analysis.var_sr_limit(toy_constants, 1000, d=toy_constants.D_printed)
    print(f"[INFO] C2.limit with the printed D integrand ({toy_constants.D_printed:.7f}): {printed:.4e}")
    assert ok_var and ok_lim


# --------------------------------------------------------------------------- 3


def test_c3_variance_sweep_shape():
    grid = [1, 2, 5, 10, 50, 100, 500, 1000]
    rows = variance_sweep("n", grid=grid, fixed=1000, trials=200, seed=SEED)
    ns = np.array([r["n"] for r in rows], dtype=float)
    sn = np.array([r["var_sn_emp"] for r in rows])
    sr = np.array([r["var_sr_emp"] for r in rows])
    slope = np.polyfit(np.log(ns), np.log(sn), 1)[0]
    ok_sn = record_criterion("C3.sn_slope", abs(slope + 1) < 0.15, f"log-log slope of var_sn {slope:.3f} (-1 +/- 0.15)")
    plateau = sr[-1] / sr[grid.index(100)]
    ok_sr = record_criterion("C3.sr_plateau", 0.5 <= plateau <= 2.0,
                             f"var_sr(1000)/var_sr(100) = {plateau:.2f} (within [0.5, 2]; 1/n would give 0.1)")
    ok_id = record_criterion("C3.n1_identical", rows[0]["var_sn_emp"] == rows[0]["var_sr_emp"],
                             "var_sr(n=1) == var_sn(n=1) bit for bit")
    assert ok_sn and ok_sr and ok_id


# --------------------------------------------------------------------------- 4


def bs_put(x, strike=100.0, r=0.03, sigma=0.2, h=0.25):
    d1 = (math.log(x / strike) + (r + 0.5 * sigma**2) * h) / (sigma * math.sqrt(h))
    return strike * math.exp(-r * h) * norm.cdf(-(d1 - sigma * math.sqrt(h))) - x * norm.cdf(-d1)


def test_c4_unbiasedness():
    start = time.perf_counter()
    xs = np.r_[100.0, np.linspace(95.0, 105.0, 11)]
    problem = path_problem(GbmParams(100.0, 0.08, 0.03, 0.2), TimeGrid(0.25, 0.5, 0.25), EuropeanPut(100.0, 0.03, 0.25))
    plan = ReferencePlan.from_blocks(np.zeros(xs.size, dtype=int), [0])
    runs = 10**4
    est = np.array([estimate_sr(problem, xs, plan, 1000, Streams(SEED).trial(t)).losses for t in range(runs)])
    mean = est.mean(axis=0)[1:]
    se = est.std(axis=0, ddof=1)[1:] / math.sqrt(runs)
    z = (mean - np.array([bs_put(x) for x in xs[1:]])) / se
    elapsed = time.perf_counter() - start
    ok = bool(np.all(np.abs(z) < 4)) and elapsed < 300
    record_criterion("C4", ok, f"max |z| {np.abs(z).max():.2f} over targets 95..105 (< 4), runtime {elapsed:.0f}s")
    assert ok


# --------------------------------------------------------------------------- 5 and 9 (barrier)


@pytest.fixture(scope="module")
def barrier_report():
    cfg = load_config(CONFIGS / "barrier.json")
    cfg = dataclasses.replace(cfg, methods=("sn", "sr", "regression"))
    start = time.perf_counter()
    report = run_experiment(cfg, measure_timing=False)
    return report, time.perf_counter() - start


def test_c5_barrier_desk(barrier_report):
    report, elapsed = barrier_report
    rows = {r["method"]: r for r in report.summary_rows()}
    mse = {k: rows[k]["mse"] for k in ("sn", "sr", "regression")}
    order = mse["sn"] <= mse["sr"] <= mse["regression"]
    ok_order = record_criterion("C5.order", order, "MSE SN {sn:.3e} <= SR {sr:.3e} <= regression {regression:.3e}"
                                .format(**mse))
    ratio = rows["sr"]["inner_paths"] / rows["sn"]["inner_paths"]
    sr_res, sn_res = report.results["sr"], report.results["sn"]
    instrumented = sr_res.instrumented_paths / sn_res.instrumented_paths
    ok_paths = record_criterion("C5.paths", instrumented <= 10 / 760 + 1e-15 and ratio == instrumented,
                                f"SR/SN instrumented inner paths {instrumented:.5f} (<= 10/760 = {10 / 760:.5f})")
    ok_time = record_criterion("C5.runtime", elapsed < 900, f"desk runtime {elapsed:.0f}s (< 900s)")
    assert ok_order and ok_paths and ok_time


@pytest.mark.skipif(not FULL_SCALE, reason="set NESTSIM_FULL_SCALE=1")
def test_c5_barrier_full_scale():
    cfg = dataclasses.replace(load_config(CONFIGS / "barrier.json"), methods=("sn", "sr", "regression"), trials=1000)
    rows = {r["method"]: r for r in run_experiment(cfg, measure_timing=False).summary_rows()}
    reported = {"sn": 3.1980e-5, "sr": 5.3013e-5, "regression": 8.4838e-5}
    ok = all(abs(math.log(rows[k]["mse"] / v)) < math.log(3) for k, v in reported.items())
    record_criterion("C5.full_scale", ok, ", ".join(f"{k} {rows[k]['mse']:.3e} vs {v:.3e}" for k, v in reported.items()))
    assert ok


def test_c5_full_scale_notice():
    if not FULL_SCALE:
        record_criterion("C5.full_scale", None, "reported MSE magnitudes checked only with NESTSIM_FULL_SCALE=1")


# --------------------------------------------------------------------------- 6


def test_c6_nonparametric_convergence():
    start = time.perf_counter()
    medians = {}
    for m in (10**3, 10**4, 10**5):
        l = math.ceil(math.sqrt(m))  # noqa: E741
        errs = []
        for s in range(50):
            rows = likelihood_ratio_data(ref=99.0, target=99.2, m=m, l=l, seed=SEED + s)
            errs.append(max(abs(r["empirical_ratio"] - r["true_ratio"]) for r in rows))
        medians[m] = float(np.median(errs))
    elapsed = time.perf_counter() - start
    vals = [medians[m] for m in sorted(medians)]
    ok_mono = record_criterion("C6.monotone", vals[0] > vals[1] > vals[2],
                               "median max-bin error " + ", ".join(f"m={m:g}: {v:.3f}" for m, v in medians.items()))
    ok_bound = record_criterion("C6.bound", medians[10**5] < 0.05,
                                f"median max-bin error at m=1e5 {medians[10**5]:.3f} (< 0.05); runtime {elapsed:.0f}s")
    assert ok_mono and ok_bound and elapsed < 300


# --------------------------------------------------------------------------- 7


def test_c7_nsr_parity():
    start = time.perf_counter()
    rows = nsr_curve_data(points=100, s=10, seed=SEED)
    true = np.array([r["true_loss"] for r in rows])
    sr_err = np.abs(np.array([r["sr_loss"] for r in rows]) - true).max()
    nsr_err = np.abs(np.array([r["nsr_loss"] for r in rows]) - true).max()
    elapsed = time.perf_counter() - start
    ok = nsr_err <= 3 * sr_err and elapsed < 600
    record_criterion("C7", ok, f"max |NSR - truth| {nsr_err:.4f} <= 3 x max |SR - truth| {sr_err:.4f} "
                               f"over {len(rows)} scenarios, 10 references; runtime {elapsed:.0f}s")
    assert ok


# --------------------------------------------------------------------------- 8 and 9 (GMWB)


@pytest.fixture(scope="module")
def gmwb_report():
    start = time.perf_counter()
    report = run_experiment(load_config(CONFIGS / "gmwb.json"), measure_timing=False)
    return report, time.perf_counter() - start


def test_c8_gmwb(gmwb_report):
    report, elapsed = gmwb_report
    rows = {r["method"]: r for r in report.summary_rows()}
    (m_sn, s_sn), (m_sr, s_sr) = [(rows[k]["estimate_mean"], rows[k]["estimate_sd"]) for k in ("sn", "sr")]
    diff = abs(m_sn - m_sr)
    ok_band = record_criterion("C8.agree", diff <= 2 * s_sn and diff <= 2 * s_sr,
                               f"VaR_0.7 SN {m_sn:.4e} (SD {s_sn:.2e}), SR {m_sr:.4e} (SD {s_sr:.2e}), "
                               f"|diff| {diff:.2e} within both 2-SD bands")
    ok_sd = record_criterion("C8.sd_order", same_order(s_sn, 5.64e-3) and same_order(s_sr, 6.00e-3),
                             "SDs vs 5.64e-3 / 6.00e-3 within half a decade")
    ok_time = record_criterion("C8.runtime", elapsed < 1200, f"runtime {elapsed:.0f}s (< 1200s)")
    assert ok_band and ok_sd and ok_time


# --------------------------------------------------------------------------- 9


def _small(example, **kw):
    raw = {"schema_version": 1, "example": example, "n": 60, "m": 80, "trials": 2, "seed": SEED, "timing": False}
    if example == "asian":
        raw["oracle"] = {"budget": 50_000}
    raw.update(kw)
    return config_from_dict(raw)


def test_c9_ce_identities(barrier_report, gmwb_report):
    reports = {
        "barrier desk": barrier_report[0],
        "gmwb desk": gmwb_report[0],
        "barrier all methods": run_experiment(_small("barrier", methods=["sn", "sr", "nsr", "regression"])),
        "asian": run_experiment(_small("asian", methods=["sn", "sr", "regression"])),
        "gmwb quantile plan": run_experiment(_small("gmwb", plan={"strategy": "quantile_blocks", "s": 5})),
        "toy": run_experiment(_small("toy", n=10, m=20)),
    }
    ok = True
    for name, rep in reports.items():
        good = rep.ok
        ok = ok and good
        bad = [k for k, v in rep.checks.items() if not v]
        record_criterion(f"C9.ce.{name.replace(' ', '_')}", good, "counted operations match the effort identities"
                         + (f"; failing {bad}" if bad else ""))
    assert ok


@pytest.mark.parametrize("example", ["barrier", "asian", "gmwb"])
def test_c9_gamma_over_delta(example):
    gd = measure_gamma_delta(example, 1000)
    ok = record_criterion(f"C9.gamma_delta.{example}", gd.ratio > 1,
                          f"gamma {gd.gamma:.2e}s, delta {gd.delta:.2e}s, ratio {gd.ratio:.1f} (> 1)")
    assert ok


# --------------------------------------------------------------------------- 10


@pytest.mark.parametrize("name", ["barrier", "asian", "gmwb", "toy"])
def test_c10_determinism(tmp_path, name):
    cfg = load_config(CONFIGS / f"{name}.json")
    cfg = dataclasses.replace(cfg, trials=2, timing=False)
    if name == "asian":
        cfg = dataclasses.replace(cfg, oracle={"budget": 200_000})
    a = run_experiment(cfg).write(tmp_path / "a")
    b = run_experiment(cfg).write(tmp_path / "b")
    same = all((a / f).read_bytes() == (b / f).read_bytes() for f in ("report.csv", "estimates.csv", "config.json"))
    ok = record_criterion(f"C10.{name}", same, "report.csv, estimates.csv and config.json byte-identical on replay")
    assert ok
