"""Orchestration of the barrier, Asian, GMWB and toy experiments."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from nestsim import analysis
from nestsim.engine import (
    BarrierProblem,
    CeRecord,
    MarkovPathProblem,
    barrier_basis,
    equidistant_sample_points,
    estimate_nsr,
    estimate_regression,
    estimate_sn,
    estimate_sr,
    make_reference_plan,
    polynomial_basis,
)
from nestsim.errors import ConfigError
from nestsim.harness.config import ExperimentConfig
from nestsim.models import OuterScenario, OuterScenarios
from nestsim.payoffs import (
    asian_leg_value_curve,
    asian_purchase_price,
    barrier_loss_quantile,
    barrier_purchase_prices,
    barrier_true_excess,
    default_asian_basket,
    default_barrier_model,
    default_barrier_portfolio,
    default_gmwb_contract,
)
from nestsim.riskmeasures import RiskMeasureSpec, apply_risk_measure
from nestsim.rng import Streams, make_rng

_ASSET_KEY = 7


@dataclass
class MethodResult:
    method: str
    estimates: list = field(default_factory=list)
    refs: list = field(default_factory=list)
    inner_paths: int = 0
    instrumented_paths: int = 0
    weight_evals: int = 0
    target_draws: int = 0
    ce_identity: bool = True
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    results: dict
    oracle: Optional[float]
    oracle_se: Optional[float]
    threshold: Optional[float]
    gamma: Optional[float] = None
    delta: Optional[float] = None
    notes: dict = field(default_factory=dict)

    @property
    def checks(self) -> dict:
        out = {}
        for name, res in self.results.items():
            out[f"ce_identity_{name}"] = res.ce_identity
            out[f"instrumented_paths_{name}"] = res.instrumented_paths == res.inner_paths
        return out

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def summary_rows(self):
        rows = []
        for name, res in self.results.items():
            est = np.asarray(res.estimates, dtype=float)
            row = {
                "example": self.config.example,
                "method": name,
                "trials": len(est),
                "n": self.config.n,
                "m": self.config.m,
                "references_mean": float(np.mean(res.refs)) if res.refs else "",
                "estimate_mean": float(est.mean()),
                "estimate_sd": float(est.std(ddof=1)) if len(est) > 1 else 0.0,
                "oracle": "" if self.oracle is None else self.oracle,
                "oracle_se": "" if self.oracle_se is None else self.oracle_se,
                "bias": "" if self.oracle is None else float(est.mean() - self.oracle),
                "mse": "" if self.oracle is None else float(np.mean((est - self.oracle) ** 2)),
                "inner_paths": res.inner_paths,
                "weight_evals": res.weight_evals,
                "target_draws": res.target_draws,
                "ce_identity": int(res.ce_identity),
            }
            row.update(res.extra)
            rows.append(row)
        return rows

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = self.summary_rows()
        keys = list(dict.fromkeys(k for r in rows for k in r))
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, restval="", lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})
        with open(out / "estimates.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "method", "estimate"])
            for name, res in self.results.items():
                for t, v in enumerate(res.estimates):
                    w.writerow([t, name, _fmt(v)])
        # wall-clock figures vary run to run, so they live apart from the replayable report
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            # target draws (non-parametric method only) are priced at one inner-path unit each
            w.writerow(["method", "wall_time_s", "gamma_s", "delta_s", "ce_time_s", "ce_time_with_targets_s"])
            for name, res in self.results.items():
                ce_time = ce_all = ""
                if self.gamma is not None:
                    ce_time = res.inner_paths * self.gamma + res.weight_evals * self.delta
                    ce_all = ce_time + res.target_draws * self.gamma
                gamma = "" if self.gamma is None else self.gamma
                delta = "" if self.delta is None else self.delta
                w.writerow([name, res.wall_time, gamma, delta, ce_time, ce_all])
        with open(out / "config.json", "w") as fh:
            json.dump(self.config.to_dict(), fh, indent=2, sort_keys=True)
        return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# --------------------------------------------------------------------------- example setups


class _BarrierSetup:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = default_barrier_model()
        port = default_barrier_portfolio()
        self.portfolio = port.with_purchase_prices(barrier_purchase_prices(self.model, port))
        self.problem = BarrierProblem(self.model, self.portfolio)
        self.spec = _risk_spec(cfg, self._derive_threshold)
        self.oracle, self.oracle_se = self._truth()

    def _derive_threshold(self, alpha):
        return barrier_loss_quantile(self.model, self.portfolio, alpha)

    def _truth(self):
        if self.spec.kind == "expected_excess":
            return barrier_true_excess(self.model, self.portfolio, self.spec.c), 0.0
        return None, None

    def outer(self, streams):
        return self.model.simulate_outer(self.cfg.n, self.portfolio.tau, streams.outer())

    def basis(self):
        if self.cfg.regression.get("basis", "barrier") == "barrier":
            return barrier_basis([o.barrier for o in self.portfolio.options])
        return polynomial_basis(self.cfg.regression.get("degree", 2))

    def losses(self, method, sc, streams):
        est, plan = _run_method(self.cfg, self.problem, method, sc, streams, self.basis())
        return est.losses, [(est.ce, plan)]


class _GmwbSetup:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.contract = default_gmwb_contract()
        self.grid = self.contract.grid
        self.problem = MarkovPathProblem(self.contract.params, self.grid, self.contract)
        self.spec = _risk_spec(cfg, None)
        self.oracle, self.oracle_se = None, None

    def outer(self, streams):
        return self.contract.params.simulate_outer(self.cfg.n, self.grid, streams.outer())

    def basis(self):
        return polynomial_basis(self.cfg.regression.get("degree", 5))

    def losses(self, method, sc, streams):
        est, plan = _run_method(self.cfg, self.problem, method, sc, streams, self.basis())
        return est.losses, [(est.ce, plan)]


class _AsianSetup:
    """Five independent single-asset problems; the basket loss is their sum less C."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.basket = default_asian_basket()
        oracle_budget = int(cfg.oracle.get("budget", 2_000_000))
        oracle_seed = int(cfg.oracle.get("seed", 0))
        self.purchase_price = asian_purchase_price(self.basket, m=oracle_budget, seed=oracle_seed)
        self.problem = MarkovPathProblem(self.basket.model, self.basket.grid, self.basket.leg())
        self._outer_truth = self._truth_sample(oracle_budget, oracle_seed)
        self.spec = _risk_spec(cfg, lambda a: float(np.quantile(self._outer_truth, a, method="inverted_cdf")))
        self.oracle, self.oracle_se = self._truth()

    def _truth_sample(self, budget, seed, n_outer=1_000_000):
        g = self.basket.model
        tau = self.basket.grid.tau
        s = g.sigma * math.sqrt(tau)
        mean = math.log(g.f0) + (g.mu - 0.5 * g.sigma**2) * tau
        xg = np.exp(mean + s * np.linspace(-7.0, 7.0, 281))
        curve, _ = asian_leg_value_curve(self.basket, xg, m=budget, seed=seed)
        x = np.exp(mean + s * make_rng(seed, 8).standard_normal((n_outer, self.basket.n_assets)))
        return np.interp(x, xg, curve).sum(axis=1) - self.purchase_price

    def _truth(self):
        loss = self._outer_truth
        if self.spec.kind == "expected_excess":
            v = np.maximum(loss - self.spec.c, 0.0)
            return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
        return None, None

    def _asset_streams(self, streams, j):
        return Streams(streams.seed, streams.prefix + (_ASSET_KEY, j))

    def outer(self, streams):
        g = self.basket.model
        return [g.simulate_outer(self.cfg.n, self.basket.grid.tau, self._asset_streams(streams, j).outer())
                for j in range(self.basket.n_assets)]

    def losses(self, method, sc_list, streams):
        total = np.full(self.cfg.n, -self.purchase_price)
        ces = []
        basis = polynomial_basis(self.cfg.regression.get("degree", 5))
        for j, sc in enumerate(sc_list):
            est, plan = _run_method(self.cfg, self.problem, method, sc, self._asset_streams(streams, j), basis)
            total += est.losses
            ces.append((est.ce, plan))
        return total, ces


def _risk_spec(cfg, derive) -> RiskMeasureSpec:
    r = dict(cfg.risk)
    kind = r["kind"]
    alpha = r.get("alpha", 0.95)
    c = r.get("c", 0.0)
    if c == "derive":
        if derive is None:
            raise ConfigError(f"cannot derive a threshold for {cfg.example}")
        c = derive(alpha)
    return RiskMeasureSpec(kind, c=float(c), alpha=float(alpha))


def _run_method(cfg, problem, method, sc: OuterScenarios, streams, basis):
    if method == "sn":
        return estimate_sn(problem, sc, cfg.m, streams), None
    if method in ("sr", "nsr"):
        p = cfg.plan
        plan = make_reference_plan(sc, p["strategy"], p.get("s"), p.get("anchor", "midpoint"),
                                   p.get("ratio", 1.1))
        if method == "sr":
            return estimate_sr(problem, sc, plan, cfg.m, streams), plan
        q = cfg.nsr
        est = estimate_nsr(problem, sc, plan, cfg.m, streams, q.get("bins", 5),
                           q.get("partition", "quantile"), q.get("outside", "clamp"))
        return est, plan
    if method == "regression":
        r = cfg.regression
        pts = equidistant_sample_points(sc.values, r.get("points", 10), r.get("rule", "right"))
        if hasattr(basis, "degree"):
            # raw monomials of values near 100 are numerically rank deficient at degree 5
            half = 0.5 * (pts.max() - pts.min())
            basis = polynomial_basis(basis.degree, 0.5 * (pts.max() + pts.min()), half if half > 0 else 1.0)
        est = estimate_regression(problem, sc, pts, cfg.m, basis, streams, r.get("rank_policy", "raise"))
        return est, None
    raise ConfigError(f"unknown method {method!r}")


def ce_identity_holds(ce: CeRecord, plan=None) -> bool:
    """Counted operations against the closed-form effort identities."""
    n, m, b = ce.n, ce.m, ce.b
    if ce.method == "sn":
        return ce.inner_paths == n * m and ce.weight_evals == 0
    if ce.method == "regression":
        return ce.inner_paths == b * m and ce.weight_evals == 0
    pairs = int(np.count_nonzero(plan.mix)) - b
    ok = ce.inner_paths == b * m
    if plan.blocks is not None:
        ok = ok and pairs == n - b
    if ce.method == "nsr":
        # targets at exactly a reference's state skip the ratio and its draws
        return (ok and ce.target_draws == ce.weight_evals <= pairs * m
                and (pairs * m - ce.target_draws) % m == 0)
    return ok and ce.weight_evals == pairs * m


# --------------------------------------------------------------------------- runners


def build_setup(cfg: ExperimentConfig):
    if cfg.example == "barrier":
        return _BarrierSetup(cfg)
    if cfg.example == "asian":
        return _AsianSetup(cfg)
    if cfg.example == "gmwb":
        return _GmwbSetup(cfg)
    raise ConfigError(f"no setup for {cfg.example!r}")


def run_experiment(cfg: ExperimentConfig, measure_timing: Optional[bool] = None) -> ExperimentReport:
    """Run every configured method over ``cfg.trials`` independent replications.

    Each trial owns the stream family ``Streams(seed).trial(t)``; all methods in
    a trial see the same outer scenarios.
    """
    if cfg.example == "toy":
        return _run_toy(cfg)
    setup = build_setup(cfg)
    results = {name: MethodResult(name) for name in cfg.methods}
    base = Streams(cfg.seed)
    for t in range(cfg.trials):
        ts = base.trial(t)
        sc = setup.outer(ts)
        for name in cfg.methods:
            res = results[name]
            before = setup.problem.paths_simulated
            start = time.perf_counter()
            losses, ces = setup.losses(name, sc, ts)
            res.wall_time += time.perf_counter() - start
            res.instrumented_paths += setup.problem.paths_simulated - before
            res.estimates.append(apply_risk_measure(setup.spec, losses))
            res.refs.append(sum(ce.b for ce, _ in ces))
            for ce, plan in ces:
                res.inner_paths += ce.inner_paths
                res.weight_evals += ce.weight_evals
                res.target_draws += ce.target_draws
                res.ce_identity = res.ce_identity and ce_identity_holds(ce, plan)
    report = ExperimentReport(cfg, results, setup.oracle, setup.oracle_se, setup.spec.c)
    timing = cfg.timing if measure_timing is None else measure_timing
    if timing:
        gd = measure_gamma_delta(cfg.example, cfg.m)
        report.gamma, report.delta = gd.gamma, gd.delta
    return report


def _run_toy(cfg: ExperimentConfig) -> ExperimentReport:
    consts = analysis.compute_toy_constants()
    results = {}
    base = Streams(cfg.seed)
    analytic = {"sn": analysis.var_sn(consts, cfg.n, cfg.m), "sr": analysis.var_sr(consts, cfg.n, cfg.m)}
    sim = {"sn": analysis.toy_sn_estimate, "sr": analysis.toy_sr_estimate}
    for name in cfg.methods:
        res = MethodResult(name)
        start = time.perf_counter()
        for t in range(cfg.trials):
            res.estimates.append(sim[name](cfg.n, cfg.m, base.trial(t).aux(5)))
        res.wall_time = time.perf_counter() - start
        res.inner_paths = cfg.trials * cfg.m * (cfg.n if name == "sn" else 1)
        res.instrumented_paths = res.inner_paths
        var_emp = float(np.var(res.estimates, ddof=1)) if cfg.trials > 1 else 0.0
        res.extra = {"var_empirical": var_emp, "var_analytic": analytic[name],
                     "var_rel_err": var_emp / analytic[name] - 1.0}
        results[name] = res
    return ExperimentReport(cfg, results, consts.B1, 0.0, None)


# --------------------------------------------------------------------------- timing


@dataclass(frozen=True)
class GammaDelta:
    gamma: float
    delta: float

    @property
    def ratio(self) -> float:
        return self.gamma / self.delta


_TIMING_STATES = {
    # reference value and a spread of targets for which the weights are defined
    "barrier": (100.0, np.linspace(95.0, 100.0, 50)),
    "asian": (100.0, np.linspace(97.0, 103.0, 50)),
    "gmwb": (1.0, np.linspace(0.8, 1.2, 50)),
}


def measure_gamma_delta(example_id, m, repeats=7, seed=0) -> GammaDelta:
    """Median wall time per inner path (with payoff) and per weight evaluation.

    Timings are machine dependent; only their ratio is meaningful across machines.
    """
    if example_id == "barrier":
        port = default_barrier_portfolio()
        problem = BarrierProblem(default_barrier_model(), port)
    elif example_id == "asian":
        b = default_asian_basket()
        problem = MarkovPathProblem(b.model, b.grid, b.leg())
    elif example_id == "gmwb":
        c = default_gmwb_contract()
        problem = MarkovPathProblem(c.params, c.grid, c)
    else:
        raise ConfigError(f"no timing setup for {example_id!r}")
    ref_value, target_values = _TIMING_STATES[example_id]
    ref = OuterScenario(ref_value)
    targets = OuterScenarios(target_values)
    problem.simulate(ref, m, make_rng(seed, 0))  # warm-up
    g_times, d_times = [], []
    for r in range(repeats):
        t0 = time.perf_counter()
        sample = problem.simulate(ref, m, make_rng(seed, 1, r))
        g_times.append((time.perf_counter() - t0) / m)
        t0 = time.perf_counter()
        np.exp(problem.log_weights(ref, targets, sample))
        d_times.append((time.perf_counter() - t0) / (len(targets) * m))
    return GammaDelta(float(np.median(g_times)), float(np.median(d_times)))
