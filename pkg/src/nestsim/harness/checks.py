"""Consistency checks of the closed-form weights against direct density ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nestsim.models import (
    GbmParams,
    GmwbParams,
    OuterScenario,
    OuterScenarios,
    Rsln2Params,
    TimeGrid,
    VasicekParams,
    simulate_inner_paths,
)
from nestsim.payoffs import default_barrier_model, default_barrier_portfolio, simulate_min_final
from nestsim.rng import make_rng
from nestsim.weights import WeightInput, barrier_joint_log_density, generic_log_weight, log_weight_matrix

CHECK_KINDS = ("gbm", "vasicek", "rsln2", "gmwb", "barrier_joint")


@dataclass(frozen=True)
class _Case:
    params: object
    horizon: float
    lo: float
    hi: float
    regimes: bool = False


def _case(kind) -> _Case:
    if kind == "gbm":
        return _Case(GbmParams(100.0, 0.08, 0.03, 0.2), 1 / 52, 95.0, 105.0)
    if kind == "vasicek":
        return _Case(VasicekParams(kappa=0.5, theta=0.04, sigma=0.01, f0=0.03), 1 / 12, 0.02, 0.06)
    if kind == "rsln2":
        return _Case(Rsln2Params(0.12, 0.12, -0.15, 0.25, 0.04, 0.2), 1 / 12, 0.9, 1.1, regimes=True)
    if kind == "gmwb":
        return _Case(GmwbParams(g=1.0, w=0.1, m_f=0.01, r=0.05, mu=0.08, sigma=0.2), 0.05, 0.5, 1.5)
    if kind == "barrier_joint":
        port = default_barrier_portfolio()
        return _Case(default_barrier_model(), port.horizon, 95.0, 105.0)
    raise ValueError(f"no weight check for {kind!r}; expected one of {CHECK_KINDS}")


@dataclass(frozen=True)
class WeightCheck:
    kind: str
    n_inputs: int
    max_scaled_error: float
    reflexive_exact: bool
    mean_weight: float
    mean_se: float
    tol: float = 1e-9

    @property
    def mean_z(self) -> float:
        return (self.mean_weight - 1.0) / self.mean_se

    @property
    def ok(self) -> bool:
        return self.max_scaled_error <= self.tol and self.reflexive_exact and abs(self.mean_z) < 4.0


def _draw(case: _Case, kind, ref: OuterScenario, m, rng) -> WeightInput:
    if kind == "barrier_joint":
        mn, fn = simulate_min_final(case.params, ref.value, case.horizon, m, rng)
        return WeightInput(min_price=mn, final_price=fn)
    grid = TimeGrid(case.horizon, 2 * case.horizon, case.horizon)
    paths = simulate_inner_paths(case.params, ref, grid, m, rng)
    regime = paths.regimes[:, 0] if paths.regimes is not None else None
    return WeightInput(first_step=paths.first_step, regime=regime)


def _direct_log_weight(case: _Case, kind, ref, tgt, inp: WeightInput):
    if kind == "barrier_joint":
        p = case.params
        lt = barrier_joint_log_density(inp.min_price, inp.final_price, tgt.value, p.r, p.sigma, case.horizon)
        lr = barrier_joint_log_density(inp.min_price, inp.final_price, ref.value, p.r, p.sigma, case.horizon)
        return lt - lr
    kw = {"to_regime": inp.regime} if inp.regime is not None else {}
    with np.errstate(divide="ignore", invalid="ignore"):
        return generic_log_weight(case.params, ref, tgt, inp.first_step, case.horizon, **kw)


def _state(case, value, regime):
    return OuterScenario(float(value), int(regime) if case.regimes else None)


def check_weight_kind(kind, n_refs=100, targets_per_ref=10, draws_per_ref=10, mean_m=10**6, seed=0,
                      tol=1e-9) -> WeightCheck:
    """Closed form vs direct ratio on ``n_refs * targets_per_ref * draws_per_ref`` inputs, plus mean one.

    The error is ``|closed - direct| / max(1, |direct|)`` on the weights
    themselves; zero weights must agree exactly.
    """
    case = _case(kind)
    rng = make_rng(seed, 60)
    worst = 0.0
    reflexive = True
    n_inputs = 0
    for _ in range(n_refs):
        x_ref = rng.uniform(case.lo, case.hi)
        ref = _state(case, x_ref, rng.integers(1, 3))
        hi = x_ref if kind == "barrier_joint" else case.hi
        tvals = rng.uniform(case.lo, hi, targets_per_ref)
        tregs = rng.integers(1, 3, targets_per_ref) if case.regimes else None
        targets = OuterScenarios(tvals, tregs)
        inp = _draw(case, kind, ref, draws_per_ref, rng)
        closed = np.exp(log_weight_matrix(kind, case.params, ref, targets, inp, case.horizon))
        for i in range(targets_per_ref):
            direct = np.exp(_direct_log_weight(case, kind, ref, targets[i], inp))
            err = np.abs(closed[i] - direct) / np.maximum(1.0, np.abs(direct))
            worst = max(worst, float(err.max()))
        n_inputs += targets_per_ref * draws_per_ref
        same = np.exp(log_weight_matrix(kind, case.params, ref, OuterScenarios([ref.value],
                                        [ref.regime] if case.regimes else None), inp, case.horizon))
        reflexive = reflexive and bool(np.all(same == 1.0))

    # mean one under the reference kernel, for a target a short distance away
    mid = 0.5 * (case.lo + case.hi)
    ref = _state(case, mid, 1)
    step = 0.01 * (case.hi - case.lo)
    tgt = OuterScenarios([mid - step], [2] if case.regimes else None)
    inp = _draw(case, kind, ref, mean_m, make_rng(seed, 61))
    w = np.exp(log_weight_matrix(kind, case.params, ref, tgt, inp, case.horizon))[0]
    return WeightCheck(kind, n_inputs, worst, reflexive, float(w.mean()),
                       float(w.std(ddof=1) / math.sqrt(w.size)), tol)
