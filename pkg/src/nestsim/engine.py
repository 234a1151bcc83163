"""Inner-loop estimators: standard nested, sample recycling, non-parametric recycling, regression.

An estimation *problem* bundles a model with a payoff and knows how to draw
inner samples for one scenario, how to weight a reference's samples for a set
of targets, and which statistic the non-parametric ratio bins on.  Each
scenario draws from its own keyed random stream, so a recycling plan in which
every scenario is its own reference reproduces standard nested simulation bit
for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from nestsim.empirical import DEFAULT_BINS, build_empirical_ratio
from nestsim.errors import ParameterDomainError, SingularFitError, SupportMismatchError, TooManyBlocksError
from nestsim.models import (
    GbmParams,
    OuterScenario,
    OuterScenarios,
    TimeGrid,
    simulate_inner_paths,
)
from nestsim.payoffs import BarrierPortfolio, simulate_min_final
from nestsim.rng import Streams
from nestsim.weights import WeightInput, kind_for, log_weight_matrix

# cap on the size of one (targets x paths) weight block
_BLOCK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class InnerSampleSet:
    """Payoffs and weight inputs of m inner draws from one reference scenario."""

    ref_scenario: OuterScenario
    payoffs: np.ndarray
    weight_input: WeightInput
    statistic: np.ndarray

    def __post_init__(self):
        if len(self.weight_input) not in (0, self.payoffs.shape[0]):
            raise ValueError("payoffs and weight inputs must have the same length")

    @property
    def m(self) -> int:
        return self.payoffs.shape[0]


@dataclass
class MarkovPathProblem:
    """Full inner paths of a Markov model with a closed-form one-step weight.

    ``payoff`` needs ``path_payoff(InnerPaths)`` and ``deterministic_term(x)``.
    """

    model: object
    grid: TimeGrid
    payoff: object
    weight_kind: Optional[str] = None
    paths_simulated: int = 0

    def __post_init__(self):
        if self.weight_kind is None:
            self.weight_kind = kind_for(self.model)

    def simulate(self, scenario: OuterScenario, m, rng) -> InnerSampleSet:
        paths = simulate_inner_paths(self.model, scenario, self.grid, m, rng)
        self.paths_simulated += m
        first = paths.regimes[:, 0] if paths.regimes is not None else None
        inp = WeightInput(first_step=paths.first_step, regime=first)
        return InnerSampleSet(scenario, self.payoff.path_payoff(paths), inp, paths.first_step)

    def log_weights(self, ref: OuterScenario, targets: OuterScenarios, sample: InnerSampleSet):
        return log_weight_matrix(self.weight_kind, self.model, ref, targets, sample.weight_input, self.grid.dt)

    def target_statistic(self, scenario: OuterScenario, m, rng) -> np.ndarray:
        one_step = TimeGrid(self.grid.tau, self.grid.tau + self.grid.dt, self.grid.dt)
        return simulate_inner_paths(self.model, scenario, one_step, m, rng).first_step

    def deterministic_terms(self, scenarios: OuterScenarios) -> np.ndarray:
        return np.array([self.payoff.deterministic_term(x) for x in scenarios.values], dtype=float)

    def support_mask(self, sample: InnerSampleSet, target: OuterScenario):
        return None


@dataclass
class BarrierProblem:
    """Barrier portfolio driven by exact (running minimum, terminal price) draws."""

    model: GbmParams
    portfolio: BarrierPortfolio
    paths_simulated: int = 0

    def simulate(self, scenario: OuterScenario, m, rng) -> InnerSampleSet:
        mn, fn = simulate_min_final(self.model, scenario.value, self.portfolio.horizon, m, rng)
        self.paths_simulated += m
        inp = WeightInput(min_price=mn, final_price=fn)
        return InnerSampleSet(scenario, self.portfolio.path_payoff(mn, fn), inp, barrier_statistic(mn, fn))

    def log_weights(self, ref: OuterScenario, targets: OuterScenarios, sample: InnerSampleSet):
        return log_weight_matrix("barrier_joint", self.model, ref, targets, sample.weight_input,
                                 self.portfolio.horizon)

    def target_statistic(self, scenario: OuterScenario, m, rng) -> np.ndarray:
        mn, fn = simulate_min_final(self.model, scenario.value, self.portfolio.horizon, m, rng)
        return barrier_statistic(mn, fn)

    def deterministic_terms(self, scenarios: OuterScenarios) -> np.ndarray:
        return np.full(len(scenarios), self.portfolio.deterministic_term())

    def support_mask(self, sample: InnerSampleSet, target: OuterScenario):
        """Reference draws a path started at ``target`` could produce: its running minimum cannot exceed its start."""
        return sample.weight_input.min_price <= target.value


def barrier_statistic(min_price, final_price):
    """log(final / min^2).

    On the set where both scenarios can produce the pair, the barrier weight is
    a function of this value alone; off it the weight is zero.
    """
    return np.log(final_price) - 2.0 * np.log(min_price)


# --------------------------------------------------------------------------- plans


@dataclass(frozen=True)
class ReferencePlan:
    """References (scenario indices) and the mixing weights w_ik, shape ``(n, b)``."""

    references: np.ndarray
    mix: np.ndarray
    blocks: Optional[np.ndarray] = None

    def __post_init__(self):
        refs = np.asarray(self.references, dtype=int)
        mix = np.asarray(self.mix, dtype=float)
        object.__setattr__(self, "references", refs)
        object.__setattr__(self, "mix", mix)
        if mix.ndim != 2 or mix.shape[1] != refs.shape[0]:
            raise ParameterDomainError("mix must have one column per reference")
        if np.any(mix < 0):
            raise ParameterDomainError("mixing weights must be non-negative")
        if not np.allclose(mix.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ParameterDomainError("mixing weights must sum to one for every target")

    @property
    def b(self) -> int:
        return self.references.shape[0]

    @property
    def n(self) -> int:
        return self.mix.shape[0]

    def targets_of(self, k) -> np.ndarray:
        return np.flatnonzero(self.mix[:, k] > 0)

    def primary_reference(self) -> np.ndarray:
        """Scenario index of the heaviest reference of each target."""
        return self.references[np.argmax(self.mix, axis=1)]

    @classmethod
    def from_blocks(cls, blocks, references) -> "ReferencePlan":
        blocks = np.asarray(blocks, dtype=int)
        mix = np.zeros((blocks.shape[0], len(references)))
        mix[np.arange(blocks.shape[0]), blocks] = 1.0
        return cls(np.asarray(references, dtype=int), mix, blocks)


def _anchor(values, members, anchor, lo=None, hi=None):
    vals = values[members]
    if anchor == "right_endpoint":
        return members[np.argmax(vals)]
    if anchor == "left_endpoint":
        return members[np.argmin(vals)]
    if anchor == "midpoint":
        if lo is None:
            order = members[np.argsort(vals, kind="stable")]
            return order[(len(order) - 1) // 2]
        return members[np.argmin(np.abs(vals - 0.5 * (lo + hi)))]
    raise ParameterDomainError(f"unknown anchor {anchor!r}")


def _ladder_references(values, ratio):
    pos = np.sort(np.unique(values[values > 0]))
    if pos.size == 0:
        return pos
    refs = [pos[-1]]
    while True:
        prev = refs[-1]
        below = pos[pos < prev]
        if below.size == 0:
            break
        near = below[below > prev / ratio]
        refs.append(near.min() if near.size else below.max())
    return np.array(refs)


def make_reference_plan(scenarios, strategy, s=None, anchor="midpoint", ratio=1.1) -> ReferencePlan:
    """Assign targets to references.

    Strategies: ``equidistant_blocks`` and ``quantile_blocks`` (``s`` blocks,
    one reference per non-empty block chosen by ``anchor``), ``ratio_ladder``
    (references stepping down from the largest positive value by factor
    ``ratio``; each target uses the smallest reference at or above it, and
    non-positive values share one block), and ``equal_weight_all`` (``s``
    quantile-block references mixed with weight 1/s for every target).
    """
    values = scenarios.values if isinstance(scenarios, OuterScenarios) else np.asarray(scenarios, dtype=float)
    n = values.shape[0]
    if strategy in ("equidistant_blocks", "quantile_blocks", "equal_weight_all"):
        if s is None or s < 1:
            raise ParameterDomainError("block count s must be at least 1")
        if s > n:
            raise TooManyBlocksError(f"{s} blocks for {n} scenarios")

    if strategy == "equidistant_blocks":
        lo, hi = float(values.min()), float(values.max())
        edges = np.linspace(lo, hi, s + 1)
        # left-closed/right-open; a value on a boundary joins the right block, the max the last
        raw = np.minimum(np.searchsorted(edges[1:-1], values, side="right"), s - 1)
        refs, blocks = [], np.empty(n, dtype=int)
        for j in range(s):
            members = np.flatnonzero(raw == j)
            if members.size == 0:
                continue
            blocks[members] = len(refs)
            refs.append(_anchor(values, members, anchor, edges[j], edges[j + 1]))
        return ReferencePlan.from_blocks(blocks, refs)

    if strategy in ("quantile_blocks", "equal_weight_all"):
        order = np.argsort(values, kind="stable")
        refs, blocks = [], np.empty(n, dtype=int)
        for j, members in enumerate(np.array_split(order, s)):
            blocks[members] = j
            refs.append(_anchor(values, members, anchor))
        if strategy == "quantile_blocks":
            return ReferencePlan.from_blocks(blocks, refs)
        return ReferencePlan(np.asarray(refs), np.full((n, s), 1.0 / s))

    if strategy == "ratio_ladder":
        ladder = _ladder_references(values, ratio)
        refs, blocks = [], np.empty(n, dtype=int)
        pos = values > 0
        if ladder.size:
            asc = ladder[::-1]
            slot = np.searchsorted(asc, values[pos], side="left")
            ref_idx = [int(np.flatnonzero(values == v)[0]) for v in asc]
            used = np.unique(slot)
            remap = {u: k for k, u in enumerate(used)}
            refs = [ref_idx[u] for u in used]
            blocks[pos] = [remap[u] for u in slot]
        if (~pos).any():
            depleted = np.flatnonzero(~pos)
            blocks[depleted] = len(refs)
            refs.append(depleted[0])
        return ReferencePlan.from_blocks(blocks, refs)

    raise ParameterDomainError(f"unknown strategy {strategy!r}")


def equidistant_sample_points(values, s, where="right") -> np.ndarray:
    """Boundary values of ``s`` equal-width blocks over [min, max]: used as regression design points."""
    values = np.asarray(values, dtype=float)
    edges = np.linspace(values.min(), values.max(), s + 1)
    if where == "right":
        return edges[1:]
    if where == "left":
        return edges[:-1]
    if where == "midpoint":
        return 0.5 * (edges[1:] + edges[:-1])
    raise ParameterDomainError(f"unknown sample point rule {where!r}")


# --------------------------------------------------------------------------- estimates


@dataclass(frozen=True)
class CeRecord:
    """Counted operations of one estimation run.

    ``inner_paths`` and ``payoff_evals`` are in units of gamma (one inner path
    plus its payoff), ``weight_evals`` in units of delta (one weight per path),
    and ``target_draws`` counts first-step statistics drawn for the
    non-parametric ratio.
    """

    method: str
    n: int
    m: int
    b: int
    inner_paths: int
    payoff_evals: int
    weight_evals: int = 0
    target_draws: int = 0

    def effort(self, gamma, delta, target_unit=0.0) -> float:
        return self.inner_paths * gamma + self.weight_evals * delta + self.target_draws * target_unit


@dataclass(frozen=True)
class LossEstimates:
    scenario_values: np.ndarray
    losses: np.ndarray
    method: str
    ce: CeRecord
    reference_ids: np.ndarray = field(default=None)

    def __len__(self):
        return self.losses.shape[0]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["scenario_value", "loss", "method", "reference_id"])
            refs = self.reference_ids if self.reference_ids is not None else np.full(len(self), -1)
            for x, v, r in zip(self.scenario_values, self.losses, refs):
                out.writerow([repr(float(x)), repr(float(v)), self.method, int(r)])


def _as_scenarios(scenarios) -> OuterScenarios:
    if isinstance(scenarios, OuterScenarios):
        return scenarios
    return OuterScenarios.from_values(scenarios)


def _check_m(m):
    if m < 1:
        raise ParameterDomainError("need at least one inner path")


def estimate_sn(problem, scenarios, m, streams: Streams) -> LossEstimates:
    """Standard nested estimator: m fresh inner draws per scenario."""
    sc = _as_scenarios(scenarios)
    _check_m(m)
    n = len(sc)
    out = problem.deterministic_terms(sc)
    for i in range(n):
        sample = problem.simulate(sc[i], m, streams.inner(i))
        out[i] = out[i] + sample.payoffs.mean()
    ce = CeRecord("sn", n, m, n, n * m, n * m)
    return LossEstimates(sc.values, out, "sn", ce, np.arange(n))


def _weighted_means(problem, ref_sc, targets, sample, chunk_rows):
    vals = np.empty(len(targets))
    for start in range(0, len(targets), chunk_rows):
        idx = np.arange(start, min(start + chunk_rows, len(targets)))
        w = np.exp(problem.log_weights(ref_sc, targets.subset(idx), sample))
        vals[idx] = (w @ sample.payoffs) / sample.m
    return vals


def estimate_sr(problem, scenarios, plan: ReferencePlan, m, streams: Streams) -> LossEstimates:
    """Sample recycling: each reference's inner draws, reweighted, serve all of its targets.

    A reference scenario's own loss uses its samples with unit weight.  Support
    mismatches are re-raised with ``pair = (target index, reference index)``.
    """
    sc = _as_scenarios(scenarios)
    _check_m(m)
    n = len(sc)
    if plan.n != n:
        raise ParameterDomainError("plan and scenarios disagree on n")
    acc = np.zeros(n)
    weight_evals = 0
    chunk_rows = max(1, _BLOCK_ELEMENTS // m)
    for k, r in enumerate(plan.references):
        ref_sc = sc[r]
        sample = problem.simulate(ref_sc, m, streams.inner(int(r)))
        tgt = plan.targets_of(k)
        own = tgt == r
        if own.any():
            acc[r] += plan.mix[r, k] * sample.payoffs.mean()
        others = tgt[~own]
        if others.size == 0:
            continue
        try:
            vals = _weighted_means(problem, ref_sc, sc.subset(others), sample, chunk_rows)
        except SupportMismatchError as exc:
            bad = _first_mismatch(problem, ref_sc, sc, others, sample)
            raise SupportMismatchError(f"{exc} (target {bad}, reference {int(r)})", pair=(bad, int(r))) from exc
        acc[others] += plan.mix[others, k] * vals
        weight_evals += others.size * m
    losses = problem.deterministic_terms(sc) + acc
    b = plan.b
    ce = CeRecord("sr", n, m, b, b * m, b * m, weight_evals)
    return LossEstimates(sc.values, losses, "sr", ce, plan.primary_reference())


def _first_mismatch(problem, ref_sc, sc, others, sample):
    for i in others:
        try:
            problem.log_weights(ref_sc, sc.subset([i]), sample)
        except SupportMismatchError:
            return int(i)
    return -1


def estimate_nsr(problem, scenarios, plan: ReferencePlan, m, streams: Streams, l=DEFAULT_BINS,
                 partition="quantile", outside="clamp") -> LossEstimates:
    """Recycling with binned empirical likelihood ratios in place of closed-form weights.

    Each target draws m values of the binning statistic from its own stream.
    When the problem reports a support mask, bins are built from the reference
    draws inside the target's support only and the rest get weight zero; the
    estimate is then the mean over that subset.
    """
    sc = _as_scenarios(scenarios)
    _check_m(m)
    n = len(sc)
    acc = np.zeros(n)
    weight_evals = 0
    target_draws = 0
    for k, r in enumerate(plan.references):
        ref_sc = sc[r]
        sample = problem.simulate(ref_sc, m, streams.inner(int(r)))
        for i in plan.targets_of(k):
            if i == r or sc[i] == ref_sc:
                # same state: the empirical ratio would be 1 up to noise, so use it exactly
                acc[i] += plan.mix[i, k] * sample.payoffs.mean()
                continue
            tstat = problem.target_statistic(sc[i], m, streams.target(int(i)))
            target_draws += m
            stat, pay = sample.statistic, sample.payoffs
            mask = problem.support_mask(sample, sc[i])
            if mask is not None:
                stat, pay = stat[mask], pay[mask]
            ratio = build_empirical_ratio(stat, tstat, l, partition, outside)
            acc[i] += plan.mix[i, k] * np.mean(ratio(stat) * pay)
            weight_evals += m
    losses = problem.deterministic_terms(sc) + acc
    ce = CeRecord("nsr", n, m, plan.b, plan.b * m, plan.b * m, weight_evals, target_draws)
    return LossEstimates(sc.values, losses, "nsr", ce, plan.primary_reference())


# --------------------------------------------------------------------------- regression


def polynomial_basis(degree, center=0.0, scale=1.0) -> Callable:
    """Monomials in ``(x - center) / scale``; the span is the same, the conditioning is not."""
    if scale <= 0:
        raise ParameterDomainError(f"scale must be positive, got {scale}")

    def basis(x):
        u = (np.asarray(x, dtype=float) - center) / scale
        return np.vander(u, degree + 1, increasing=True)

    basis.size = degree + 1
    basis.degree = degree
    return basis


def barrier_basis(barriers) -> Callable:
    """1, F, (F - H_j)^+ and the squares of all non-constant terms."""
    barriers = tuple(float(h) for h in barriers)

    def basis(x):
        x = np.asarray(x, dtype=float)
        cols = [x] + [np.maximum(x - h, 0.0) for h in barriers]
        return np.column_stack([np.ones_like(x)] + cols + [c * c for c in cols])

    basis.size = 1 + 2 * (1 + len(barriers))
    return basis


def estimate_regression(problem, scenarios, sample_points, m, basis, streams: Streams,
                        rank_policy="raise") -> LossEstimates:
    """Least-squares fit of nested losses at design points, read off at every scenario.

    The inner loops run only at ``sample_points``.  Fewer points than basis
    functions always raises SingularFitError; a rank-deficient design raises
    too unless ``rank_policy="min_norm"``, which takes the minimum-norm
    least-squares solution (columns that coincide on the data share weight).
    """
    sc = _as_scenarios(scenarios)
    pts = _as_scenarios(sample_points)
    _check_m(m)
    if rank_policy not in ("raise", "min_norm"):
        raise ParameterDomainError(f"unknown rank policy {rank_policy!r}")
    design = basis(pts.values)
    p, q = design.shape
    rank = np.linalg.matrix_rank(design)
    if p < q or (rank < q and rank_policy == "raise"):
        cond = np.linalg.cond(design) if p >= q else float("inf")
        raise SingularFitError(f"design matrix with {p} points has rank {rank} < {q} basis functions", cond)
    y = problem.deterministic_terms(pts)
    for j in range(len(pts)):
        y[j] += problem.simulate(pts[j], m, streams.sample_point(j)).payoffs.mean()
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    losses = basis(sc.values) @ coef
    ce = CeRecord("regression", len(sc), m, p, p * m, p * m)
    return LossEstimates(sc.values, losses, "regression", ce, np.full(len(sc), -1))


def path_problem(model, grid: TimeGrid, payoff, weight_kind=None) -> MarkovPathProblem:
    return MarkovPathProblem(model, grid, payoff, weight_kind)


__all__ = [
    "BarrierProblem",
    "CeRecord",
    "InnerSampleSet",
    "LossEstimates",
    "MarkovPathProblem",
    "ReferencePlan",
    "barrier_basis",
    "equidistant_sample_points",
    "estimate_nsr",
    "estimate_regression",
    "estimate_sn",
    "estimate_sr",
    "make_reference_plan",
    "path_problem",
    "polynomial_basis",
]
