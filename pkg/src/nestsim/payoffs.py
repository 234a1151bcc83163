"""Portfolio payoffs for the barrier, Asian and GMWB experiments, plus truth oracles.

A payoff object splits the loss at tau into a path-dependent part, whose
conditional expectation is estimated by simulation (and reweighted by the
recycling estimators), and a deterministic part known from the scenario alone:
purchase prices, or the first left-endpoint term of the GMWB liability sum.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from nestsim.errors import ParameterDomainError
from nestsim.models import GbmParams, GmwbParams, InnerPaths, TimeGrid
from nestsim.rng import as_generator, make_rng

CACHE_ENV = "NESTSIM_CACHE_DIR"

# Gauss-Legendre nodes for the smooth inner integrals of the barrier oracle
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


# --------------------------------------------------------------------------- barrier


@dataclass(frozen=True)
class BarrierOption:
    """Down-and-out put monitored on [tau, T]."""

    direction: str
    strike: float
    barrier: float

    def __post_init__(self):
        if self.direction not in ("long", "short"):
            raise ParameterDomainError(f"direction must be 'long' or 'short', got {self.direction!r}")
        if not self.barrier < self.strike:
            raise ParameterDomainError("down-and-out put needs barrier < strike")

    @property
    def sign(self) -> float:
        # losses: a short position loses when the put pays
        return 1.0 if self.direction == "short" else -1.0


@dataclass(frozen=True)
class BarrierPortfolio:
    options: tuple
    r: float
    tau: float
    T: float
    purchase_prices: Optional[tuple] = None

    @property
    def horizon(self) -> float:
        return self.T - self.tau

    @property
    def discount(self) -> float:
        return math.exp(-self.r * self.horizon)

    def with_purchase_prices(self, prices) -> "BarrierPortfolio":
        return replace(self, purchase_prices=tuple(float(p) for p in prices))

    def option_payoffs(self, min_price, final_price) -> np.ndarray:
        """Discounted payoff of each option, shape ``(n_options, m)``."""
        mn = np.asarray(min_price, dtype=float)
        fn = np.asarray(final_price, dtype=float)
        rows = [np.where(mn > o.barrier, np.maximum(o.strike - fn, 0.0), 0.0) for o in self.options]
        return self.discount * np.vstack(rows)

    def path_payoff(self, min_price, final_price) -> np.ndarray:
        signs = np.array([o.sign for o in self.options])
        return signs @ self.option_payoffs(min_price, final_price)

    def deterministic_term(self, x=None) -> float:
        if self.purchase_prices is None:
            return 0.0
        return -float(sum(o.sign * p for o, p in zip(self.options, self.purchase_prices)))


def barrier_payoff(min_price, final_price, portfolio: BarrierPortfolio) -> np.ndarray:
    """Discounted inner payoff (before purchase prices) for each (min, final) pair."""
    return portfolio.path_payoff(min_price, final_price)


def default_barrier_portfolio() -> BarrierPortfolio:
    opts = (
        BarrierOption("long", 101.0, 91.0),
        BarrierOption("long", 110.0, 100.0),
        BarrierOption("short", 114.5, 104.5),
    )
    return BarrierPortfolio(opts, r=0.03, tau=1 / 52, T=1 / 12)


def default_barrier_model() -> GbmParams:
    return GbmParams(f0=100.0, mu=0.08, r=0.03, sigma=0.2)


def simulate_min_final(gbm: GbmParams, x, horizon, m, rng):
    """Exact draws of (running minimum, terminal price) of risk-neutral GBM over ``horizon``.

    The terminal log-return is drawn first; the minimum of the Brownian bridge
    to it is then obtained by inverting its conditional distribution.
    """
    if not x > 0:
        raise ParameterDomainError("scenario value must be positive")
    rng = as_generator(rng)
    z = rng.standard_normal(m)
    u = rng.random(m)
    nu = gbm.r - 0.5 * gbm.sigma**2
    var = gbm.sigma**2 * horizon
    b = nu * horizon + math.sqrt(var) * z
    # 1 - u lies in (0, 1], so the log is finite
    log_min = 0.5 * (b - np.sqrt(b * b - 2.0 * var * np.log1p(-u)))
    return x * np.exp(log_min), x * np.exp(b)


def _no_hit_log_density(y, h, nu, sigma, horizon):
    """Density of log(F_T/x) on {y > h} jointly with the minimum staying above h (h < 0)."""
    s = sigma * math.sqrt(horizon)
    d1 = stats.norm.pdf((y - nu * horizon) / s)
    d2 = math.exp(2.0 * nu * h / sigma**2) * stats.norm.pdf((y - 2.0 * h - nu * horizon) / s)
    return (d1 - d2) / s


def down_out_put_value(gbm: GbmParams, x, option: BarrierOption, horizon) -> np.ndarray:
    """Discounted risk-neutral value of a down-and-out put by reflection-principle quadrature."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    nu = gbm.r - 0.5 * gbm.sigma**2
    alive = x > option.barrier
    for idx in np.flatnonzero(alive):
        xi = x[idx]
        lo = math.log(option.barrier / xi)
        hi = math.log(option.strike / xi)
        half = 0.5 * (hi - lo)
        y = lo + half * (_GL_NODES + 1.0)
        dens = _no_hit_log_density(y, lo, nu, gbm.sigma, horizon)
        out[idx] = half * np.sum(_GL_WEIGHTS * (option.strike - xi * np.exp(y)) * dens)
    return math.exp(-gbm.r * horizon) * out


def barrier_value_curve(gbm: GbmParams, portfolio: BarrierPortfolio, x) -> np.ndarray:
    """Conditional expectation of the discounted path payoff given F_tau = x (exact quadrature)."""
    total = 0.0
    for o in portfolio.options:
        total = total + o.sign * down_out_put_value(gbm, x, o, portfolio.horizon)
    return total


def barrier_loss_curve(gbm: GbmParams, portfolio: BarrierPortfolio, x) -> np.ndarray:
    return barrier_value_curve(gbm, portfolio, x) + portfolio.deterministic_term()


def barrier_purchase_prices(gbm: GbmParams, portfolio: BarrierPortfolio) -> tuple:
    """P_i: option values at tau averaged over risk-neutral scenarios at tau."""
    prices = []
    for o in portfolio.options:
        def value(xs, o=o):
            return down_out_put_value(gbm, xs, o, portfolio.horizon)

        # the value has a kink at the barrier, so integrate in the log coordinate with quad
        s = gbm.sigma * math.sqrt(portfolio.tau)
        mean = math.log(gbm.f0) + (gbm.r - 0.5 * gbm.sigma**2) * portfolio.tau
        zb = (math.log(o.barrier) - mean) / s

        def integrand(z):
            return float(value(math.exp(mean + s * z))[0]) * stats.norm.pdf(z)

        p, _ = integrate.quad(integrand, zb, 10.0, epsabs=1e-12, epsrel=1e-11, limit=200)
        prices.append(p)
    return tuple(prices)


def barrier_true_excess(gbm: GbmParams, portfolio: BarrierPortfolio, c) -> float:
    """E_P[(L(F_tau) - c)^+] with the exact loss curve, by adaptive quadrature over the outer."""
    s = gbm.sigma * math.sqrt(portfolio.tau)
    mean = math.log(gbm.f0) + (gbm.mu - 0.5 * gbm.sigma**2) * portfolio.tau
    bars = sorted((math.log(o.barrier) - mean) / s for o in portfolio.options)

    def integrand(z):
        loss = float(barrier_loss_curve(gbm, portfolio, math.exp(mean + s * z))[0])
        return max(loss - c, 0.0) * stats.norm.pdf(z)

    val, _ = integrate.quad(integrand, -10.0, 10.0, points=bars, epsabs=1e-13, limit=400)
    return val


def barrier_loss_quantile(gbm: GbmParams, portfolio: BarrierPortfolio, alpha, n_grid=20001) -> float:
    """alpha-quantile of L(F_tau) under the real-world outer distribution (fine-grid)."""
    s = gbm.sigma * math.sqrt(portfolio.tau)
    mean = math.log(gbm.f0) + (gbm.mu - 0.5 * gbm.sigma**2) * portfolio.tau
    z = np.linspace(-8.0, 8.0, n_grid)
    loss = barrier_loss_curve(gbm, portfolio, np.exp(mean + s * z))
    w = stats.norm.pdf(z)
    w = w / w.sum()
    order = np.argsort(loss)
    cdf = np.cumsum(w[order])
    return float(loss[order][np.searchsorted(cdf, alpha)])


# --------------------------------------------------------------------------- Asian


@dataclass(frozen=True)
class AsianBasket:
    """Short arithmetic-average calls on independent assets; the loss sums per-asset legs."""

    model: GbmParams
    grid: TimeGrid
    n_assets: int = 5
    position_size: float = 10.0
    strike: float = 100.0
    purchase_price: Optional[float] = None

    @property
    def discount(self) -> float:
        return math.exp(-self.model.r * (self.grid.T - self.grid.tau))

    def leg(self) -> "AsianLeg":
        return AsianLeg(self.position_size, self.strike, self.discount)

    def deterministic_term(self, x=None) -> float:
        return 0.0 if self.purchase_price is None else -float(self.purchase_price)


@dataclass(frozen=True)
class AsianLeg:
    """One asset's share of the basket: ``size * disc * (mean(F_{k+1..K}) - strike)^+``."""

    position_size: float
    strike: float
    discount: float

    def path_payoff(self, paths: InnerPaths) -> np.ndarray:
        avg = paths.values.mean(axis=1)
        return self.position_size * self.discount * np.maximum(avg - self.strike, 0.0)

    def deterministic_term(self, x=None) -> float:
        return 0.0


def asian_payoff(paths, basket: AsianBasket) -> np.ndarray:
    """Discounted basket payoff.

    ``paths`` has shape ``(n_assets, m, steps)`` holding F_{k+1}, ..., F_K per asset.
    """
    paths = np.asarray(paths, dtype=float)
    avg = paths.mean(axis=-1)
    return basket.position_size * basket.discount * np.maximum(avg - basket.strike, 0.0).sum(axis=0)


def default_asian_basket() -> AsianBasket:
    dt = 1 / 624
    return AsianBasket(GbmParams(100.0, 0.08, 0.035, 0.2), TimeGrid(12 * dt, 52 * dt, dt))


def _asian_average_factor(basket: AsianBasket, m, rng):
    """Per-path mean of F_{k+1..K}/F_k: the leg payoff at x is size*disc*(x*A - K)^+."""
    rng = as_generator(rng)
    drift, vol = basket.model.step_log_moments(basket.grid.dt)
    z = rng.standard_normal((m, basket.grid.steps))
    return np.exp(np.cumsum(drift + vol * z, axis=1)).mean(axis=1)


def asian_leg_value_curve(basket: AsianBasket, x, m=2_000_000, seed=0, chunk=250_000):
    """Monte Carlo conditional value of one leg on a grid of x, with common random numbers.

    Returns ``(value, se)`` arrays.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s1 = np.zeros_like(x)
    s2 = np.zeros_like(x)
    done = 0
    c = 0
    scale = basket.position_size * basket.discount
    while done < m:
        size = min(chunk, m - done)
        a = _asian_average_factor(basket, size, make_rng(seed, 7, c))
        pay = scale * np.maximum(np.outer(x, a) - basket.strike, 0.0)
        s1 += pay.sum(axis=1)
        s2 += (pay * pay).sum(axis=1)
        done += size
        c += 1
    mean = s1 / m
    var = np.maximum(s2 / m - mean**2, 0.0)
    return mean, np.sqrt(var / m)


# --------------------------------------------------------------------------- European put


@dataclass(frozen=True)
class EuropeanPut:
    """Discounted put on the last grid value; a smooth bounded payoff for unbiasedness checks."""

    strike: float
    r: float
    horizon: float

    def path_payoff(self, paths: InnerPaths) -> np.ndarray:
        return math.exp(-self.r * self.horizon) * np.maximum(self.strike - paths.values[:, -1], 0.0)

    def deterministic_term(self, x=None) -> float:
        return 0.0


# --------------------------------------------------------------------------- GMWB


@dataclass(frozen=True)
class GmwbContract:
    params: GmwbParams
    tau: float
    dt: float
    T: Optional[float] = None

    def __post_init__(self):
        if self.T is None:
            object.__setattr__(self, "T", self.params.maturity)
        if not self.tau < self.T:
            raise ParameterDomainError("need tau < T")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.tau, self.T, self.dt)

    def _integrand(self, f):
        p = self.params
        return np.where(f <= 0, p.w, -p.m_f * f)

    def deterministic_term(self, x) -> float:
        """The s = tau term of the left-endpoint sum; it depends on F_tau only."""
        return float(self._integrand(np.asarray(x, dtype=float)) * self.dt)

    def path_payoff(self, paths: InnerPaths) -> np.ndarray:
        """Left-endpoint terms at t_{k+1}, ..., t_{K-1}."""
        vals = paths.values[:, :-1]
        disc = np.exp(-self.params.r * self.dt * np.arange(1, vals.shape[1] + 1))
        return (self._integrand(vals) * disc).sum(axis=1) * self.dt


def gmwb_inner_value(path, contract: GmwbContract, x) -> np.ndarray:
    """Discounted insurer liability on [tau, T] for fund paths starting from F_tau = x.

    ``path`` holds F_{k+1}, ..., F_K, shape ``(m, steps)`` or ``(steps,)``.
    """
    values = np.atleast_2d(np.asarray(path, dtype=float))
    inner = InnerPaths(values, values[:, 0])
    return contract.deterministic_term(x) + contract.path_payoff(inner)


def default_gmwb_contract() -> GmwbContract:
    params = GmwbParams(g=1.0, w=0.1, m_f=0.01, r=0.05, mu=0.08, sigma=0.2)
    return GmwbContract(params, tau=5.0, dt=0.05)


# --------------------------------------------------------------------------- oracle


@dataclass(frozen=True)
class OracleResult:
    loss: float
    se: float
    n_paths: int
    partial: bool = False
    details: dict = field(default_factory=dict)


def _cache_path(cache_dir, key: str) -> Optional[Path]:
    root = cache_dir if cache_dir is not None else os.environ.get(CACHE_ENV)
    if not root:
        return None
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    return Path(root) / f"oracle_{digest}.csv"


def _read_cache(path):
    with open(path, newline="") as fh:
        row = next(csv.DictReader(fh))
    return OracleResult(float(row["loss"]), float(row["se"]), int(row["n_paths"]), row["partial"] == "1")


def _write_cache(path, key, res: OracleResult):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["key", "loss", "se", "n_paths", "partial"])
        out.writerow([key, repr(res.loss), repr(res.se), res.n_paths, int(res.partial)])
    os.replace(tmp, path)


def _chunked_mean(draw, budget, chunk):
    s1 = s2 = 0.0
    done = 0
    c = 0
    while done < budget:
        size = min(chunk, budget - done)
        v = draw(size, c)
        s1 += float(v.sum())
        s2 += float((v * v).sum())
        done += size
        c += 1
    mean = s1 / done
    return mean, math.sqrt(max(s2 / done - mean * mean, 0.0) / done), done


def oracle_true_loss(example_id: str, scenario_value, precision_budget=10**7, seed=0,
                     target_se=None, cache_dir=None, chunk=500_000, problem=None) -> OracleResult:
    """High-resolution Monte Carlo loss at one scenario, with its standard error.

    ``scenario_value`` is a scalar for barrier and GMWB and one value per asset
    for the Asian basket.  ``problem`` overrides the default payoff object.  If
    ``target_se`` is given and not reached within ``precision_budget`` paths,
    the result is flagged partial.  Results are cached when a cache directory is
    given or set in ``NESTSIM_CACHE_DIR``.
    """
    budget = int(precision_budget)
    if budget < 2:
        raise ParameterDomainError("precision budget must allow at least two paths")
    key = f"{example_id}|{np.round(np.atleast_1d(scenario_value), 12).tolist()}|{budget}|{seed}|{problem!r}"
    path = _cache_path(cache_dir, key)
    if path is not None and path.exists():
        return _read_cache(path)

    if example_id == "barrier":
        if problem is None:
            gbm, port = default_barrier_model(), default_barrier_portfolio()
            port = port.with_purchase_prices(barrier_purchase_prices(gbm, port))
        else:
            gbm, port = problem
        x = float(scenario_value)

        def draw(size, c):
            mn, fn = simulate_min_final(gbm, x, port.horizon, size, make_rng(seed, 11, c))
            return port.path_payoff(mn, fn)

        mean, se, n = _chunked_mean(draw, budget, chunk)
        loss = mean + port.deterministic_term()
    elif example_id == "asian":
        basket = problem if problem is not None else default_asian_basket()
        xs = np.atleast_1d(np.asarray(scenario_value, dtype=float))
        if xs.size == 1:
            xs = np.repeat(xs, basket.n_assets)
        if xs.size != basket.n_assets:
            raise ParameterDomainError("need one scenario value per asset")
        leg = basket.leg()
        scale = leg.position_size * leg.discount

        def draw(size, c):
            rng = make_rng(seed, 12, c)
            tot = np.zeros(size)
            for xv in xs:
                tot += scale * np.maximum(xv * _asian_average_factor(basket, size, rng) - basket.strike, 0.0)
            return tot

        mean, se, n = _chunked_mean(draw, budget, min(chunk, 100_000))
        loss = mean + basket.deterministic_term()
    elif example_id == "gmwb":
        contract = problem if problem is not None else default_gmwb_contract()
        x = float(scenario_value)

        def draw(size, c):
            paths = contract.params.simulate_inner(x, contract.grid, size, make_rng(seed, 13, c))
            return contract.path_payoff(paths)

        mean, se, n = _chunked_mean(draw, budget, min(chunk, 100_000))
        loss = mean + contract.deterministic_term(x)
    else:
        raise ParameterDomainError(f"unknown example {example_id!r}")

    res = OracleResult(float(loss), float(se), int(n), partial=target_se is not None and se > target_se)
    if path is not None:
        _write_cache(path, key, res)
    return res


def asian_purchase_price(basket: AsianBasket, m=2_000_000, seed=0) -> float:
    """C: basket value at tau averaged over risk-neutral scenarios at tau.

    The leg value curve is computed on a fine grid with common random numbers
    and integrated against the risk-neutral lognormal law of F_tau.
    """
    nodes, weights = special.roots_hermitenorm(80)
    g = basket.model
    x = g.f0 * np.exp((g.r - 0.5 * g.sigma**2) * basket.grid.tau + g.sigma * math.sqrt(basket.grid.tau) * nodes)
    value, _ = asian_leg_value_curve(basket, x, m=m, seed=seed)
    return float(basket.n_assets * np.sum(weights * value) / math.sqrt(2.0 * math.pi))


def linear_interpolator(x_grid: Sequence[float], values: Sequence[float]):
    x_grid = np.asarray(x_grid, dtype=float)
    values = np.asarray(values, dtype=float)

    def f(x):
        return np.interp(np.asarray(x, dtype=float), x_grid, values)

    return f
