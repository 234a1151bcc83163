"""Stochastic model kernels.

Outer scenarios are drawn under the real-world measure; inner paths are drawn
under the risk-neutral measure starting from an outer scenario.  Every model
also exposes its one-step transition density, which is what the recycling
weights are built from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from nestsim.errors import GridError, ParameterDomainError
from nestsim.rng import as_generator

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class OuterScenario:
    value: float
    regime: Optional[int] = None


@dataclass(frozen=True)
class OuterScenarios:
    """A batch of outer scenarios: values at the risk horizon, plus regimes for RSLN2."""

    values: np.ndarray
    regimes: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(-1))
        if self.regimes is not None:
            regimes = np.asarray(self.regimes, dtype=int).reshape(-1)
            if regimes.shape != self.values.shape:
                raise ValueError("regimes and values must have the same length")
            object.__setattr__(self, "regimes", regimes)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> OuterScenario:
        regime = None if self.regimes is None else int(self.regimes[i])
        return OuterScenario(float(self.values[i]), regime)

    def subset(self, idx) -> "OuterScenarios":
        idx = np.asarray(idx, dtype=int)
        regimes = None if self.regimes is None else self.regimes[idx]
        return OuterScenarios(self.values[idx], regimes)

    @classmethod
    def from_values(cls, values, regimes=None) -> "OuterScenarios":
        return cls(np.asarray(values, dtype=float), regimes)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with the risk horizon at index ``k`` and maturity at ``K``."""

    tau: float
    T: float
    dt: float
    k: int = field(init=False)
    K: int = field(init=False)

    def __post_init__(self):
        if not (self.dt > 0):
            raise GridError(f"dt must be positive, got {self.dt}")
        if not (0 < self.tau < self.T):
            raise GridError(f"need 0 < tau < T, got tau={self.tau}, T={self.T}")
        k = _grid_index(self.tau, self.dt, "tau")
        K = _grid_index(self.T, self.dt, "T")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "K", K)

    @property
    def steps(self) -> int:
        """Number of inner steps, producing F_{k+1}, ..., F_K."""
        return self.K - self.k

    def inner_times(self) -> np.ndarray:
        """Times t_k, ..., t_K."""
        return self.tau + self.dt * np.arange(self.steps + 1)


def _grid_index(t, dt, name):
    q = t / dt
    idx = int(round(q))
    if abs(q - idx) > _GRID_TOL * max(1.0, abs(q)):
        raise GridError(f"{name}={t} is not a multiple of dt={dt}")
    return idx


@dataclass(frozen=True)
class InnerPaths:
    """Inner paths (F_{k+1}, ..., F_K) for one outer scenario.

    ``first_step`` is the raw first-step value used by the recycling weight;
    for GMWB it is taken before absorption at zero.  ``hit_index`` is the first
    grid offset j (relative to k) with F_{k+j} <= 0, or -1 if never hit.
    """

    values: np.ndarray
    first_step: np.ndarray
    regimes: Optional[np.ndarray] = None
    hit_index: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.values.shape[0]


def _lognormal_logpdf(y, log_mean, sd):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ly = np.log(np.where(y > 0, y, 1.0))
        out = -0.5 * ((ly - log_mean) / sd) ** 2 - ly - np.log(sd) - _LOG_SQRT_2PI
    return np.where(y > 0, out, -np.inf)


def _normal_logpdf(y, mean, sd):
    y = np.asarray(y, dtype=float)
    return -0.5 * ((y - mean) / sd) ** 2 - math.log(sd) - _LOG_SQRT_2PI


def _require_positive_sigma(sigma):
    if not sigma > 0:
        raise ParameterDomainError("transition density needs sigma > 0")


@dataclass(frozen=True)
class GbmParams:
    """Geometric Brownian motion with real-world drift ``mu`` and risk-free rate ``r``."""

    f0: float
    mu: float
    r: float
    sigma: float

    def __post_init__(self):
        if not self.f0 > 0:
            raise ParameterDomainError(f"f0 must be positive, got {self.f0}")
        # sigma = 0 is accepted for deterministic limits; densities still need sigma > 0
        if not self.sigma >= 0:
            raise ParameterDomainError(f"sigma must be non-negative, got {self.sigma}")

    def simulate_outer(self, n, tau, rng) -> OuterScenarios:
        rng = as_generator(rng)
        z = rng.standard_normal(n)
        t = tau.tau if isinstance(tau, TimeGrid) else float(tau)
        x = self.f0 * np.exp((self.mu - 0.5 * self.sigma**2) * t + self.sigma * math.sqrt(t) * z)
        return OuterScenarios(x)

    def step_log_moments(self, dt):
        return (self.r - 0.5 * self.sigma**2) * dt, self.sigma * math.sqrt(dt)

    def simulate_inner(self, scenario, grid: TimeGrid, m, rng) -> InnerPaths:
        rng = as_generator(rng)
        x = _state_value(scenario)
        drift, vol = self.step_log_moments(grid.dt)
        z = rng.standard_normal((m, grid.steps))
        paths = x * np.exp(np.cumsum(drift + vol * z, axis=1))
        return InnerPaths(paths, paths[:, 0].copy())

    def log_transition_density(self, from_state, y, dt):
        _require_positive_sigma(self.sigma)
        x = _state_value(from_state)
        drift, vol = self.step_log_moments(dt)
        return _lognormal_logpdf(y, math.log(x) + drift, vol)

    def transition_density(self, from_state, y, dt):
        return np.exp(self.log_transition_density(from_state, y, dt))


@dataclass(frozen=True)
class VasicekParams:
    kappa: float
    theta: float
    sigma: float
    f0: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParameterDomainError(f"kappa must be positive, got {self.kappa}")
        if not self.sigma > 0:
            raise ParameterDomainError(f"sigma must be positive, got {self.sigma}")

    def step_moments(self, x, dt):
        """Conditional mean and standard deviation of the exact one-step transition."""
        e = math.exp(-self.kappa * dt)
        sd = self.sigma * math.sqrt((1.0 - e * e) / (2.0 * self.kappa))
        return e * np.asarray(x, dtype=float) + self.theta * (1.0 - e), sd

    def simulate_outer(self, n, tau, rng) -> OuterScenarios:
        rng = as_generator(rng)
        t = tau.tau if isinstance(tau, TimeGrid) else float(tau)
        mean, sd = self.step_moments(self.f0, t)
        return OuterScenarios(mean + sd * rng.standard_normal(n))

    def simulate_inner(self, scenario, grid: TimeGrid, m, rng) -> InnerPaths:
        rng = as_generator(rng)
        z = rng.standard_normal((m, grid.steps))
        e = math.exp(-self.kappa * grid.dt)
        _, sd = self.step_moments(0.0, grid.dt)
        paths = np.empty((m, grid.steps))
        f = np.full(m, _state_value(scenario))
        for h in range(grid.steps):
            f = e * f + self.theta * (1.0 - e) + sd * z[:, h]
            paths[:, h] = f
        return InnerPaths(paths, paths[:, 0].copy())

    def log_transition_density(self, from_state, y, dt):
        mean, sd = self.step_moments(_state_value(from_state), dt)
        return _normal_logpdf(y, mean, sd)

    def transition_density(self, from_state, y, dt):
        return np.exp(self.log_transition_density(from_state, y, dt))


@dataclass(frozen=True)
class Rsln2Params:
    """Two-state regime-switching lognormal model; regimes are labelled 1 and 2."""

    mu1: float
    sigma1: float
    mu2: float
    sigma2: float
    p12: float
    p21: float
    f0: float = 1.0
    s0: int = 1

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ParameterDomainError("regime volatilities must be positive")
        for p in (self.p12, self.p21):
            if not 0.0 <= p <= 1.0:
                raise ParameterDomainError(f"transition probability {p} outside [0, 1]")
        if self.s0 not in (1, 2):
            raise ParameterDomainError(f"s0 must be 1 or 2, got {self.s0}")
        if not self.f0 > 0:
            raise ParameterDomainError("f0 must be positive")

    @property
    def transition_matrix(self) -> np.ndarray:
        return np.array([[1.0 - self.p12, self.p12], [self.p21, 1.0 - self.p21]])

    def regime_moments(self, regime):
        regime = np.asarray(regime)
        mu = np.where(regime == 1, self.mu1, self.mu2)
        sig = np.where(regime == 1, self.sigma1, self.sigma2)
        return mu, sig

    def _advance(self, f, s, dt, u, z):
        # regime for the coming interval first, then the lognormal increment
        p_switch = np.where(s == 1, self.p12, self.p21)
        s_new = np.where(u < p_switch, 3 - s, s)
        mu, sig = self.regime_moments(s_new)
        return f * np.exp(mu * dt + sig * math.sqrt(dt) * z), s_new

    def simulate_outer(self, n, grid: TimeGrid, rng) -> OuterScenarios:
        if not isinstance(grid, TimeGrid):
            raise GridError("RSLN2 outer simulation needs a TimeGrid")
        rng = as_generator(rng)
        f = np.full(n, float(self.f0))
        s = np.full(n, self.s0, dtype=int)
        for _ in range(grid.k):
            u = rng.random(n)
            z = rng.standard_normal(n)
            f, s = self._advance(f, s, grid.dt, u, z)
        return OuterScenarios(f, s)

    def simulate_inner(self, scenario, grid: TimeGrid, m, rng) -> InnerPaths:
        rng = as_generator(rng)
        if not isinstance(scenario, OuterScenario) or scenario.regime is None:
            raise ParameterDomainError("RSLN2 scenarios must carry a regime")
        u = rng.random((m, grid.steps))
        z = rng.standard_normal((m, grid.steps))
        f = np.full(m, scenario.value)
        s = np.full(m, scenario.regime, dtype=int)
        paths = np.empty((m, grid.steps))
        regimes = np.empty((m, grid.steps), dtype=int)
        for h in range(grid.steps):
            f, s = self._advance(f, s, grid.dt, u[:, h], z[:, h])
            paths[:, h] = f
            regimes[:, h] = s
        return InnerPaths(paths, paths[:, 0].copy(), regimes=regimes)

    def log_transition_density(self, from_state, y, dt, to_regime=None):
        """log q(y, s' | x, s) = log p_{s s'} + log f(y | s', x)."""
        if not isinstance(from_state, OuterScenario) or from_state.regime is None:
            raise ParameterDomainError("RSLN2 transitions need a starting regime")
        if to_regime is None:
            raise ParameterDomainError("RSLN2 transitions need the destination regime")
        to_regime = np.asarray(to_regime)
        p = self.transition_matrix[from_state.regime - 1][to_regime - 1]
        mu, sig = self.regime_moments(to_regime)
        with np.errstate(divide="ignore"):
            lp = np.log(p)
        return lp + _lognormal_logpdf(y, math.log(from_state.value) + mu * dt, sig * math.sqrt(dt))

    def transition_density(self, from_state, y, dt, to_regime=None):
        return np.exp(self.log_transition_density(from_state, y, dt, to_regime))


@dataclass(frozen=True)
class GmwbParams:
    """Variable-annuity fund under a GMWB rider; the fund starts at the deposit ``g``."""

    g: float
    w: float
    m_f: float
    r: float
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.w > 0:
            raise ParameterDomainError(f"withdrawal rate must be positive, got {self.w}")
        if not self.m_f >= 0:
            raise ParameterDomainError(f"fee rate must be non-negative, got {self.m_f}")
        if not self.g > 0:
            raise ParameterDomainError("initial deposit must be positive")
        if not self.sigma >= 0:
            raise ParameterDomainError("sigma must be non-negative")

    @property
    def f0(self) -> float:
        return self.g

    @property
    def maturity(self) -> float:
        return self.g / self.w

    def step_log_moments(self, dt, drift_rate=None):
        rate = self.r if drift_rate is None else drift_rate
        return (rate - self.m_f - 0.5 * self.sigma**2) * dt, self.sigma * math.sqrt(dt)

    def _run(self, f, dt, z, drift_rate):
        """Advance the fund recursion, absorbing at zero; returns paths, raw first step, hit index."""
        m, steps = z.shape
        drift, vol = self.step_log_moments(dt, drift_rate)
        wdt = self.w * dt
        paths = np.empty((m, steps))
        hit = np.where(f <= 0, 0, -1)
        alive = f > 0
        f = np.where(alive, f, 0.0)
        first_raw = None
        for h in range(steps):
            raw = f * np.exp(drift + vol * z[:, h]) - wdt
            if h == 0:
                first_raw = raw.copy()
            newly_dead = alive & (raw <= 0)
            hit = np.where(newly_dead, h + 1, hit)
            alive = alive & ~newly_dead
            f = np.where(alive, raw, 0.0)
            paths[:, h] = f
        return paths, first_raw, hit

    def simulate_outer(self, n, grid: TimeGrid, rng) -> OuterScenarios:
        if not isinstance(grid, TimeGrid):
            raise GridError("GMWB outer simulation needs a TimeGrid")
        rng = as_generator(rng)
        z = rng.standard_normal((n, grid.k))
        paths, _, _ = self._run(np.full(n, float(self.g)), grid.dt, z, self.mu)
        return OuterScenarios(paths[:, -1])

    def simulate_inner(self, scenario, grid: TimeGrid, m, rng) -> InnerPaths:
        rng = as_generator(rng)
        z = rng.standard_normal((m, grid.steps))
        f = np.full(m, _state_value(scenario))
        paths, first_raw, hit = self._run(f, grid.dt, z, self.r)
        return InnerPaths(paths, first_raw, hit_index=hit)

    def log_transition_density(self, from_state, z, dt):
        """Density of the unabsorbed first step z, where (z + w dt) / x is lognormal."""
        _require_positive_sigma(self.sigma)
        x = _state_value(from_state)
        if not x > 0:
            raise ParameterDomainError("GMWB transition density needs a positive fund value")
        drift, vol = self.step_log_moments(dt)
        return _lognormal_logpdf(np.asarray(z, dtype=float) + self.w * dt, math.log(x) + drift, vol)

    def transition_density(self, from_state, z, dt):
        return np.exp(self.log_transition_density(from_state, z, dt))


def _state_value(state) -> float:
    if isinstance(state, OuterScenario):
        return float(state.value)
    return float(state)


def simulate_outer(model, n, horizon, rng) -> OuterScenarios:
    """Draw ``n`` i.i.d. outer scenarios at the risk horizon under the real-world measure.

    ``horizon`` is a :class:`TimeGrid` or, for models with an exact one-shot
    transition (GBM, Vasicek), the risk horizon in years.
    """
    if n < 1:
        raise ParameterDomainError("need at least one outer scenario")
    return model.simulate_outer(int(n), horizon, rng)


def simulate_inner_paths(model, scenario, grid: TimeGrid, m, rng) -> InnerPaths:
    if m < 1:
        raise ParameterDomainError("need at least one inner path")
    if not isinstance(grid, TimeGrid):
        raise GridError("inner simulation needs a TimeGrid")
    return model.simulate_inner(scenario, grid, int(m), rng)


def transition_density(model, from_state, to_value, dt, **kw):
    if not dt > 0:
        raise GridError("dt must be positive")
    return model.transition_density(from_state, to_value, dt, **kw)
