"""Distorted weights: likelihood ratios of a target inner measure to a reference one.

Every closed form is evaluated in log space and exponentiated once.  The
vectorised ``*_log_weight`` functions broadcast target states against samples,
so a column of targets ``(n_t, 1)`` against ``m`` samples yields ``(n_t, m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from nestsim.errors import ParameterDomainError, SupportMismatchError
from nestsim.models import (
    GbmParams,
    GmwbParams,
    OuterScenario,
    Rsln2Params,
    VasicekParams,
)

KINDS = ("gbm", "vasicek", "rsln2", "gmwb", "barrier_joint", "generic_ratio", "empirical")


@dataclass(frozen=True)
class WeightInput:
    """Per-sample quantities a weight needs.

    ``first_step`` holds F_{k+1} (raw, before any absorption).  For the barrier
    weight, ``min_price`` and ``final_price`` hold the running minimum and the
    terminal price on [tau, T].  ``regime`` is the first inner regime for RSLN2.
    """

    first_step: Optional[np.ndarray] = None
    regime: Optional[np.ndarray] = None
    min_price: Optional[np.ndarray] = None
    final_price: Optional[np.ndarray] = None

    def __len__(self):
        for a in (self.first_step, self.min_price):
            if a is not None:
                return len(a)
        return 0


def _col(x):
    return np.asarray(x, dtype=float)[..., None] if np.ndim(x) else float(x)


def _reflexive(x_ref, x_tgt, logw):
    # p_{1|1} is exactly one, whatever rounding the closed form would produce
    same = np.asarray(x_tgt == x_ref)
    if same.any():
        logw = np.where(same, 0.0, logw)
    return logw


def _positive(name, x):
    if np.any(np.asarray(x) <= 0):
        raise ParameterDomainError(f"{name} must be positive")


def gbm_log_weight(x_ref, x_tgt, y, r, sigma, dt):
    """log of A * y**B for one-step lognormal transitions."""
    _positive("scenario values", x_ref)
    _positive("scenario values", x_tgt)
    x_tgt = _col(x_tgt)
    s2 = sigma * sigma * dt
    b = np.log(x_tgt / x_ref) / s2
    log_a = b * (-0.5 * np.log(x_ref * x_tgt) - (r - 0.5 * sigma * sigma) * dt)
    with np.errstate(divide="ignore"):
        ly = np.log(y)
    return _reflexive(x_ref, x_tgt, log_a + b * ly)


def gbm_weight(x_ref, x_tgt, y, r, sigma, dt):
    return np.exp(gbm_log_weight(x_ref, x_tgt, y, r, sigma, dt))


def vasicek_coefficients(x_ref, x_tgt, kappa, theta, sigma, dt):
    """(log A, B) of the weight A * exp(B * y)."""
    e = math.exp(-kappa * dt)
    denom = sigma * sigma * (1.0 - e * e)
    diff = np.asarray(x_tgt, dtype=float) - x_ref
    b = 2.0 * kappa * diff * e / denom
    log_a = -kappa * e * diff * (e * (np.asarray(x_tgt) + x_ref) + 2.0 * theta * (1.0 - e)) / denom
    return log_a, b


def vasicek_log_weight(x_ref, x_tgt, y, kappa, theta, sigma, dt):
    x_tgt = _col(x_tgt)
    log_a, b = vasicek_coefficients(x_ref, x_tgt, kappa, theta, sigma, dt)
    return _reflexive(x_ref, x_tgt, log_a + b * np.asarray(y, dtype=float))


def rsln2_log_weight(params: Rsln2Params, ref: OuterScenario, tgt_values, tgt_regimes, y, s, dt):
    """log of (p_{ms}/p_{ls}) * f_i(y|s)/f_1(y|s); m, l are target and reference regimes."""
    P = params.transition_matrix
    l = ref.regime
    tgt_values = np.atleast_1d(np.asarray(tgt_values, dtype=float))
    tgt_regimes = np.atleast_1d(np.asarray(tgt_regimes, dtype=int))
    for mreg in np.unique(tgt_regimes):
        _check_rsln2_support(params, ref, OuterScenario(1.0, int(mreg)))
    _positive("scenario values", ref.value)
    _positive("scenario values", tgt_values)
    s = np.asarray(s, dtype=int)
    y = np.asarray(y, dtype=float)
    mu, sig = params.regime_moments(s)
    var = sig * sig * dt
    xt = tgt_values[:, None]
    b = np.log(xt / ref.value) / var
    ly = np.log(y)
    log_f = b * (ly - 0.5 * np.log(ref.value * xt) - mu * dt)
    with np.errstate(divide="ignore"):
        log_p = np.log(P[tgt_regimes[:, None] - 1, s - 1]) - np.log(P[l - 1, s - 1])
    same = (xt == ref.value) & (tgt_regimes[:, None] == l)
    return np.where(same, 0.0, log_p + log_f)


def gmwb_log_weight(x_ref, x_tgt, z, r, m_f, sigma, w, dt):
    """Weight for the shifted-lognormal fund step; zero where z + w dt <= 0."""
    x_tgt_arr = np.asarray(x_tgt, dtype=float)
    if x_ref <= 0 and np.all(x_tgt_arr == x_ref):
        # depleted funds recycle only among themselves
        return np.zeros(np.broadcast_shapes(np.shape(_col(x_tgt)), np.shape(z)))
    if x_ref <= 0 or np.any((x_tgt_arr <= 0) & (x_tgt_arr != x_ref)):
        raise SupportMismatchError("GMWB weights need positive fund values; depleted funds are point masses")
    x_tgt = _col(x_tgt)
    shifted = np.asarray(z, dtype=float) + w * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        ls = np.log(np.where(shifted > 0, shifted, np.nan))
        safe_tgt = np.where(np.asarray(x_tgt) > 0, x_tgt, x_ref)
        b = np.log(safe_tgt / x_ref) / (sigma * sigma * dt)
        logw = b * (-0.5 * np.log(x_ref * safe_tgt) - (r - m_f - 0.5 * sigma * sigma) * dt + ls)
    logw = np.where(shifted > 0, logw, -np.inf)
    return _reflexive(x_ref, x_tgt, logw)


def barrier_joint_log_density(z1, z2, x, r, sigma, horizon):
    """Log joint density of (running minimum, terminal price) of GBM started at x.

    Includes the Jacobian of the log-standardised coordinates, so it
    integrates to one over {0 < z1 <= min(x, z2)}.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    s = sigma * math.sqrt(horizon)
    c = (r - 0.5 * sigma * sigma) * math.sqrt(horizon) / sigma
    ok = (z1 > 0) & (z2 > 0) & (z1 <= z2) & (z1 <= x)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.log(np.where(ok, z1, 1.0) / x) / s
        b = np.log(np.where(ok, z2, 1.0) / x) / s
        lin = b - 2.0 * a
        out = (
            math.log(2.0)
            - 0.5 * math.log(2.0 * math.pi)
            - 0.5 * (b - c) ** 2
            + np.log(lin)
            - 2.0 * a * (a - b)
            - np.log(np.where(ok, z1 * z2, 1.0) * s * s)
        )
    return np.where(ok & (lin > 0), out, -np.inf)


def barrier_joint_log_weight(x_ref, x_tgt, z1, z2, r, sigma, horizon):
    """Closed-form likelihood ratio of (min, final) pairs; zero outside the target's support."""
    x_tgt_arr = np.asarray(x_tgt, dtype=float)
    if np.any(x_tgt_arr > x_ref):
        raise SupportMismatchError(
            "target above reference: the target minimum can exceed every reference minimum",
            pair=(float(np.max(x_tgt_arr)), float(x_ref)),
        )
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if np.any(z1 > x_ref) or np.any(z1 > z2):
        raise SupportMismatchError("input outside the reference support of (min, final)")
    x_tgt = _col(x_tgt)
    var = sigma * sigma * horizon
    log_u = np.log(z2) - 2.0 * np.log(z1)
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = np.log(x_ref / x_tgt) * (0.5 * np.log(x_ref * x_tgt) + log_u + (r - 0.5 * sigma * sigma) * horizon) / var
        num = np.log(x_tgt) + log_u
        den = math.log(x_ref) + log_u
        logw = expo + np.log(num) - np.log(den)
    inside = (z1 <= x_tgt) & (num > 0)
    return _reflexive(x_ref, x_tgt, np.where(inside, logw, -np.inf))


def generic_log_weight(model, ref_state, tgt_state, y, dt, **kw):
    """log p_i(y) - log p_1(y) from the model's one-step transition density."""
    lt = np.asarray(model.log_transition_density(tgt_state, y, dt, **kw))
    lr = np.asarray(model.log_transition_density(ref_state, y, dt, **kw))
    if np.any(np.isneginf(lr) & np.isneginf(lt)):
        raise SupportMismatchError("0/0 density ratio: input outside both supports")
    if np.any(np.isneginf(lr) & np.isfinite(lt)):
        raise SupportMismatchError("reference density vanishes where the target's does not")
    if ref_state == tgt_state:
        return np.zeros_like(lt)
    return lt - lr


def generic_ratio_weight(model, ref_state, tgt_state, y, dt, **kw):
    return np.exp(generic_log_weight(model, ref_state, tgt_state, y, dt, **kw))


@dataclass(frozen=True)
class WeightModel:
    """A distorted weight p_{target|ref} for one model and one (ref, target) pair.

    ``horizon`` is the inner step dt, or T - tau for ``barrier_joint``.
    """

    kind: str
    params: object
    ref_state: OuterScenario
    target_state: OuterScenario
    horizon: float

    def __post_init__(self):
        if self.kind not in KINDS or self.kind == "empirical":
            raise ValueError(f"unsupported weight kind {self.kind!r}")
        if self.kind == "barrier_joint" and self.target_state.value > self.ref_state.value:
            raise SupportMismatchError(
                "barrier weight needs target <= reference",
                pair=(self.target_state.value, self.ref_state.value),
            )
        if self.kind == "rsln2":
            _check_rsln2_support(self.params, self.ref_state, self.target_state)

    def log_weight(self, inp: WeightInput) -> np.ndarray:
        return log_weight_matrix(self.kind, self.params, self.ref_state,
                                 _as_batch(self.target_state), inp, self.horizon)[0]

    def __call__(self, inp: WeightInput) -> np.ndarray:
        return np.exp(self.log_weight(inp))


def _check_rsln2_support(params, ref, tgt):
    P = params.transition_matrix
    for s in (1, 2):
        if P[ref.regime - 1, s - 1] == 0.0 and P[tgt.regime - 1, s - 1] > 0.0:
            raise SupportMismatchError(
                f"target regime {tgt.regime} reaches regime {s}; reference regime {ref.regime} cannot",
                pair=(tgt, ref),
            )


def _as_batch(state: OuterScenario):
    from nestsim.models import OuterScenarios

    regimes = None if state.regime is None else [state.regime]
    return OuterScenarios(np.array([state.value]), regimes)


def log_weight_matrix(kind, params, ref_state: OuterScenario, targets, inp: WeightInput, horizon):
    """Log weights of every target against every sample, shape ``(len(targets), m)``."""
    xr = float(ref_state.value)
    xt = targets.values
    if kind == "gbm":
        return gbm_log_weight(xr, xt, inp.first_step, params.r, params.sigma, horizon)
    if kind == "vasicek":
        return vasicek_log_weight(xr, xt, inp.first_step, params.kappa, params.theta, params.sigma, horizon)
    if kind == "rsln2":
        return rsln2_log_weight(params, ref_state, xt, targets.regimes, inp.first_step, inp.regime, horizon)
    if kind == "gmwb":
        return gmwb_log_weight(xr, xt, inp.first_step, params.r, params.m_f, params.sigma, params.w, horizon)
    if kind == "barrier_joint":
        return barrier_joint_log_weight(xr, xt, inp.min_price, inp.final_price, params.r, params.sigma, horizon)
    if kind == "generic_ratio":
        rows = []
        for i in range(len(targets)):
            kw = {} if inp.regime is None else {"to_regime": inp.regime}
            rows.append(generic_log_weight(params, ref_state, targets[i], inp.first_step, horizon, **kw))
        return np.vstack(rows) if rows else np.empty((0, len(inp)))
    raise ValueError(f"unsupported weight kind {kind!r}")


def weight_matrix(kind, params, ref_state, targets, inp, horizon):
    return np.exp(log_weight_matrix(kind, params, ref_state, targets, inp, horizon))


def kind_for(params) -> str:
    """Closed-form weight kind matching a model's parameter type."""
    if isinstance(params, GbmParams):
        return "gbm"
    if isinstance(params, VasicekParams):
        return "vasicek"
    if isinstance(params, Rsln2Params):
        return "rsln2"
    if isinstance(params, GmwbParams):
        return "gmwb"
    raise ValueError(f"no closed-form weight for {type(params).__name__}")
