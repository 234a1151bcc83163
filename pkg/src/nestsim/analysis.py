"""Variance formulas for the uniform/normal toy model, and a simulator to check them.

Toy model: X ~ U[-1, 1], Z ~ N(0, 1), g(Z; x) = sqrt(2/pi) exp(-2 (Z - x)^2),
and the recycling weight of target x_i against reference x_1 is
phi(Z + x_i) / phi(Z + x_1).  The constants

    A_l = E[(p g)^l],  B_l = E[g^l],  C = E[p g^2],  D = E[p_i p_j g^2]

enter the variances of the nested and recycled estimators of E[L].  The
integrand in z is always a Gaussian in z, so the z integral is done in closed
form and only the outer integrals over the uniform scenarios are numerical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, stats

from nestsim.errors import ParameterDomainError, QuadratureError
from nestsim.rng import as_generator, make_rng

_LOG_G0 = 0.5 * math.log(2.0 / math.pi)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ToyModelConstants:
    A1: float
    A2: float
    B1: float
    B2: float
    C: float
    D: float
    D_printed: Optional[float] = None

    def __post_init__(self):
        if self.B2 < self.B1**2:
            raise ValueError("B2 < B1^2: negative variance")
        if self.D < 0:
            raise ValueError("D must be non-negative")


def _gaussian_z_integral(target_exps, ref_exp, power, xs_target, x_ref):
    """E_z[ phi ratios * g(z; x_ref)^power ] for z ~ N(0, 1), in closed form.

    The weight is prod_t phi(z + x_t)^{e_t} / phi(z + x_ref)^{ref_exp}; the
    exponents must balance (sum e_t = ref_exp) so the normalisers cancel.
    """
    a = 0.5 + 0.5 * sum(target_exps) - 0.5 * ref_exp + 2.0 * power
    b = -sum(e * x for e, x in zip(target_exps, xs_target)) + ref_exp * x_ref + 4.0 * power * x_ref
    c = (
        -0.5 * sum(e * x * x for e, x in zip(target_exps, xs_target))
        + 0.5 * ref_exp * x_ref * x_ref
        - 2.0 * power * x_ref * x_ref
        + power * _LOG_G0
        - _LOG_SQRT_2PI
    )
    return math.sqrt(math.pi / a) * math.exp(b * b / (4.0 * a) + c)


def _nquad(func, dim, tol):
    val, err = integrate.nquad(func, [(-1.0, 1.0)] * dim, opts={"epsabs": tol, "epsrel": tol, "limit": 200})
    if not err <= 10 * tol:
        raise QuadratureError(f"quadrature error estimate {err:g} above tolerance {tol:g}")
    return val / 2.0**dim


def constant_a(l, tol=1e-8):
    return _nquad(lambda xi, x1: _gaussian_z_integral([l], l, l, [xi], x1), 2, tol)


def constant_b(l):
    """Closed form through Phi."""
    k = math.sqrt(4.0 * l / (4.0 * l + 1.0))
    return (2.0 / math.pi) ** (l / 2) * math.sqrt(math.pi / (2.0 * l)) * (stats.norm.cdf(k) - 0.5)


def constant_c(tol=1e-8):
    return _nquad(lambda xi, x1: _gaussian_z_integral([1], 1, 2, [xi], x1), 2, tol)


def constant_d(tol=1e-6):
    return _nquad(lambda xj, xi, x1: _gaussian_z_integral([1, 1], 2, 2, [xi, xj], x1), 3, tol)


def printed_a_integrand(l, coef):
    """Reduced A_l integrand written with a chosen x_1 x_i coefficient (e.g. 10 l^2 or 5 l^2)."""
    def f(xi, x1):
        q = (3 * l * l + l) * xi * xi + (3 * l - 13 * l * l) * x1 * x1 + coef * x1 * xi
        return (2.0 / math.pi) ** (l / 2) / (4.0 * math.sqrt(4 * l + 1)) * math.exp(-q / (8 * l + 2))

    return f


def printed_d(tol=1e-6):
    """A reduced D integral carrying a completing-the-square slip in its exponent.

    Kept only to quantify the discrepancy: the correct linear z coefficient is
    10 x_1 - x_i - x_j, so this does not equal E[p_i p_j g^2].
    """
    def f(xj, xi, x1):
        e = -4.0 / 9.0 * (xi * xi + xj * xj) - x1 * (xi + xj) + 1.5 * x1 * x1 + xi * xj / 9.0
        return math.exp(e) / (12.0 * math.pi)

    val, err = integrate.nquad(f, [(-1.0, 1.0)] * 3, opts={"epsabs": tol, "epsrel": tol})
    return val


def compute_toy_constants(tol_2d=1e-8, tol_3d=1e-6, with_printed_d=False) -> ToyModelConstants:
    if not (tol_2d > 0 and tol_3d > 0):
        raise ParameterDomainError("tolerances must be positive")
    return ToyModelConstants(
        A1=constant_a(1, tol_2d),
        A2=constant_a(2, tol_2d),
        B1=float(constant_b(1)),
        B2=float(constant_b(2)),
        C=constant_c(tol_2d),
        D=constant_d(tol_3d),
        D_printed=printed_d(tol_3d) if with_printed_d else None,
    )


def var_sn(consts: ToyModelConstants, n, m) -> float:
    _check_nm(n, m)
    return (consts.B2 - consts.B1**2) / (m * n)


def var_sr(consts: ToyModelConstants, n, m) -> float:
    _check_nm(n, m)
    k = consts
    second = k.B2 + (n - 1) * k.A2 + 2 * (n - 1) * k.C + (n * n - 3 * n + 2) * k.D
    return (second - (k.B1 + (n - 1) * k.A1) ** 2) / (m * n * n)


def var_sr_limit(consts: ToyModelConstants, m, d=None) -> float:
    """Large-n limit of var_sr: (D - A_1^2) / m."""
    d = consts.D if d is None else d
    return (d - consts.A1**2) / m


def _check_nm(n, m):
    if n < 1 or m < 1:
        raise ParameterDomainError("n and m must be at least 1")


# --------------------------------------------------------------------------- simulation


def toy_payoff(z, x):
    return math.sqrt(2.0 / math.pi) * np.exp(-2.0 * (z - x) ** 2)


def toy_weight(z, x_target, x_ref):
    """phi(z + x_target) / phi(z + x_ref)."""
    return np.exp(0.5 * (z + x_ref) ** 2 - 0.5 * (z + x_target) ** 2)


def toy_sn_estimate(n, m, rng, resample_outer=True) -> float:
    """One draw of the nested estimator of E[L] on the toy model.

    With ``resample_outer`` (the design the variance formulas describe) every
    inner draw pairs with its own fresh outer value; otherwise scenario i keeps
    one X_i for all m of its inner draws.
    """
    rng = as_generator(rng)
    x = rng.uniform(-1.0, 1.0, (n, m) if resample_outer else (n, 1))
    z = rng.standard_normal((n, m))
    return float(toy_payoff(z, x).mean())


def toy_sr_estimate(n, m, rng, resample_outer=True) -> float:
    """One draw of the recycled estimator; column 0 is the reference scenario."""
    rng = as_generator(rng)
    x = rng.uniform(-1.0, 1.0, (m, n) if resample_outer else (1, n))
    z = rng.standard_normal((m, 1))
    g = toy_payoff(z[:, 0], x[:, 0])
    pbar = toy_weight(z, x, x[:, :1]).mean(axis=1)
    return float((g * pbar).mean())


def toy_variances(n, m, trials, seed, resample_outer=True):
    """Empirical variances of both estimators over ``trials`` runs with shared per-trial streams."""
    sn = np.empty(trials)
    sr = np.empty(trials)
    for t in range(trials):
        sn[t] = toy_sn_estimate(n, m, make_rng(seed, 5, n, m, t), resample_outer)
        sr[t] = toy_sr_estimate(n, m, make_rng(seed, 5, n, m, t), resample_outer)
    return float(np.var(sn, ddof=1)), float(np.var(sr, ddof=1)), sn, sr
