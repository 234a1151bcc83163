"""Outer-stage risk functionals of estimated losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nestsim.errors import DegenerateTailError, ParameterDomainError

KINDS = ("expected_excess", "large_loss_prob", "present_value", "var", "cte", "mean")


@dataclass(frozen=True)
class RiskMeasureSpec:
    """Which functional to apply; only the fields its kind uses are read."""

    kind: str
    c: float = 0.0
    alpha: float = 0.95
    r: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterDomainError(f"unknown risk measure {self.kind!r}")
        if self.kind in ("var", "cte") and not 0.0 < self.alpha < 1.0:
            raise ParameterDomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not math.isfinite(self.c):
            raise ParameterDomainError("threshold c must be finite")


def value_at_risk(losses, alpha) -> float:
    """The ceil(alpha n)-th order statistic."""
    x = np.sort(np.asarray(losses, dtype=float))
    k = max(1, math.ceil(alpha * x.shape[0] - 1e-12))
    return float(x[k - 1])


def conditional_tail_expectation(losses, alpha) -> float:
    """Mean of the losses strictly above the empirical VaR."""
    x = np.asarray(losses, dtype=float)
    tail = x[x > value_at_risk(x, alpha)]
    if tail.size == 0:
        raise DegenerateTailError(f"no losses strictly above VaR_{alpha}")
    return float(tail.mean())


def apply_risk_measure(spec: RiskMeasureSpec, losses) -> float:
    x = np.asarray(losses, dtype=float)
    if x.size == 0:
        raise ParameterDomainError("need at least one loss")
    if spec.kind == "expected_excess":
        return float(np.maximum(x - spec.c, 0.0).mean())
    if spec.kind == "large_loss_prob":
        return float((x >= spec.c).mean())
    if spec.kind == "present_value":
        return float(math.exp(-spec.r * spec.tau) * x.mean())
    if spec.kind == "mean":
        return float(x.mean())
    if spec.kind == "var":
        return value_at_risk(x, spec.alpha)
    return conditional_tail_expectation(x, spec.alpha)
