"""Nested Monte Carlo risk estimation with sample recycling."""

from nestsim.empirical import EmpiricalRatio, build_empirical_ratio, evaluate_empirical_ratio
from nestsim.engine import (
    BarrierProblem,
    CeRecord,
    InnerSampleSet,
    LossEstimates,
    MarkovPathProblem,
    ReferencePlan,
    barrier_basis,
    estimate_nsr,
    estimate_regression,
    estimate_sn,
    estimate_sr,
    make_reference_plan,
    path_problem,
    polynomial_basis,
)
from nestsim.errors import (
    ConfigError,
    DegenerateTailError,
    EmptyReferenceBinError,
    GridError,
    ParameterDomainError,
    QuadratureError,
    SingularFitError,
    SupportMismatchError,
    TooManyBlocksError,
)
from nestsim.models import (
    GbmParams,
    GmwbParams,
    OuterScenario,
    OuterScenarios,
    Rsln2Params,
    TimeGrid,
    VasicekParams,
    simulate_inner_paths,
    simulate_outer,
    transition_density,
)
from nestsim.riskmeasures import RiskMeasureSpec, apply_risk_measure
from nestsim.rng import Streams, make_rng
from nestsim.weights import WeightInput, WeightModel

__version__ = "0.1.0"

__all__ = [
    "EmpiricalRatio",
    "build_empirical_ratio",
    "evaluate_empirical_ratio",
    "BarrierProblem",
    "CeRecord",
    "InnerSampleSet",
    "LossEstimates",
    "MarkovPathProblem",
    "ReferencePlan",
    "barrier_basis",
    "estimate_nsr",
    "estimate_regression",
    "estimate_sn",
    "estimate_sr",
    "make_reference_plan",
    "path_problem",
    "polynomial_basis",
    "ConfigError",
    "DegenerateTailError",
    "EmptyReferenceBinError",
    "GridError",
    "ParameterDomainError",
    "QuadratureError",
    "SingularFitError",
    "SupportMismatchError",
    "TooManyBlocksError",
    "GbmParams",
    "GmwbParams",
    "OuterScenario",
    "OuterScenarios",
    "Rsln2Params",
    "TimeGrid",
    "VasicekParams",
    "simulate_inner_paths",
    "simulate_outer",
    "transition_density",
    "RiskMeasureSpec",
    "apply_risk_measure",
    "Streams",
    "make_rng",
    "WeightInput",
    "WeightModel",
]
