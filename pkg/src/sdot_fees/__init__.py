"""Semi-discrete optimal transport with convex storage fees."""

from .errors import (
    BoundaryClampError,
    BracketError,
    ConditioningError,
    ConfigError,
    GeometryError,
    InfeasibleFeeError,
    NewtonError,
    SdotFeesError,
    ShuffleError,
)
from .fees import (
    AssumptionReport,
    ConjugateResult,
    ScalarConvexFn,
    SplittingFee,
    check_assumptions,
    conjugate_solve,
    entropy_fee,
    fee_from_spec,
    fee_to_spec,
    fee_value,
    fstar_hessian,
    indicator_fee,
    log_barrier_fee,
    quadratic_fee,
    restrict_part,
    tabulated_fee,
)
from .geometry import (
    DensityField,
    DomainSpec,
    LaguerreDiagram,
    SiteSet,
    TransportProblem,
    TransportSummary,
    cost_sup_norm,
    laguerre_jacobian,
    laguerre_masses,
    transport_summary,
)
from .oracle import (
    LadderReport,
    StabilityReport,
    brute_force_minimize,
    kantorovich_cost,
    scaling_ladder,
    stability_experiment,
)
from .regularize import (
    RegularizationReport,
    convexify_scalar,
    regularize,
    smooth_scalar,
)
from .solver import (
    IterationRecord,
    SolveTrace,
    SolverConfig,
    damped_newton,
    estimate_kappa,
    parameter_shuffle,
    phi_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryClampError",
    "BracketError",
    "ConditioningError",
    "ConfigError",
    "GeometryError",
    "InfeasibleFeeError",
    "NewtonError",
    "SdotFeesError",
    "ShuffleError",
    "AssumptionReport",
    "ConjugateResult",
    "ScalarConvexFn",
    "SplittingFee",
    "check_assumptions",
    "conjugate_solve",
    "entropy_fee",
    "fee_from_spec",
    "fee_to_spec",
    "fee_value",
    "fstar_hessian",
    "indicator_fee",
    "log_barrier_fee",
    "quadratic_fee",
    "restrict_part",
    "tabulated_fee",
    "DensityField",
    "DomainSpec",
    "LaguerreDiagram",
    "SiteSet",
    "TransportProblem",
    "TransportSummary",
    "cost_sup_norm",
    "laguerre_jacobian",
    "laguerre_masses",
    "transport_summary",
    "LadderReport",
    "StabilityReport",
    "brute_force_minimize",
    "kantorovich_cost",
    "scaling_ladder",
    "stability_experiment",
    "RegularizationReport",
    "convexify_scalar",
    "regularize",
    "smooth_scalar",
    "IterationRecord",
    "SolveTrace",
    "SolverConfig",
    "damped_newton",
    "estimate_kappa",
    "parameter_shuffle",
    "phi_gradient",
]
