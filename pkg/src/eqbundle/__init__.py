"""Equilibrium bundles of parametric ODE systems with first integrals."""

__version__ = "0.1.0"

from .audit import (
    AuditReport,
    CheckResult,
    DimensionVerdict,
    audit_manifold_dimension,
    audit_point,
    check_structural_identity,
)
from .errors import (
    BranchPointError,
    ConvergenceError,
    DegeneracyError,
    EqBundleError,
    EvaluationError,
    ExprDomainError,
    ExprError,
    HolonomyError,
    InputError,
    ResolutionError,
    TrackingError,
    TransportError,
    UnsupportedDimensionError,
)
from .expr import build_system_from_config, eval_ast, parse, to_source
from .finder import (
    EquilibriumPoint,
    FiberTrace,
    enumerate_level_points,
    newton_on_level_set,
    trace_fiber,
)
from .linalg import RankReport, eigen_dense, kernel_basis, numeric_rank, solve_least_squares
from .monodromy import (
    EigenLoopReport,
    SpectrumSplit,
    StabilitySignature,
    eigen_along_fiber_loop,
    split_spectrum,
    stability_signature,
    track_matrix_loop,
)
from .systems import (
    Domain,
    Evaluation,
    PointState,
    SystemSpec,
    builtin,
    check_first_integral_identity,
    evaluate,
)
from .tolerances import DEFAULT_TOLERANCES, Tolerances
from .transport import (
    ConnectionFrame,
    HolonomyReport,
    TransportResult,
    check_cocycle,
    connection_frame,
    holonomy_loop,
    lift_curve,
    metric_g,
    vertical_projector,
)

__all__ = [
    "AuditReport",
    "BranchPointError",
    "CheckResult",
    "ConnectionFrame",
    "ConvergenceError",
    "DEFAULT_TOLERANCES",
    "DegeneracyError",
    "DimensionVerdict",
    "Domain",
    "EigenLoopReport",
    "EqBundleError",
    "EquilibriumPoint",
    "EvaluationError",
    "Evaluation",
    "ExprDomainError",
    "ExprError",
    "FiberTrace",
    "HolonomyError",
    "HolonomyReport",
    "InputError",
    "PointState",
    "RankReport",
    "ResolutionError",
    "SpectrumSplit",
    "StabilitySignature",
    "SystemSpec",
    "Tolerances",
    "TrackingError",
    "TransportError",
    "TransportResult",
    "UnsupportedDimensionError",
    "audit_manifold_dimension",
    "audit_point",
    "build_system_from_config",
    "builtin",
    "check_cocycle",
    "check_first_integral_identity",
    "check_structural_identity",
    "connection_frame",
    "eigen_along_fiber_loop",
    "eigen_dense",
    "enumerate_level_points",
    "eval_ast",
    "evaluate",
    "holonomy_loop",
    "kernel_basis",
    "lift_curve",
    "metric_g",
    "newton_on_level_set",
    "numeric_rank",
    "parse",
    "solve_least_squares",
    "split_spectrum",
    "stability_signature",
    "to_source",
    "trace_fiber",
    "track_matrix_loop",
    "vertical_projector",
]
