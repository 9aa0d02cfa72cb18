"""Minmax (generating-family saddle value) solutions of 1-D Hamilton-Jacobi
equations, iterated over time subdivisions, with independent viscosity-solution
oracles for validation."""

from hjminmax.expressions import (
    Expression,
    ParseError,
    eval_plain,
    eval_with_grad,
    parse,
    to_source,
)
from hjminmax.family import (
    CertificationError,
    CriticalPoint,
    FiberBox,
    OneStepFamily,
    PiecewiseFunction,
    critical_points,
    critical_points_batch,
    eval_S,
    fiber_box,
    wavefront,
)
from hjminmax.flow import (
    FlowConfig,
    HamiltonianModel,
    PhasePoint,
    alpha_inverse,
    check_cH_bound,
    flow,
    flow_batch,
    flow_with_action,
    flow_with_action_batch,
    generating_function_phi,
    phi_batch,
    sample_bounds,
    verify_phi_derivatives,
)
from hjminmax.oracles import (
    ComparisonReport,
    FDConfig,
    compare,
    fd_viscosity,
    lax_oleinik_min,
)
from hjminmax.scheme import (
    SolutionField,
    StepResult,
    StudyRow,
    SubdivisionSchedule,
    convergence_study,
    iterate,
    lipschitz_report,
    make_field,
    momentum_window,
    resample_step,
    sample_at_time,
    semigroup_defect,
    step_operator,
    study_violations,
)
from hjminmax.selector import (
    FiberGrid,
    MinmaxResult,
    StepGeometry,
    bottleneck_on_grid,
    build_fiber_grid,
    exhaustive_bottleneck,
    grid_modulus,
    min_select,
    minmax,
    prepare_geometry,
    stability_gap,
)

__all__ = [
    "Expression",
    "ParseError",
    "parse",
    "to_source",
    "eval_plain",
    "eval_with_grad",
    "HamiltonianModel",
    "PhasePoint",
    "FlowConfig",
    "CertificationError",
    "flow",
    "flow_batch",
    "flow_with_action",
    "flow_with_action_batch",
    "alpha_inverse",
    "generating_function_phi",
    "phi_batch",
    "verify_phi_derivatives",
    "check_cH_bound",
    "sample_bounds",
    "PiecewiseFunction",
    "OneStepFamily",
    "CriticalPoint",
    "FiberBox",
    "eval_S",
    "critical_points",
    "critical_points_batch",
    "wavefront",
    "fiber_box",
    "FiberGrid",
    "StepGeometry",
    "MinmaxResult",
    "prepare_geometry",
    "build_fiber_grid",
    "minmax",
    "min_select",
    "bottleneck_on_grid",
    "exhaustive_bottleneck",
    "grid_modulus",
    "stability_gap",
    "SubdivisionSchedule",
    "SolutionField",
    "StepResult",
    "StudyRow",
    "step_operator",
    "resample_step",
    "iterate",
    "semigroup_defect",
    "lipschitz_report",
    "convergence_study",
    "study_violations",
    "momentum_window",
    "make_field",
    "sample_at_time",
    "FDConfig",
    "ComparisonReport",
    "fd_viscosity",
    "lax_oleinik_min",
    "compare",
]
