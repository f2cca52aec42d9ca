"""Numerical laboratory for interior-anomaly inverse problems in
cross-diffusive predator-prey models: forward solvers, linearization
cascades, corner-probe asymptotics, and reconstruction pipelines."""

from anomalykit.cascade import (
    DEFAULT_LADDER,
    CascadeError,
    CascadeSolution,
    ConvergenceReport,
    DataFamily,
    finite_difference_check,
    solve_cascade,
    solve_first_order,
    solve_second_order,
)
from anomalykit.config import (
    DEFAULT_CONFIG,
    ConfigError,
    ExperimentConfig,
    RunManifest,
)
from anomalykit.forward import (
    BoundaryCondition,
    ConvergenceError,
    ForwardSolution,
    MeasurementSet,
    ModelParams,
    SolverError,
    StabilityError,
    State,
    extract_measurements,
    field_on_grid,
    initial_state,
    neumann_traces,
    read_measurements_json,
    solve_stationary,
    solve_time_dependent,
    stable_dt,
    step_parabolic,
    total_mass,
    write_measurements_json,
    write_snapshot_csv,
)
from anomalykit.geometry import (
    GeometryError,
    Grid,
    Inclusion,
    IndicatorField,
    TruncatedCorner,
    build_grid,
    corner_from_edges,
    corner_from_polygon,
    octant_corner,
    probe_direction,
    rasterize_inclusion,
    sector_corner,
)
from anomalykit.inversion import (
    ApexTestResult,
    InverseProblem,
    InversionError,
    ReconstructionResult,
    apex_vanishing_test,
    apply_noise,
    discrepancy,
    discrepancy_report,
    grid_residual,
    reconstruct_inclusion,
    recover_boundary_coefficient,
    synthesize_observation,
)
from anomalykit.probes import (
    BoundaryNorms,
    CornerProbeResult,
    DecayFit,
    LaplaceTailResult,
    ProbeError,
    ProbeSpec,
    asymptotic_fit,
    boundary_norm_estimates,
    cgo_field,
    corner_integral,
    laplace_tail_identity,
    radial_integral,
    run_probe,
    weighted_corner_integral,
)
from anomalykit.reactions import (
    PiecewiseReaction,
    ReactionError,
    TaylorReaction,
    check_admissibility,
    jump_magnitude,
)

__all__ = [
    "ApexTestResult",
    "BoundaryCondition",
    "BoundaryNorms",
    "CascadeError",
    "CascadeSolution",
    "ConfigError",
    "ConvergenceError",
    "ConvergenceReport",
    "CornerProbeResult",
    "DEFAULT_CONFIG",
    "DEFAULT_LADDER",
    "DataFamily",
    "DecayFit",
    "ExperimentConfig",
    "ForwardSolution",
    "GeometryError",
    "Grid",
    "Inclusion",
    "IndicatorField",
    "InverseProblem",
    "InversionError",
    "LaplaceTailResult",
    "MeasurementSet",
    "ModelParams",
    "PiecewiseReaction",
    "ProbeError",
    "ProbeSpec",
    "ReactionError",
    "ReconstructionResult",
    "RunManifest",
    "SolverError",
    "StabilityError",
    "State",
    "TaylorReaction",
    "TruncatedCorner",
    "apex_vanishing_test",
    "apply_noise",
    "asymptotic_fit",
    "boundary_norm_estimates",
    "build_grid",
    "cgo_field",
    "check_admissibility",
    "corner_from_edges",
    "corner_from_polygon",
    "corner_integral",
    "discrepancy",
    "discrepancy_report",
    "extract_measurements",
    "field_on_grid",
    "finite_difference_check",
    "grid_residual",
    "initial_state",
    "jump_magnitude",
    "laplace_tail_identity",
    "neumann_traces",
    "octant_corner",
    "probe_direction",
    "radial_integral",
    "rasterize_inclusion",
    "read_measurements_json",
    "reconstruct_inclusion",
    "recover_boundary_coefficient",
    "run_probe",
    "sector_corner",
    "solve_cascade",
    "solve_first_order",
    "solve_second_order",
    "solve_stationary",
    "solve_time_dependent",
    "stable_dt",
    "step_parabolic",
    "synthesize_observation",
    "total_mass",
    "weighted_corner_integral",
    "write_measurements_json",
    "write_snapshot_csv",
]

__version__ = "0.1.0"
