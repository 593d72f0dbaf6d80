"""Numerical laboratory for retrospective mean-field-games problems on prisms."""

from .carleman import (
    BoundaryComplianceError,
    Calibration,
    CarlemanWeight,
    EstimateReport,
    IdentityReport,
    backward_estimate_terms,
    calibrate_constant,
    estimate_reports,
    forward_estimate_terms,
    verify_identity,
    weight_log_value,
)
from .families import cosine_family, random_cosine_series
from .forward import (
    AprioriBounds,
    InteractionSpec,
    KernelSpec,
    MfgProblem,
    SolutionPair,
    check_bounds,
    picard_solve,
    solve_bellman_backward,
    solve_fokker_planck_forward,
    system_residual,
    unit_mass,
)
from .grid import FieldKind, NormKind, PrismDomain, ScalarField, SpaceTimeGrid, build_grid, integrate, norm
from .ops import BoundaryCondition
from .retro import (
    ReconstructionResult,
    RetrospectiveData,
    StabilitySweep,
    WeightedObjective,
    exact_data,
    objective_and_gradient,
    perturb_data,
    reconstruct,
    stability_sweep,
    uniqueness_check,
)

__version__ = "0.1.0"
