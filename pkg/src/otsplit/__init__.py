"""Kinetic-energy transport geodesics between two densities on a grid.

Density and momentum live on a staggered space-time grid; Douglas-Rachford,
primal-dual and centered-grid iterations minimize the discrete action
subject to the continuity equation.
"""

from types import ModuleType as _ModuleType

__version__ = "0.1.0"

from .cost import build_weights, energy, hessian_determinant, telemetry_energy, velocity_field
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DegenerateInputError,
    DimensionError,
    DivergenceError,
    DomainError,
    FeasibilityError,
    NumericalError,
    OTSplitError,
    ParseError,
    SizeError,
    ValidationError,
)
from .grid import (
    BoundaryValues,
    CenteredField,
    GridDims,
    StaggeredField,
    assemble_boundary_target,
    extract_boundary,
    linear_initialization,
    mass_per_slice,
    validate_and_normalize,
    write_boundary,
)
from .operators import (
    divergence,
    divergence_adjoint,
    estimate_op_norm,
    interpolate,
    interpolate_adjoint,
    linear_map,
)
from .prox import (
    CostModel,
    ProxScratch,
    project_constraints,
    project_coupling,
    project_paraboloid,
    prox_J,
    prox_J_conjugate,
    prox_j,
    prox_j_beta,
)
from .solvers import (
    ALGORITHMS,
    CenteredConstraint,
    ConvergenceRecord,
    Problem,
    SolverConfig,
    SolverState,
    admm_dual_step,
    centered_solve,
    dr_step,
    init_state,
    pd_step,
    primal_iterate,
    solve,
)

__all__ = sorted(n for n, v in globals().items() if not n.startswith("_") and not isinstance(v, _ModuleType))
