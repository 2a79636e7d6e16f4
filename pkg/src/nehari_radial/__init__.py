"""Two-branch constrained minimization for a singular fourth-order radial problem.

The toolkit discretizes radial model geometries (clamped Euclidean ball,
geodesic ball in the unit round sphere), builds the energy of the
fourth-order operator with singular weights, locates the two branches of
the natural constraint set via the fibering map, minimizes each branch to
produce the negative-energy and positive-energy solutions, and verifies
the quantitative side constants: coercivity, Sobolev-constant estimates,
thresholds, bubble-energy expansions, and the geometric gap conditions.
"""

from .errors import (
    ConfigurationError,
    ContractError,
    DomainError,
    NumericalError,
    ProjectionError,
    ResolutionError,
    ShapeError,
    StencilError,
    UnsupportedConditionError,
)
from .geometry import (
    EUCLIDEAN_BALL,
    ROUND_SPHERE,
    ModelGeometry,
    RadialGrid,
    build_grid,
    integrate,
    measure,
    unit_sphere_area,
    volume_element,
)
from .operators import (
    CLAMPED,
    FREE,
    Field,
    bilaplacian,
    derivative,
    gradient_sq,
    h22_inner,
    h22_norm,
    laplacian,
    weighted_lp_norm,
)
from .functional import (
    ConstantsReport,
    ProblemSpec,
    RadialCoefficient,
    constants_report,
    energy,
    estimate_coercivity,
    estimate_companion_constant,
    estimate_sobolev_constant,
    grad_energy,
    nehari_residual,
    nehari_second,
    quad_form,
    thresholds,
)
from .nehari import (
    NMINUS,
    NPLUS,
    NZERO,
    FiberingResult,
    NehariClass,
    SolveReport,
    SolverOptions,
    classify,
    fibering,
    fibering_scalars,
    minimize_branch,
    probe_nzero_band,
    project,
    solve_both,
)
from .testfn import (
    BubbleParams,
    ExpansionReport,
    build_bubble,
    condition_C,
    constants_AB,
    cutoff_eta,
    energy_gap,
    expansion_check,
    integral_I,
    sharp_condition,
    two_term_sup,
)

__version__ = "1.0.0"
