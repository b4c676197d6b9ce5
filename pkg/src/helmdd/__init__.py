"""Two-level overlapping Schwarz solver for indefinite Helmholtz FE systems.

The package builds structured P1 discretizations of the heterogeneous
Helmholtz problem on the unit square, nested two-level overlapping
decompositions, a spectral coarse space from local indefinite generalized
eigenproblems, one- and two-level additive Schwarz preconditioners, and a
weighted-inner-product GMRES, together with a verification harness for the
convergence-theory estimates and a study CLI.
"""

from .assembly import (
    AssembledForms,
    CoefficientField,
    assemble_forms,
    assemble_local_forms,
    assemble_rhs,
    bform,
    coefficient_field,
    norm_1k,
    write_matrix_market,
)
from .decomp import (
    Subdomain,
    TwoLevelDecomposition,
    build_two_level,
    dump_element_sets,
    extend,
    extend_by_layers,
    restrict,
)
from .eigencoarse import (
    CoarseSpace,
    GevpConfig,
    LocalGevp,
    LocalGevpResult,
    ModeSelection,
    assemble_local_gevp,
    build_coarse_space,
    select_modes,
    solve_indefinite_gevp,
    spectrum_rows,
)
from .errors import (
    ConfigError,
    EigensolveError,
    ModeCapError,
    NearResonanceError,
    NoConvergenceError,
    SingularOperatorError,
    SolverError,
)
from .mesh import (
    FeSpace,
    Mesh,
    build_fe_space,
    build_unit_square_mesh,
    triangle_areas,
)
from .schwarz import LocalSolver, ProjectorP, TwoLevelPreconditioner, factorize
from .wgmres import GmresReport, elman_gamma, weighted_gmres

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
