"""Matrix-free hybridized DG solver for lambda*u - Laplace(u) = f on Cartesian boxes.

The globally coupled unknowns are face traces; interior unknowns are
eliminated element-wise through fast diagonalization, so one operator
application costs O((p+1)^3) per element at any polynomial degree.
"""

from .basis import Basis1D, build_basis, generalized_eigendecomposition, gll_nodes_weights
from .harness import ExperimentConfig, ResultRow, run_experiment
from .manufactured import exact_solution, rhs_f
from .mesh import (
    DIRICHLET,
    INTERIOR,
    NEUMANN,
    ElementGeometry,
    FluxField,
    Mesh,
    build_mesh,
    gather,
    scatter_add,
)
from .operator import (
    FlopCounter,
    OperatorContext,
    apply_tp3,
    assemble_dense_element,
    assemble_dense_global,
    hdg_op_1d,
    hdg_op_3d,
    hdg_op_3d_transformed,
)
from .preconditioner import (
    BlockPreconditioner,
    DiagonalPreconditioner,
    build_block_preconditioner,
    build_diagonal_preconditioner,
    transformed_preconditioner,
)
from .solver import (
    SolveReport,
    SolverConfig,
    apply_element_inverse,
    build_rhs,
    hybridize_initial_guess,
    make_context,
    pcg,
    solve,
    solve_transformed,
)

__version__ = "0.1.0"
