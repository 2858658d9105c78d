"""Projections onto l_{1,q} mixed-norm balls and first-order solvers built on them."""
from .ballproj import (
    ProjectionResult, RootConfig, RootResult, find_root, project_matrix_mixed_ball, project_mixed_ball,
    prox_schatten,
)
from .core import (
    ConvergenceError, FormatError, GroupedVector, GroupPartition, csr_from_arrays, csr_from_triplets,
    make_grouped, read_matrix_market, read_vector_csv, sparse_matvec, svd, write_matrix_market,
    write_vector_csv,
)
from .norms import (
    NormSpec, dual_exponent, dual_mixed_norm, dual_witness, lq_norm, matrix_mixed_norm, mixed_norm,
    schatten_norm,
)
from .prox import (
    ProxTolerance, project_l1_ball, project_lq_ball, prox_grouped, prox_l1, prox_l2, prox_linf,
    prox_lq,
)
from .solvers import (
    ConstrainedProblem, SgdOptions, SolverReport, SpgOptions, bb_stepsize, sgd_solve, spg_solve,
)

__version__ = "0.1.0"
