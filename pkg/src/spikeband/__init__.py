"""Recursive SPIKE solver for banded linear systems."""

from .band import (BandedMatrix, DegenerateResidualError, MatrixFormatError, OracleFactors,
                   SingularMatrixError, band_matmul, degree_of_diagonal_dominance,
                   generate_banded, oracle_solve, read_matrix, relative_residual, write_matrix)
from .factor import ReducedLevels, SpikeFactorization, factorize, reduce_factorize
from .kernels import LUFactors, SweepCounter, ULFactors, lu_factor, solve_factored, ul_factor
from .partition import (DEFAULT_K, Kind, PartitionPlan, calibrate_k, compute_ratios,
                        compute_sizes, distribute_threads, make_plan)
from .solve import (RefineResult, SolveStats, iterative_refine, reduced_solve,
                    reduced_solve_transpose, solve, transpose_solve)

__version__ = "0.1.0"

__all__ = [
    "BandedMatrix", "DegenerateResidualError", "MatrixFormatError", "OracleFactors",
    "SingularMatrixError", "band_matmul", "degree_of_diagonal_dominance", "generate_banded",
    "oracle_solve", "read_matrix", "relative_residual", "write_matrix",
    "ReducedLevels", "SpikeFactorization", "factorize", "reduce_factorize",
    "LUFactors", "SweepCounter", "ULFactors", "lu_factor", "solve_factored", "ul_factor",
    "DEFAULT_K", "Kind", "PartitionPlan", "calibrate_k", "compute_ratios", "compute_sizes",
    "distribute_threads", "make_plan",
    "RefineResult", "SolveStats", "iterative_refine", "reduced_solve",
    "reduced_solve_transpose", "solve", "transpose_solve",
]
