"""Weighted low-rank matrix approximation.

Solvers for the rank-constrained and nuclear-norm-penalized weighted
approximation problems: proximal gradient descent with Nesterov or
(stabilized, guarded) Anderson acceleration, and SVD-free alternating least
squares with a sparse + low-rank representation for high-dimensional,
sparsely weighted data.
"""

from .accel import (
    AndersonConfig,
    AndersonState,
    anderson_step,
    nesterov_extrapolate,
    solve_alpha,
    solve_alpha_regularized,
)
from .als import (
    DegenerateFactorError,
    FactorStack,
    SparseResidual,
    als_accelerated_step,
    als_step,
    als_step_dense,
    als_step_sparse,
    factorized_loss,
    solution_rank,
    sparse_residual,
    unweighted_als,
)
from .bench import BenchConfig, parse_config, run_experiment
from .core import (
    DenseIterate,
    FactorPair,
    NuclearNorm,
    RankConstrained,
    WeightedProblem,
    matrix_rank,
    nuclear_norm,
    soft_threshold,
    svd_truncate,
    weighted_gradient,
    weighted_loss,
)
from .data import (
    SimulationSpec,
    TripletDataset,
    load_dense_matrix,
    load_movielens,
    load_triplets,
    save_dense_matrix,
    simulate,
)
from .prox import (
    ConvergenceTrace,
    DivergenceError,
    SolverConfig,
    TraceRecord,
    prox_step,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "AndersonConfig",
    "AndersonState",
    "BenchConfig",
    "ConvergenceTrace",
    "DegenerateFactorError",
    "DenseIterate",
    "DivergenceError",
    "FactorPair",
    "FactorStack",
    "NuclearNorm",
    "RankConstrained",
    "SimulationSpec",
    "SolverConfig",
    "SparseResidual",
    "TraceRecord",
    "TripletDataset",
    "WeightedProblem",
    "als_accelerated_step",
    "als_step",
    "als_step_dense",
    "als_step_sparse",
    "anderson_step",
    "factorized_loss",
    "load_dense_matrix",
    "load_movielens",
    "load_triplets",
    "matrix_rank",
    "nesterov_extrapolate",
    "nuclear_norm",
    "parse_config",
    "prox_step",
    "run",
    "run_experiment",
    "save_dense_matrix",
    "simulate",
    "soft_threshold",
    "solution_rank",
    "solve_alpha",
    "solve_alpha_regularized",
    "sparse_residual",
    "svd_truncate",
    "unweighted_als",
    "weighted_gradient",
    "weighted_loss",
]
