"""Score pre-computation by implicit log-density Fokker-Planck solves, with
cross-image Krylov recycling of per-timestep subspaces."""

from .bench import BatchSpec, BenchReport, gen_correlated_batch, l2_rel_error, run_benchmark
from .estimators import ScoreEmbedder, ScorePrecomputer
from .exceptions import (
    BreakdownError,
    EmptyBasisError,
    FPKrylovError,
    ImageLoadError,
    SingularMatrixError,
    ValidationError,
)
from .grid import DiffusionParams, GridSpec, LogDensityField, ScoreTensor, flatten_index, init_log_density, make_grid
from .krylov import KrylovBasis, RecycleConfig, harvest_basis, project_and_guess, solve_target
from .pipeline import EmbeddedSequence, SolveMode, embed_scores, precompute_scores, seed_solve, solve_timestep

__version__ = "0.1.0"
