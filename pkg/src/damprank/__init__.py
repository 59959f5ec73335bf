"""Batch damped personalized PageRank on a shared Krylov subspace."""

__version__ = "0.1.0"

from .exceptions import (ConvergenceError, ConvergenceWarning, DampRankError, DanglingNodeError,
                         DataError, DomainError, GraphFormatError, NumericalError,
                         OrderingMismatchError, StepCapError, UsageError)
from .graph import (BlockOrdering, ColumnStochastic, EdgeGraph, PersonalizationVector,
                    build_operator, gen_personalization, parse_edge_list, scc_blocks)
from .kernels import (ConwayMaxwellPoisson, Geometric, Logarithmic, Poisson,
                      correspondence_solve, get_kernel, parse_kernel_spec)
from .krylov import (KrylovBasis, RankJob, arnoldi_build, batch_rank, eval_derivative_coeffs,
                     eval_series_coeffs, lift, load_basis, save_basis)
from .solvers import block_solve, cascade_sweep, direct_series, gauss_seidel, power_method
from .analysis import correspondence_compare, histogram, kl_divergence, kl_sweep
from .estimators import KrylovPageRank, PageRank
