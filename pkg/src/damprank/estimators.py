"""scikit-learn style estimators.

``KrylovPageRank`` pays for the Krylov basis once in :meth:`fit` and then
answers any number of damping values in :meth:`predict`; ``PageRank`` runs
one of the ambient reference solvers for a single damping value. Both
support ``get_params``/``set_params``/``clone``.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_adjacency, check_kernel, check_personalization
from .exceptions import UsageError
from .graph import build_operator, scc_blocks
from .kernels import Geometric
from .krylov import arnoldi_build, eval_derivative_coeffs, eval_series_coeffs, lift
from .solvers import block_solve, direct_series, gauss_seidel, power_method


class KrylovPageRank(BaseEstimator):
    """Damped personalized PageRank from a shared Krylov subspace.

    Parameters
    ----------
    kernel : str or DampingKernel, default="geometric"
        Damping family name, CLI spec string or kernel instance.
    rho : float, default=0.85
        Damping value used for ``scores_``.
    nu : float, optional
        Decay parameter for the ``cmp`` family.
    personalization : array-like of shape (n_nodes,), optional
        Restart distribution; drawn from ``seed`` when omitted.
    seed : int, default=0
    v_mode : {"nonnegative", "signed"}, default="nonnegative"
    dangling : {"patch_v", "uniform", "leave", "error"}, default="patch_v"
    tol : float, default=1e-14
        Arnoldi breakdown tolerance.
    eps : float, default=1e-12
        l1 truncation tolerance of the damping series.
    m_max : int, default=256

    Attributes
    ----------
    graph_ : EdgeGraph
    operator_ : ColumnStochastic
    personalization_ : PersonalizationVector
    basis_ : KrylovBasis
    scores_ : ndarray of shape (n_nodes,)
    n_nodes_ : int
    """

    def __init__(self, kernel="geometric", rho=0.85, nu=None, personalization=None, seed=0,
                 v_mode="nonnegative", dangling="patch_v", tol=1e-14, eps=1e-12, m_max=256):
        self.kernel = kernel
        self.rho = rho
        self.nu = nu
        self.personalization = personalization
        self.seed = seed
        self.v_mode = v_mode
        self.dangling = dangling
        self.tol = tol
        self.eps = eps
        self.m_max = m_max

    def fit(self, X, y=None):
        """Build the operator and Krylov basis for adjacency ``X`` (rows link out)."""
        self.graph_ = check_adjacency(X)
        self.n_nodes_ = self.graph_.n
        self.kernel_ = check_kernel(self.kernel, self.nu)
        self.personalization_ = check_personalization(
            self.personalization, self.n_nodes_, self.seed, self.v_mode)
        self.operator_ = build_operator(self.graph_, self.dangling, self.personalization_)
        self.basis_ = arnoldi_build(self.operator_, self.personalization_, self.tol, self.m_max)
        self.scores_ = self._evaluate(self.rho)
        return self

    def _evaluate(self, rho):
        return lift(self.basis_, eval_series_coeffs(self.basis_, self.kernel_, rho, self.eps))

    def predict(self, rhos):
        """Rank vectors for each damping value; shape ``(len(rhos), n_nodes)``."""
        check_is_fitted(self, "basis_")
        rhos = np.atleast_1d(np.asarray(rhos, dtype=float)).ravel()
        return np.vstack([self._evaluate(r) for r in rhos])

    def trajectory(self, rhos):
        """``dx/drho`` at each damping value; shape ``(len(rhos), n_nodes)``."""
        check_is_fitted(self, "basis_")
        rhos = np.atleast_1d(np.asarray(rhos, dtype=float)).ravel()
        return np.vstack([
            lift(self.basis_, eval_derivative_coeffs(self.basis_, self.kernel_, r, self.eps))
            for r in rhos
        ])


class PageRank(BaseEstimator):
    """Brin-Page PageRank by an ambient-space solver.

    ``solver`` is one of ``"gauss_seidel"``, ``"power"``, ``"block"`` (SCC
    back substitution) or ``"series"`` (truncated Neumann series).
    """

    _solvers = ("gauss_seidel", "power", "block", "series")

    def __init__(self, alpha=0.85, solver="gauss_seidel", personalization=None, seed=0,
                 dangling="patch_v", tol=1e-12, max_iter=100_000):
        self.alpha = alpha
        self.solver = solver
        self.personalization = personalization
        self.seed = seed
        self.dangling = dangling
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        if self.solver not in self._solvers:
            raise UsageError(f"solver must be one of {self._solvers}")
        g = check_adjacency(X)
        pv = check_personalization(self.personalization, g.n, self.seed)
        P = build_operator(g, self.dangling, pv)
        self.report_ = None
        if self.solver == "gauss_seidel":
            x, self.report_ = gauss_seidel(P, pv, self.alpha, self.tol, self.max_iter)
        elif self.solver == "power":
            x, self.report_ = power_method(P, pv, self.alpha, self.tol, self.max_iter)
        elif self.solver == "block":
            x, self.report_ = block_solve(P, scc_blocks(g), pv, self.alpha, self.tol, self.max_iter)
        else:
            x = direct_series(P, pv, Geometric(), self.alpha, self.tol)
        self.scores_ = x
        self.n_nodes_ = g.n
        return self
