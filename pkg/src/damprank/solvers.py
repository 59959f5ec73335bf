"""Ambient-space reference solvers for the resolvent (Brin-Page) model.

All of them solve ``(I - alpha P) x = (1 - alpha) v`` or sum the damping
series directly, and measure residuals in l1. The dangling fill of ``P``
is handled as the rank-one term ``f d^T`` throughout.
"""

import time
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import ConvergenceWarning, OrderingMismatchError, UsageError
from .graph import PersonalizationVector, spmv
from .kernels import DEFAULT_STEP_CAP, Geometric


@dataclass
class IterationReport:
    iterations: int
    final_residual: float
    converged: bool
    wall_time: float

    def as_dict(self):
        return {"iterations": self.iterations, "final_residual": self.final_residual,
                "converged": self.converged}


def _check_alpha(alpha):
    return Geometric().check(alpha)


def _vec(P, v):
    return PersonalizationVector.coerce(v, P.n).v


def _warn(name, report, tol):
    warnings.warn(
        f"{name} stopped after {report.iterations} iterations with residual "
        f"{report.final_residual:.3e} > tol {tol:.1e}",
        ConvergenceWarning, stacklevel=3,
    )


def resolvent_residual(P, x, v, alpha):
    """``||(1 - alpha) v - (I - alpha P) x||_1``."""
    return float(np.abs((1.0 - alpha) * v - x + alpha * spmv(P, x)).sum())


def power_method(P, v, alpha, tol=1e-12, max_iter=10_000):
    """Iterate ``x <- alpha P x + (1 - alpha) v`` from ``x0 = v``.

    Stops when successive iterates differ by at most ``tol`` in l1; that
    difference is exactly the fixed-point residual of the previous iterate.
    """
    alpha = _check_alpha(alpha)
    v = _vec(P, v)
    t0 = time.perf_counter()
    x = v.copy()
    diff = np.inf
    it = 0
    while it < max_iter:
        x_new = alpha * spmv(P, x) + (1.0 - alpha) * v
        diff = float(np.abs(x_new - x).sum())
        x = x_new
        it += 1
        if diff <= tol:
            break
    report = IterationReport(it, diff, diff <= tol, time.perf_counter() - t0)
    if not report.converged:
        _warn("power_method", report, tol)
    return x, report


@numba.njit(cache=True)
def _gs_sweep(indptr, indices, data, x, b, alpha, fill, dmask, dsum):
    n = x.shape[0]
    for i in range(n):
        s = 0.0
        diag = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j == i:
                diag += data[p]
            else:
                s += data[p] * x[j]
        fi = fill[i]
        if dmask[i]:
            diag += fi
            s += fi * (dsum - x[i])
        else:
            s += fi * dsum
        xi = (b[i] + alpha * s) / (1.0 - alpha * diag)
        if dmask[i]:
            dsum += xi - x[i]
        x[i] = xi


def _gs_arrays(P):
    csr = P.row_mirror()
    return (csr.indptr.astype(np.int64), csr.indices.astype(np.int64), csr.data,
            np.ascontiguousarray(P.fill_vector()), np.ascontiguousarray(P.dangling))


def gauss_seidel(P, v, alpha, tol=1e-12, max_iter=100_000, x0=None):
    """Forward Gauss-Seidel sweeps (natural order) on ``(I - alpha P) x = (1 - alpha) v``.

    Stops once the l1 residual is at most ``tol``. ``x0`` defaults to ``v``.
    """
    alpha = _check_alpha(alpha)
    v = _vec(P, v)
    t0 = time.perf_counter()
    indptr, indices, data, fill, dmask = _gs_arrays(P)
    b = (1.0 - alpha) * v
    x = np.array(v if x0 is None else x0, dtype=np.float64)
    if x.shape != (P.n,):
        raise ValueError("initial guess has the wrong length")
    res = resolvent_residual(P, x, v, alpha)
    it = 0
    while res > tol and it < max_iter:
        _gs_sweep(indptr, indices, data, x, b, alpha, fill, dmask, float(x[dmask].sum()))
        res = resolvent_residual(P, x, v, alpha)
        it += 1
    report = IterationReport(it, res, res <= tol, time.perf_counter() - t0)
    if not report.converged:
        _warn("gauss_seidel", report, tol)
    return x, report


def direct_series(P, v, kernel, rho, eps=1e-12, step_cap=DEFAULT_STEP_CAP):
    """``sum_{k<=K} w_k(rho) P^k v`` by repeated sparse products.

    ``K`` is the smallest index with ``tail_mass(K) <= eps``, so the l1
    error is at most ``eps * ||v||_1`` for (sub)stochastic ``P``.
    """
    v = _vec(P, v)
    rho = kernel.check(rho)
    K = kernel.truncation(rho, eps, step_cap)
    w = kernel.weights(K, rho)
    y = v.copy()
    x = w[0] * y
    for k in range(1, K + 1):
        y = spmv(P, y)
        x += w[k] * y
    return x


@dataclass
class CascadeStep:
    alpha: float
    x: np.ndarray
    report: IterationReport
    cold_x: np.ndarray = None
    cold_report: IterationReport = None


def cascade_sweep(P, v, alphas, tol=1e-12, max_iter=100_000, control=False):
    """Gauss-Seidel over ascending ``alphas``, each warm-started from the last.

    With ``control=True`` every point is also solved cold (from ``v``) so
    iteration counts can be compared.
    """
    alphas = [_check_alpha(a) for a in alphas]
    if not alphas:
        raise UsageError("cascade_sweep needs at least one alpha")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise UsageError("cascade alphas must be strictly ascending")
    v = _vec(P, v)
    steps = []
    x = None
    for a in alphas:
        x, rep = gauss_seidel(P, v, a, tol, max_iter, x0=x)
        step = CascadeStep(a, x.copy(), rep)
        if control:
            step.cold_x, step.cold_report = gauss_seidel(P, v, a, tol, max_iter)
        steps.append(step)
    return steps


@numba.njit(cache=True)
def _block_gs(indptr, indices, data, x, b, alpha, starts, tol_per_node, max_iter):
    # blocks are processed last to first; rows only reference columns in the
    # same or later blocks, which are final by then
    nb = starts.shape[0] - 1
    total = 0
    worst = 0
    ok = True
    for blk in range(nb - 1, -1, -1):
        s = starts[blk]
        e = starts[blk + 1]
        btol = tol_per_node * (e - s)
        it = 0
        while True:
            for i in range(s, e):
                acc = 0.0
                diag = 0.0
                for p in range(indptr[i], indptr[i + 1]):
                    j = indices[p]
                    if j == i:
                        diag += data[p]
                    else:
                        acc += data[p] * x[j]
                x[i] = (b[i] + alpha * acc) / (1.0 - alpha * diag)
            it += 1
            if e - s == 1:
                break
            res = 0.0
            for i in range(s, e):
                acc = 0.0
                for p in range(indptr[i], indptr[i + 1]):
                    acc += data[p] * x[indices[p]]
                res += abs(b[i] - x[i] + alpha * acc)
            if res <= btol:
                break
            if it >= max_iter:
                ok = False
                break
        total += it
        if it > worst:
            worst = it
    return total, worst, ok


def block_solve(P, ordering, v, alpha, tol=1e-12, max_iter=100_000):
    """Block back substitution over the SCC ordering of the same graph.

    Each diagonal block is solved by Gauss-Seidel with the already solved
    later blocks folded into its right side. The dangling fill couples all
    blocks, so it is eliminated as a scalar unknown ``s = d^T x``: with
    ``(I - alpha P0) x_a = (1 - alpha) v`` and ``(I - alpha P0) x_b = alpha f``,
    ``x = x_a + s x_b`` where ``s = d^T x_a / (1 - d^T x_b)``.
    """
    alpha = _check_alpha(alpha)
    if ordering.graph_hash is not None and P.graph_hash is not None \
            and ordering.graph_hash != P.graph_hash:
        raise OrderingMismatchError("block ordering was computed for a different graph")
    if ordering.n != P.n:
        raise OrderingMismatchError(f"ordering covers {ordering.n} nodes, operator has {P.n}")
    v = _vec(P, v)
    t0 = time.perf_counter()
    perm = ordering.perm
    A = P.matrix[perm][:, perm].tocsr()
    A.sort_indices()
    args = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data)
    starts = ordering.block_starts.astype(np.int64)

    has_fill = P.fill is not None and P.dangling_count > 0
    per_node = tol / P.n / (2.0 if has_fill else 1.0)
    xa = np.zeros(P.n)
    ba = (1.0 - alpha) * v[perm]
    its, worst, ok = _block_gs(*args, xa, ba, alpha, starts, per_node, max_iter)
    x_perm = xa
    if has_fill:
        xb = np.zeros(P.n)
        bb = alpha * P.fill[perm]
        its_b, worst_b, ok_b = _block_gs(*args, xb, bb, alpha, starts, per_node, max_iter)
        its += its_b
        ok = ok and ok_b
        d = P.dangling[perm]
        s = xa[d].sum() / (1.0 - xb[d].sum())
        x_perm = xa + s * xb
    x = np.empty(P.n)
    x[perm] = x_perm
    res = resolvent_residual(P, x, v, alpha)
    report = IterationReport(int(its), res, bool(ok) and res <= tol, time.perf_counter() - t0)
    if not report.converged:
        _warn("block_solve", report, tol)
    return x, report
