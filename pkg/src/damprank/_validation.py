"""Input validation helpers for the estimator API."""

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array

from .graph import EdgeGraph, PersonalizationVector, gen_personalization
from .kernels import DampingKernel, get_kernel, parse_kernel_spec


def check_adjacency(X):
    """Coerce ``X`` to an :class:`EdgeGraph`.

    Accepts an ``EdgeGraph`` or a square (sparse or dense) adjacency matrix
    with ``X[i, j] != 0`` for a link ``i -> j``. Weights are ignored.
    """
    if isinstance(X, EdgeGraph):
        return X
    X = check_array(X, accept_sparse=["csr", "csc", "coo"], dtype=None,
                    ensure_all_finite=True, ensure_min_samples=1)
    if X.shape[0] != X.shape[1]:
        raise ValueError(f"adjacency matrix must be square, got shape {X.shape}")
    coo = sp.coo_matrix(X)
    mask = coo.data != 0
    return EdgeGraph(X.shape[0], coo.row[mask], coo.col[mask])


def check_personalization(v, n, seed=0, mode="nonnegative"):
    """``None`` draws a seeded Gaussian vector; arrays are l1-normalized."""
    if v is None:
        return gen_personalization(n, seed, mode)
    if isinstance(v, PersonalizationVector):
        return PersonalizationVector.coerce(v, n)
    arr = check_array(np.asarray(v, dtype=float).reshape(1, -1), ensure_all_finite=True).ravel()
    if arr.size != n:
        raise ValueError(f"personalization vector has length {arr.size}, expected {n}")
    arr = arr / arr.sum()
    return PersonalizationVector.coerce(arr, n)


def check_kernel(kernel, nu=None):
    if isinstance(kernel, DampingKernel):
        return kernel
    if isinstance(kernel, str) and ":" in kernel:
        return parse_kernel_spec(kernel)[0]
    shape = {} if nu is None else {"nu": nu}
    return get_kernel(kernel, **shape)
