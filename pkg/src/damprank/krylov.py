"""Shared invariant Krylov subspace and batch evaluation of damping models.

One Arnoldi run per ``(P, v)`` gives an orthonormal basis ``Q`` with
``Q e1 = v / sigma`` and a small upper Hessenberg ``H`` with
``P Q = Q H + r e_m^T``. Any rank vector ``sum_k w_k P^k v`` is then
``sigma Q sum_k w_k H^k e1``, so every kernel and every damping value is
evaluated on ``m``-vectors and lifted once.

Error control. Truncating the series after ``K`` steps leaves at most
``||v||_1 * tail_mass(K)`` in l1 because ``||P||_1 <= 1``. The Arnoldi
residual ``r`` adds at most ``sigma ||r||_1 max_{j<K} |(H^j e1)_m| sum_k k |w_k|``
(from ``P^k Q e1 - Q H^k e1 = sum_{j<k} P^{k-1-j} r e_m^T H^j e1``).
``tail_bound`` is the sum of both terms.
"""

import json
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .exceptions import DampRankError, DataError, UsageError
from .graph import PersonalizationVector, spmv
from .kernels import DEFAULT_STEP_CAP, Geometric

DEFAULT_TOL = 1e-14
DEFAULT_EPS = 1e-12
DEFAULT_M_MAX = 256
MAGIC = b"DKRYLOV1"


class KrylovBasis:
    """Orthonormal Krylov basis ``Q`` (n x m), Hessenberg ``H`` (m x m) and scale.

    Immutable after construction; the cached powers ``H^k e1`` grow under a
    lock and are only ever appended to, so concurrent readers see identical
    values regardless of request order.
    """

    def __init__(self, Q, H, sigma, tol, residuals, residual_norm1, v_norm1,
                 happy, residual=None, meta=None):
        self.Q = np.asfortranarray(Q, dtype=np.float64)
        self.H = np.ascontiguousarray(H, dtype=np.float64)
        self.sigma = float(sigma)
        self.tol = float(tol)
        self.residuals = [float(r) for r in residuals]
        self.residual_norm1 = float(residual_norm1)
        self.v_norm1 = float(v_norm1)
        self.happy = bool(happy)
        self.residual = residual
        self.meta = dict(meta or {})
        self._powers = np.zeros((1, self.H.shape[0]))
        self._powers[0, 0] = 1.0
        self._lock = threading.Lock()
        self.Q.setflags(write=False)
        self.H.setflags(write=False)

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.Q.shape[1]

    @property
    def breakdown_residual(self):
        """``h_{m+1,m}``: norm of the final Arnoldi residual."""
        return self.residuals[-1] if self.residuals else 0.0

    def __repr__(self):
        return (f"KrylovBasis(n={self.n}, m={self.m}, sigma={self.sigma:.6g}, "
                f"h_last={self.breakdown_residual:.3g}, happy={self.happy})")

    def powers(self, K):
        """Rows ``H^k e1`` for ``k = 0..K`` as a read-only (K+1, m) view."""
        with self._lock:
            have = self._powers.shape[0]
            if K + 1 > have:
                grown = np.empty((max(K + 1, 2 * have), self.m))
                grown[:have] = self._powers
                for k in range(have, grown.shape[0]):
                    grown[k] = self.H @ grown[k - 1]
                grown.setflags(write=False)
                self._powers = grown
            return self._powers[:K + 1]

    def breakdown_term(self, coeff_weights, K):
        """l1 bound on the Arnoldi-residual error of ``sum_k c_k P^k v``."""
        if self.residual_norm1 == 0.0 or K == 0:
            return 0.0
        hk = self.powers(K)
        lead = np.abs(hk[:K, -1]).max()
        moment = np.abs(coeff_weights[1:]) @ np.arange(1, K + 1)
        return self.sigma * self.residual_norm1 * lead * moment

    def arnoldi_defect(self, P):
        """``||P Q - Q H - r e_m^T||_F`` (needs the in-memory residual)."""
        PQ = np.column_stack([spmv(P, self.Q[:, j]) for j in range(self.m)])
        D = PQ - self.Q @ self.H
        if self.residual is not None:
            D[:, -1] -= self.residual
        return float(np.linalg.norm(D))

    def orthogonality_error(self):
        G = self.Q.T @ self.Q
        return float(np.abs(G - np.eye(self.m)).max())


def arnoldi_build(P, v, tol=DEFAULT_TOL, m_max=DEFAULT_M_MAX):
    """Arnoldi with modified Gram-Schmidt plus one full reorthogonalization.

    Stops at the first step ``m`` with ``h_{m+1,m} <= tol`` (basis vectors
    are unit length and ``||P||`` is O(1), so ``tol`` is relative), or when
    ``m`` reaches ``min(m_max, n)``.
    """
    if not tol > 0:
        raise UsageError("Arnoldi tolerance must be positive")
    if m_max < 1:
        raise UsageError("m_max must be at least 1")
    pv = PersonalizationVector.coerce(v, P.n)
    vec = pv.v
    sigma = float(np.linalg.norm(vec))
    if sigma == 0.0:
        raise UsageError("personalization vector is zero")
    m_cap = min(int(m_max), P.n)
    Q = np.zeros((P.n, m_cap), order="F")
    H = np.zeros((m_cap + 1, m_cap))
    Q[:, 0] = vec / sigma
    residuals = []
    happy = False
    m = m_cap
    w = None
    for j in range(m_cap):
        w = spmv(P, Q[:, j])
        for i in range(j + 1):
            h = Q[:, i] @ w
            H[i, j] += h
            w -= h * Q[:, i]
        # second, classical pass restores orthogonality lost to cancellation
        c = Q[:, :j + 1].T @ w
        H[:j + 1, j] += c
        w -= Q[:, :j + 1] @ c
        beta = float(np.linalg.norm(w))
        H[j + 1, j] = beta
        residuals.append(beta)
        if beta <= tol:
            happy = True
            m = j + 1
            break
        if j + 1 < m_cap:
            Q[:, j + 1] = w / beta
    meta = {"graph_hash": P.graph_hash, "v_seed": pv.seed, "v_mode": pv.mode,
            "dangling_mode": P.dangling_mode}
    return KrylovBasis(Q[:, :m], H[:m, :m], sigma, tol, residuals,
                       float(np.abs(w).sum()), float(np.abs(vec).sum()), happy,
                       residual=w, meta=meta)


def krylov_rrqr_diag(P, v, k_max=64, cap=256, memory_budget=2**31):
    """Sorted ``|R_kk|`` of a column-pivoted QR of ``[v, Pv, ..., P^{k_max-1} v]``."""
    if k_max < 1 or k_max > cap:
        raise UsageError(f"k_max must lie in [1, {cap}]")
    if P.n * k_max * 8 > memory_budget:
        raise UsageError(
            f"dense Krylov matrix needs {P.n * k_max * 8} bytes, over the budget of {memory_budget}"
        )
    vec = PersonalizationVector.coerce(v, P.n).v
    K = np.empty((P.n, k_max), order="F")
    K[:, 0] = vec
    for k in range(1, k_max):
        K[:, k] = spmv(P, K[:, k - 1])
    R, _ = scipy.linalg.qr(K, mode="r", pivoting=True)
    return np.sort(np.abs(np.diag(R)))[::-1]


def numerical_dimension(diag, rel=1e-17):
    """Number of diagonal magnitudes above ``rel * |R_11|``."""
    diag = np.asarray(diag)
    if diag.size == 0 or diag[0] == 0:
        return 0
    return int(np.count_nonzero(diag > rel * diag[0]))


@dataclass
class SpectralCoeffs:
    coeffs: np.ndarray
    kernel_id: str
    rho: float
    K_used: int
    tail_bound: float
    derivative: bool = False


def _combine(weights, hk):
    # fixed-order row accumulation, so batch and standalone results agree bitwise
    return (weights[:, None] * hk).sum(axis=0)


def eval_series_coeffs(basis, kernel, rho, eps=DEFAULT_EPS, step_cap=DEFAULT_STEP_CAP):
    """Spectral coefficients of ``sum_{k<=K} w_k(rho) P^k v`` with tail <= eps."""
    rho = kernel.check(rho)
    K = kernel.truncation(rho, eps, step_cap)
    w = kernel.weights(K, rho)
    coeffs = _combine(w, basis.powers(K))
    bound = basis.v_norm1 * kernel.tail_mass(K, rho) + basis.breakdown_term(w, K)
    return SpectralCoeffs(coeffs, kernel.kernel_id, rho, K, bound)


def eval_derivative_coeffs(basis, kernel, rho, eps=DEFAULT_EPS, step_cap=DEFAULT_STEP_CAP):
    """Spectral coefficients of the trajectory ``dx/drho = sum_k w'_k(rho) P^k v``."""
    rho = kernel.check(rho)
    K = kernel.derivative_truncation(rho, eps, step_cap)
    dw = kernel.derivative_weights(K, rho)
    coeffs = _combine(dw, basis.powers(K))
    bound = (basis.v_norm1 * kernel.derivative_tail_bound(K, rho)
             + basis.breakdown_term(dw, K))
    return SpectralCoeffs(coeffs, kernel.kernel_id, rho, K, bound, derivative=True)


def resolvent_coeffs(basis, alpha):
    """Geometric cross-check: ``(1 - alpha) (I - alpha H)^{-1} e1``."""
    alpha = Geometric().check(alpha)
    e1 = np.zeros(basis.m)
    e1[0] = 1.0
    return (1.0 - alpha) * np.linalg.solve(np.eye(basis.m) - alpha * basis.H, e1)


def lift(basis, coeffs):
    """Ambient vector ``sigma Q x_hat``."""
    c = coeffs.coeffs if isinstance(coeffs, SpectralCoeffs) else np.asarray(coeffs, dtype=float)
    if c.shape != (basis.m,):
        raise ValueError(f"dimension mismatch: basis has m={basis.m}, coefficients {c.shape}")
    return basis.sigma * (basis.Q @ c)


@dataclass
class RankJob:
    kernel: object
    rhos: list
    want_derivative: bool = False
    want_ambient_lift: bool = False

    def __post_init__(self):
        self.rhos = [float(r) for r in np.atleast_1d(self.rhos)]
        if not self.rhos:
            raise UsageError("a rank job needs at least one damping value")


@dataclass
class BatchRow:
    kernel_id: str
    rho: float
    coeffs: SpectralCoeffs
    x: np.ndarray = None
    derivative: SpectralCoeffs = None
    xdot: np.ndarray = None

    @property
    def K_used(self):
        return self.coeffs.K_used

    @property
    def tail_bound(self):
        return self.coeffs.tail_bound


@dataclass
class BatchError:
    kernel_id: str
    rho: float
    error: Exception


@dataclass
class BatchResult:
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def get(self, kernel_id, rho):
        for row in self.rows:
            if row.kernel_id == kernel_id and row.rho == rho:
                return row
        raise KeyError((kernel_id, rho))


def batch_rank(basis, jobs, eps=DEFAULT_EPS, threads=1, step_cap=DEFAULT_STEP_CAP):
    """Evaluate every (kernel, rho) pair of ``jobs`` on the shared basis.

    Failures (domain errors, step caps) are recorded per pair and do not
    affect the other pairs. Rows keep job order.
    """
    if not jobs:
        raise UsageError("batch_rank needs at least one job")
    tasks = []
    K_max = 0
    for job in jobs:
        for rho in job.rhos:
            try:
                kernel = job.kernel
                rho = kernel.check(rho)
                K = kernel.truncation(rho, eps, step_cap)
                if job.want_derivative:
                    K = max(K, kernel.derivative_truncation(rho, eps, step_cap))
                K_max = max(K_max, K)
                tasks.append((job, rho, None))
            except DampRankError as exc:
                tasks.append((job, rho, exc))
    basis.powers(K_max)

    def run(task):
        job, rho, err = task
        if err is not None:
            return BatchError(job.kernel.kernel_id, rho, err)
        try:
            c = eval_series_coeffs(basis, job.kernel, rho, eps, step_cap)
            row = BatchRow(job.kernel.kernel_id, rho, c)
            if job.want_derivative:
                row.derivative = eval_derivative_coeffs(basis, job.kernel, rho, eps, step_cap)
            if job.want_ambient_lift:
                row.x = lift(basis, c)
                if row.derivative is not None:
                    row.xdot = lift(basis, row.derivative)
            return row
        except DampRankError as exc:
            return BatchError(job.kernel.kernel_id, rho, exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, tasks))
    else:
        outcomes = [run(t) for t in tasks]
    result = BatchResult()
    for out in outcomes:
        (result.errors if isinstance(out, BatchError) else result.rows).append(out)
    return result


def save_basis(basis, path, extra=None):
    """Write ``path`` (binary, magic ``DKRYLOV1``) and ``path + '.json'``.

    Binary layout, little-endian: magic, n (u64), m (u64), sigma (f64),
    tol (f64), H row-major (m*m f64), Q column-major (n*m f64).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQdd", basis.n, basis.m, basis.sigma, basis.tol))
        fh.write(np.ascontiguousarray(basis.H, dtype="<f8").tobytes(order="C"))
        fh.write(np.asarray(basis.Q, dtype="<f8").tobytes(order="F"))
    sidecar = {
        "schema": 1,
        "n": basis.n,
        "m": basis.m,
        "residuals": basis.residuals,
        "residual_norm1": basis.residual_norm1,
        "v_norm1": basis.v_norm1,
        "happy": basis.happy,
        **basis.meta,
        **(extra or {}),
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_basis(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
        sidecar = json.loads(Path(str(path) + ".json").read_text())
    except OSError as exc:
        raise DataError(f"cannot read basis {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise DataError(f"{path} is not a basis file (bad magic)")
    n, m, sigma, tol = struct.unpack_from("<QQdd", raw, 8)
    off = 8 + 32
    expected = off + 8 * (m * m + n * m)
    if len(raw) != expected:
        raise DataError(f"{path} is truncated or corrupt ({len(raw)} bytes, expected {expected})")
    H = np.frombuffer(raw, dtype="<f8", count=m * m, offset=off).reshape(m, m)
    Q = np.frombuffer(raw, dtype="<f8", count=n * m, offset=off + 8 * m * m).reshape((n, m), order="F")
    meta = {k: sidecar.get(k) for k in ("graph_hash", "v_seed", "v_mode", "dangling_mode")}
    return KrylovBasis(Q.copy(order="F"), H.copy(), sigma, tol, sidecar["residuals"],
                       sidecar["residual_norm1"], sidecar["v_norm1"], sidecar["happy"], meta=meta)
