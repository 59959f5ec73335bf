"""Variation analysis: KL divergence, its trajectory derivative, sweeps,
inter-model correspondence and histograms of ``n * x``."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._io import write_csv
from .exceptions import UsageError
from .kernels import (DEFAULT_STEP_CAP, Geometric, correspondence_solve, get_kernel,
                      parse_kernel_spec)
from .krylov import DEFAULT_EPS, eval_derivative_coeffs, eval_series_coeffs, lift

KL_FLOOR = 1e-300
# lifted vectors can carry roundoff-level negatives on nodes of ~zero mass
NEG_TOL = 1e-13
DEFAULT_FD_STEPS = (0.002, 0.008)


def _as_distribution(x, name):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < -NEG_TOL):
        raise UsageError(
            f"{name} has negative entries (min {x.min():.3e}); KL analysis needs a "
            "nonnegative personalization vector"
        )
    if abs(x.sum() - 1.0) > 1e-8:
        raise UsageError(f"{name} must sum to 1 within 1e-8 (got {x.sum()!r})")
    return np.maximum(x, 0.0)


def kl_divergence(x, x_o):
    """``sum_i x_i ln(x_i / x_o_i)`` in nats.

    Entries below ``1e-300`` are clamped to that floor. If ``x_o`` has a
    true zero where ``x`` exceeds the floor the divergence is ``inf``.
    """
    x = _as_distribution(x, "x")
    x_o = _as_distribution(x_o, "x_o")
    if x.shape != x_o.shape:
        raise ValueError("distributions have different lengths")
    if np.any((x_o == 0.0) & (x > KL_FLOOR)):
        return math.inf
    xc = np.maximum(x, KL_FLOOR)
    xoc = np.maximum(x_o, KL_FLOOR)
    return float(np.sum(x * (np.log(xc) - np.log(xoc))))


def kl_derivative_analytic(xdot, x, x_o):
    """``d/drho KL(x(rho), x_o) = xdot^T (ln x - ln x_o + 1)``."""
    x = _as_distribution(x, "x")
    x_o = _as_distribution(x_o, "x_o")
    xdot = np.asarray(xdot, dtype=np.float64)
    if np.any((x_o == 0.0) & (x > KL_FLOOR)):
        return math.inf
    xc = np.maximum(x, KL_FLOOR)
    xoc = np.maximum(x_o, KL_FLOOR)
    return float(xdot @ (np.log(xc) - np.log(xoc) + 1.0))


@dataclass
class KLRecord:
    rho: float
    kl: float
    dkl_analytic: float
    dkl_empirical: dict = field(default_factory=dict)

    @property
    def step_sizes(self):
        return list(self.dkl_empirical)


def kl_sweep(basis, kernel, rhos, rho_o, fd_steps=DEFAULT_FD_STEPS, eps=DEFAULT_EPS,
             threads=1, step_cap=DEFAULT_STEP_CAP):
    """KL of ``x(rho)`` from ``x(rho_o)`` over ``rhos``, with analytic and
    central-difference derivatives. Finite differences leaving the kernel
    domain are reported as ``nan``."""
    rho_o = kernel.check(rho_o)
    rhos = [kernel.check(r) for r in rhos]
    x_o = lift(basis, eval_series_coeffs(basis, kernel, rho_o, eps, step_cap))
    lo, hi = kernel.domain

    def x_at(r):
        return lift(basis, eval_series_coeffs(basis, kernel, r, eps, step_cap))

    def one(rho):
        x = x_at(rho)
        xdot = lift(basis, eval_derivative_coeffs(basis, kernel, rho, eps, step_cap))
        rec = KLRecord(rho, kl_divergence(x, x_o), kl_derivative_analytic(xdot, x, x_o))
        for h in fd_steps:
            if rho - h <= lo or rho + h >= hi:
                rec.dkl_empirical[h] = math.nan
                continue
            up = kl_divergence(x_at(rho + h), x_o)
            down = kl_divergence(x_at(rho - h), x_o)
            rec.dkl_empirical[h] = (up - down) / (2.0 * h)
        return rec

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, rhos))
    return [one(r) for r in rhos]


def write_kl_csv(path, kernel, records, rho_o, fd_steps=DEFAULT_FD_STEPS):
    header = ["kernel", "rho", "rho_o", "kl_nats", "dkl_analytic"]
    header += [f"dkl_fd_{h!r}" for h in fd_steps]
    rows = ([kernel.kernel_id, r.rho, rho_o, r.kl, r.dkl_analytic]
            + [r.dkl_empirical.get(h, math.nan) for h in fd_steps] for r in records)
    return write_csv(path, header, rows)


@dataclass
class HistogramSpec:
    bin_edges: np.ndarray
    counts: np.ndarray
    underflow: int = 0
    overflow: int = 0

    @property
    def total(self):
        return int(self.counts.sum()) + self.underflow + self.overflow

    def rows(self):
        e = self.bin_edges.tolist()
        yield (-math.inf, e[0], self.underflow)
        for j, c in enumerate(self.counts.tolist()):
            yield (e[j], e[j + 1], c)
        yield (e[-1], math.inf, self.overflow)

    def write_csv(self, path):
        return write_csv(path, ["bin_left", "bin_right", "count"], self.rows())


def default_edges(xs, bins=100, percentile=99.9):
    """Uniform edges over ``[0, p]`` with ``p`` the percentile of ``n * x``
    pooled over the vectors ``xs``."""
    tops = []
    for x in xs:
        x = np.asarray(x, dtype=float)
        tops.append(np.percentile(x.size * x, percentile))
    top = max(tops) if tops else 1.0
    if not top > 0:
        top = 1.0
    return np.linspace(0.0, top, bins + 1)


def histogram(x, edges=None, bins=100, percentile=99.9):
    """Count ``n * x_i`` in left-closed, right-open bins.

    Values below the first edge go to ``underflow`` and values at or above
    the last edge to ``overflow``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise UsageError("histogram input must be finite")
    if edges is None:
        edges = default_edges([x], bins, percentile)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.size < 2:
        raise UsageError("histogram needs at least two bin edges")
    if np.any(np.diff(edges) <= 0):
        raise UsageError("bin edges must be strictly ascending")
    vals = x.size * x
    idx = np.searchsorted(edges, vals, side="right") - 1
    under = int(np.count_nonzero(idx < 0))
    over = int(np.count_nonzero(idx >= edges.size - 1))
    inside = idx[(idx >= 0) & (idx < edges.size - 1)]
    counts = np.bincount(inside, minlength=edges.size - 1)
    return HistogramSpec(edges, counts, under, over)


@dataclass
class ModelPoint:
    kernel: object
    rho: float
    x: np.ndarray
    histogram: HistogramSpec = None


@dataclass
class Correspondence:
    reference_alpha: float
    target_mean: float
    models: dict
    pairwise_kl: dict

    @property
    def parameters(self):
        return {p.kernel.param_name: p.rho for p in self.models.values()}


def _as_kernel(fam):
    if isinstance(fam, str):
        return parse_kernel_spec(fam)[0] if ":" in fam else get_kernel(fam)
    return fam


def correspondence_compare(basis, reference_alpha, families=("poisson", "logarithmic"),
                           eps=DEFAULT_EPS, bins=100, edges=None, step_cap=DEFAULT_STEP_CAP):
    """Evaluate each family at the damping value matching the mean walk
    length ``alpha / (1 - alpha)`` of the geometric reference.

    The geometric reference is always included. Histograms share edges.
    """
    geo = Geometric()
    alpha = geo.check(reference_alpha)
    target = geo.mean_steps(alpha)
    kernels = [geo] + [k for k in map(_as_kernel, families) if not isinstance(k, Geometric)]
    models = {}
    for k in kernels:
        rho = alpha if isinstance(k, Geometric) else correspondence_solve(k, target)
        x = lift(basis, eval_series_coeffs(basis, k, rho, eps, step_cap))
        models[k.kernel_id] = ModelPoint(k, rho, x)
    if edges is None:
        edges = default_edges([p.x for p in models.values()], bins)
    for p in models.values():
        p.histogram = histogram(p.x, edges)
    pairwise = {}
    for a in models:
        for b in models:
            if a != b:
                pairwise[(a, b)] = kl_divergence(models[a].x, models[b].x)
    return Correspondence(alpha, target, models, pairwise)
