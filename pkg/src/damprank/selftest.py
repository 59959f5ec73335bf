"""Closed-form sanity checks run by ``damprank selftest``."""

import numpy as np

from .graph import EdgeGraph, PersonalizationVector, build_operator, scc_blocks
from .kernels import (ConwayMaxwellPoisson, Geometric, Logarithmic, Poisson,
                      correspondence_solve)
from .krylov import arnoldi_build, eval_series_coeffs, lift
from .solvers import block_solve, direct_series, gauss_seidel, power_method


def _cycle():
    g = EdgeGraph.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    pv = PersonalizationVector(np.array([1.0, 0.0, 0.0]))
    return g, pv, build_operator(g, "patch_v", pv)


def run_selftest():
    """Return ``(all_passed, lines)``."""
    checks = []
    g, pv, P = _cycle()
    want = np.array([4.0, 2.0, 1.0]) / 7.0
    basis = arnoldi_build(P, pv)
    paths = {
        "power": lambda: power_method(P, pv, 0.5, 1e-14)[0],
        "gauss_seidel": lambda: gauss_seidel(P, pv, 0.5, 1e-14)[0],
        "series": lambda: direct_series(P, pv, Geometric(), 0.5, 1e-15),
        "krylov": lambda: lift(basis, eval_series_coeffs(basis, Geometric(), 0.5, 1e-15)),
        "block": lambda: block_solve(P, scc_blocks(g), pv, 0.5, 1e-14)[0],
    }
    for name, fn in paths.items():
        err = float(np.abs(fn() - want).max())
        checks.append((f"3-cycle alpha=0.5 via {name}", err <= 1e-11, err))

    eig = np.sort_complex(np.linalg.eigvals(basis.H))
    roots = np.sort_complex(np.exp(2j * np.pi * np.arange(3) / 3))
    err = float(np.abs(eig - roots).max()) if basis.m == 3 else np.inf
    checks.append(("3-cycle basis: m=3, eigenvalues at cube roots of unity", err <= 1e-12, err))

    for kernel, rho in ((Geometric(), 0.85), (Poisson(), 5.0), (Logarithmic(), 0.9),
                        (ConwayMaxwellPoisson(0.5), 2.0)):
        K = kernel.truncation(rho, 1e-12)
        err = abs(kernel.weights(K, rho).sum() + kernel.tail_mass(K, rho) - 1.0)
        checks.append((f"{kernel.kernel_id} prefix + tail = 1", err <= 1e-12, err))

    for alpha, beta, gamma in ((0.85, 17 / 3, 0.94146), (0.95, 19.0, 0.98831)):
        mean = Geometric().mean_steps(alpha)
        b = correspondence_solve(Poisson(), mean)
        c = correspondence_solve(Logarithmic(), mean)
        err = max(abs(b - beta) / beta, abs(c - gamma))
        checks.append((f"correspondence at alpha={alpha}", err <= 5e-5, err))

    lines = [f"{'PASS' if ok else 'FAIL'} {name} (err {err:.2e})" for name, ok, err in checks]
    return all(ok for _, ok, _ in checks), lines
