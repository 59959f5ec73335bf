import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damprank.exceptions import DataError, DomainError, UsageError
from damprank.graph import (PersonalizationVector, build_operator, gen_personalization,
                            random_graph)
from damprank.kernels import ConwayMaxwellPoisson, Geometric, Logarithmic, Poisson
from damprank.krylov import (KrylovBasis, RankJob, arnoldi_build, batch_rank, eval_derivative_coeffs,
                             eval_series_coeffs, krylov_rrqr_diag, lift, load_basis,
                             numerical_dimension, resolvent_coeffs, save_basis)
from damprank.solvers import direct_series

from fixtures import CASES, cycle3, e0, perron_case, uniform
from oracles import heat, log_model, resolvent, series

FAMILIES = [(Geometric(), 0.85), (Poisson(), 5.0), (Logarithmic(), 0.9),
            (ConwayMaxwellPoisson(1.5), 2.0)]


@pytest.fixture(scope="module")
def bases():
    return {c.name: arnoldi_build(c.P, c.pv) for c in CASES}


# -- structure ---------------------------------------------------------------

def test_cycle_uniform_is_invariant():
    P = build_operator(cycle3(), "error")
    b = arnoldi_build(P, uniform(3))
    assert b.m == 1 and b.happy
    np.testing.assert_allclose(b.H, [[1.0]], atol=1e-15)


def test_cycle_e0_cube_roots():
    P = build_operator(cycle3(), "error")
    b = arnoldi_build(P, e0())
    assert b.m == 3 and b.happy
    eig = np.sort_complex(np.linalg.eigvals(b.H))
    roots = np.sort_complex(np.exp(2j * np.pi * np.arange(3) / 3))
    np.testing.assert_allclose(eig, roots, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_perron_vector_gives_m1(seed):
    P, pv = perron_case(seed=seed)
    b = arnoldi_build(P, pv)
    assert b.m == 1
    diag = krylov_rrqr_diag(P, pv, 8)
    assert numerical_dimension(diag, 1e-12) == 1


@pytest.mark.parametrize("c", CASES, ids=lambda c: c.name)
def test_arnoldi_invariants(c, bases):
    b = bases[c.name]
    assert b.m <= c.g.n
    assert b.orthogonality_error() <= 1e-12
    assert b.arnoldi_defect(c.P) <= 1e-10 * max(1.0, np.linalg.norm(b.H))
    np.testing.assert_allclose(b.sigma * b.Q[:, 0], c.pv.v, rtol=0, atol=1e-13)
    assert np.all(np.tril(b.H, -2) == 0)


def test_arnoldi_errors():
    P = build_operator(cycle3(), "error")
    with pytest.raises(UsageError):
        arnoldi_build(P, e0(), tol=0)
    with pytest.raises(UsageError):
        arnoldi_build(P, e0(), m_max=0)
    with pytest.raises(UsageError):
        arnoldi_build(P, np.zeros(3))


def test_m_max_caps_basis():
    c = CASES[2]
    b = arnoldi_build(c.P, c.pv, m_max=5)
    assert b.m == 5 and not b.happy


def test_rrqr_cycle():
    P = build_operator(cycle3(), "error")
    diag = krylov_rrqr_diag(P, e0(), 6)
    assert numerical_dimension(diag, 1e-12) == 3
    with pytest.raises(UsageError):
        krylov_rrqr_diag(P, e0(), 300)
    with pytest.raises(UsageError):
        krylov_rrqr_diag(P, e0(), 6, memory_budget=10)


# -- evaluation against dense oracles ---------------------------------------

def test_cycle_geometric_closed_form():
    P = build_operator(cycle3(), "error")
    b = arnoldi_build(P, e0())
    x = lift(b, eval_series_coeffs(b, Geometric(), 0.5, 1e-12))
    np.testing.assert_allclose(x, np.array([4, 2, 1]) / 7, rtol=0, atol=1e-11)


@pytest.mark.parametrize("beta", [0.1, 5.0, 19.0])
def test_perron_v_is_fixed(beta):
    P = build_operator(cycle3(), "error")
    b = arnoldi_build(P, uniform(3))
    # exact up to the truncated tail, which is at most eps in l1
    x = lift(b, eval_series_coeffs(b, Poisson(), beta, 1e-12))
    assert np.abs(x - 1 / 3).sum() <= 1e-12
    x = lift(b, eval_series_coeffs(b, Poisson(), beta, 1e-16))
    np.testing.assert_allclose(x, np.full(3, 1 / 3), rtol=0, atol=1e-14)  # summation roundoff
    xd = lift(b, eval_derivative_coeffs(b, Poisson(), beta))
    assert np.abs(xd).max() <= 1e-12


@pytest.mark.parametrize("c", CASES, ids=lambda c: c.name)
def test_matches_dense_matrix_functions(c, bases):
    b = bases[c.name]
    A = c.P.toarray()
    v = c.pv.v
    checks = [(Geometric(), 0.85, resolvent(A, v, 0.85)),
              (Poisson(), 5.0, heat(A, v, 5.0)),
              (Logarithmic(), 0.9, log_model(A, v, 0.9))]
    for kernel, rho, want in checks:
        x = lift(b, eval_series_coeffs(b, kernel, rho, 1e-14))
        assert np.abs(x - want).sum() <= 1e-11, kernel.kernel_id


@pytest.mark.parametrize("c", CASES, ids=lambda c: c.name)
@pytest.mark.parametrize("kernel,rho", FAMILIES, ids=lambda x: getattr(x, "kernel_id", str(x)))
def test_oracle_equivalence_and_tail_bound(c, bases, kernel, rho):
    b = bases[c.name]
    eps = 1e-10
    coeffs = eval_series_coeffs(b, kernel, rho, eps)
    x = lift(b, coeffs)
    assert np.abs(x - direct_series(c.P, c.pv, kernel, rho, eps)).sum() <= 2 * eps
    fine = lift(b, eval_series_coeffs(b, kernel, rho, eps / 100))
    assert np.abs(x - fine).sum() <= coeffs.tail_bound
    assert abs(x.sum() - 1) <= 1e-10


def test_cmp_against_plain_series(bases):
    from oracles import cmp_weights
    c = CASES[2]
    w = cmp_weights(80, 2.0, 1.5)
    want = series(c.P.toarray(), c.pv.v, w)
    x = lift(bases[c.name], eval_series_coeffs(bases[c.name], ConwayMaxwellPoisson(1.5), 2.0, 1e-15))
    assert np.abs(x - want).sum() <= 1e-13


def test_resolvent_coeffs_agree(bases):
    c = CASES[3]
    b = bases[c.name]
    x1 = lift(b, resolvent_coeffs(b, 0.85))
    x2 = lift(b, eval_series_coeffs(b, Geometric(), 0.85, 1e-15))
    assert np.abs(x1 - x2).sum() <= 1e-12


def test_breakdown_term_in_bound():
    g = random_graph(80, 6, seed=9)
    pv = gen_personalization(80, seed=9)
    P = build_operator(g, "patch_v", pv)
    b = arnoldi_build(P, pv, m_max=6)
    assert not b.happy
    c = eval_series_coeffs(b, Geometric(), 0.85, 1e-12)
    want = resolvent(P.toarray(), pv.v, 0.85)
    err = np.abs(lift(b, c) - want).sum()
    assert err <= c.tail_bound
    assert c.tail_bound > 1e-12


# -- derivatives -------------------------------------------------------------

@pytest.mark.parametrize("c", CASES, ids=lambda c: c.name)
def test_poisson_derivative_is_heat_equation(c, bases):
    b = bases[c.name]
    x = lift(b, eval_series_coeffs(b, Poisson(), 4.0, 1e-15))
    xd = lift(b, eval_derivative_coeffs(b, Poisson(), 4.0, 1e-15))
    assert np.abs(xd - (c.P.matvec(x) - x)).sum() <= 1e-10


@pytest.mark.parametrize("kernel,rho", FAMILIES, ids=lambda x: getattr(x, "kernel_id", str(x)))
def test_derivative_matches_central_difference(bases, kernel, rho):
    h = 1e-5
    for c in CASES:
        b = bases[c.name]
        up = lift(b, eval_series_coeffs(b, kernel, rho + h, 1e-15))
        down = lift(b, eval_series_coeffs(b, kernel, rho - h, 1e-15))
        xd = lift(b, eval_derivative_coeffs(b, kernel, rho, 1e-15))
        assert np.abs(xd - (up - down) / (2 * h)).max() <= 1e-6
        assert abs(xd.sum()) <= 1e-10


# -- batch -------------------------------------------------------------------

def test_batch_matches_standalone_bitwise(bases):
    c = CASES[2]
    b = bases[c.name]
    jobs = [RankJob(Geometric(), np.linspace(0.7, 0.95, 6), want_ambient_lift=True),
            RankJob(Poisson(), np.linspace(1, 20, 6)),
            RankJob(Logarithmic(), np.linspace(0.5, 0.98, 6), want_derivative=True)]
    res = batch_rank(b, jobs)
    assert len(res.rows) == 18 and not res.errors
    fresh = arnoldi_build(c.P, c.pv)
    for row in res.rows:
        job = next(j for j in jobs if j.kernel.kernel_id == row.kernel_id)
        alone = eval_series_coeffs(fresh, job.kernel, row.rho)
        np.testing.assert_array_equal(row.coeffs.coeffs, alone.coeffs)
        assert row.K_used == alone.K_used


def test_batch_threads_identical(bases):
    b = bases[CASES[3].name]
    jobs = [RankJob(Geometric(), np.linspace(0.7, 0.97, 10), want_ambient_lift=True)]
    one = batch_rank(b, jobs, threads=1)
    four = batch_rank(b, jobs, threads=4)
    for r1, r4 in zip(one.rows, four.rows):
        np.testing.assert_array_equal(r1.x, r4.x)


def test_batch_isolates_errors(bases):
    b = bases[CASES[0].name]
    jobs = [RankJob(Geometric(), [0.5, 0.6, 1.5]), RankJob(Poisson(), [1.0, 2.0])]
    res = batch_rank(b, jobs)
    assert len(res.rows) == 4 and len(res.errors) == 1
    assert isinstance(res.errors[0].error, DomainError)
    assert res.get("poisson", 2.0).rho == 2.0


def test_batch_needs_jobs(bases):
    with pytest.raises(UsageError):
        batch_rank(bases[CASES[0].name], [])
    with pytest.raises(UsageError):
        RankJob(Geometric(), [])


def test_lift_examples(bases):
    b = bases[CASES[2].name]
    e1 = np.zeros(b.m)
    e1[0] = 1.0
    np.testing.assert_allclose(lift(b, e1), CASES[2].pv.v, rtol=0, atol=1e-15)
    assert np.all(lift(b, np.zeros(b.m)) == 0)
    with pytest.raises(ValueError):
        lift(b, np.zeros(b.m + 1))


# -- persistence -------------------------------------------------------------

def test_save_load_roundtrip(tmp_path, bases):
    c = CASES[3]
    b = bases[c.name]
    path = save_basis(b, tmp_path / "b.bin")
    raw = path.read_bytes()
    assert raw[:8] == b"DKRYLOV1"
    b2 = load_basis(path)
    np.testing.assert_array_equal(b2.Q, b.Q)
    np.testing.assert_array_equal(b2.H, b.H)
    assert b2.sigma == b.sigma and b2.residuals == b.residuals
    assert b2.meta["graph_hash"] == c.g.digest
    x1 = lift(b, eval_series_coeffs(b, Geometric(), 0.85))
    x2 = lift(b2, eval_series_coeffs(b2, Geometric(), 0.85))
    np.testing.assert_array_equal(x1, x2)


def test_load_rejects_corrupt(tmp_path, bases):
    path = save_basis(bases[CASES[0].name], tmp_path / "b.bin")
    raw = path.read_bytes()
    path.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(DataError):
        load_basis(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(DataError):
        load_basis(path)
    with pytest.raises(DataError):
        load_basis(tmp_path / "missing.bin")


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 60), st.integers(0, 10**6))
def test_random_graph_invariants(n, seed):
    g = random_graph(n, 4, seed=seed)
    pv = gen_personalization(n, seed=seed)
    P = build_operator(g, "patch_v", pv)
    b = arnoldi_build(P, pv)
    assert b.m <= n
    assert b.orthogonality_error() <= 1e-12
    x = lift(b, eval_series_coeffs(b, Geometric(), 0.85))
    assert abs(x.sum() - 1) <= 1e-10
    assert isinstance(b, KrylovBasis)
