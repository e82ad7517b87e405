import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from msmortar.field import builtin_field, loguniform_field, realize_field
from msmortar.geometry import build_geometry, edge_skeleton_dofs, domain_spec, oversample_region
from msmortar.interface import InterfaceOperator
from msmortar.mortar_basis import basis_for, full_basis
from msmortar.solvers import (
    CoarsePreconditioner,
    KrylovBreakdown,
    LocalPreconditioner,
    TwoLevelPreconditioner,
    additive_apply,
    coarse_apply,
    gmres_restarted,
    hybrid_apply,
    local_apply,
    pcg,
)


@pytest.fixture(scope="module")
def tiny():
    g = build_geometry(2, 2)
    k = loguniform_field(g, 1e3, np.random.default_rng(7)).values
    op = InterfaceOperator(g, k)
    return g, k, op, op.dense()


@pytest.fixture(scope="module")
def mid():
    g = build_geometry(5, 10)
    k = loguniform_field(g, 1e3, np.random.default_rng(5)).values
    op = InterfaceOperator(g, k)
    return g, k, op


@pytest.fixture(scope="module")
def shipped():
    g = build_geometry(5, 10)
    k = realize_field(builtin_field("inclusions", 1e4), g).values
    return g, k, InterfaceOperator(g, k)


# ---------------------------------------------------------------- coarse


def test_coarse_kills_orthogonal_residual(tiny):
    g, k, op, A = tiny
    R = basis_for(g, k, "polynomial", 1).R.toarray()
    cp = CoarsePreconditioner(op, R)
    r = np.random.default_rng(0).normal(size=op.size)
    r -= R @ np.linalg.lstsq(R, r, rcond=None)[0]
    assert np.abs(coarse_apply(cp, r)).max() <= 1e-12


def test_coarse_matches_dense_formula(tiny):
    g, k, op, A = tiny
    R = basis_for(g, k, "case2", 2).R.toarray()
    r = np.random.default_rng(1).normal(size=op.size)
    ref = R @ np.linalg.solve(R.T @ A @ R, R.T @ r)
    np.testing.assert_allclose(CoarsePreconditioner(op, R)(r), ref, rtol=1e-10, atol=1e-12)


def test_full_coarse_space_is_exact_inverse(tiny):
    g, k, op, A = tiny
    cp = CoarsePreconditioner(op, full_basis(g))
    b = np.random.default_rng(2).normal(size=op.size)
    np.testing.assert_allclose(A @ cp(b), b, rtol=0, atol=1e-9 * np.abs(b).max())
    _, rep = pcg(op.apply, cp, b, tol=1e-10)
    assert rep.converged and rep.iterations == 1


def test_dependent_coarse_columns_rejected(tiny):
    g, k, op, A = tiny
    R = basis_for(g, k, "polynomial", 1).R.toarray()
    with pytest.raises(la.LinAlgError):
        CoarsePreconditioner(op, np.hstack([R, R[:, :1]]))


# ---------------------------------------------------------------- local


def test_domain1_local_is_blockwise_inverse(tiny):
    g, k, op, A = tiny
    lp = LocalPreconditioner(op, 1)
    assert lp.symmetric
    B = lp.dense()
    np.testing.assert_allclose(B, B.T, atol=1e-12 * np.abs(B).max())
    for ce in range(g.n_coarse_edges):
        d = g.coarse_edge_dofs(ce)
        np.testing.assert_allclose(B[np.ix_(d, d)], np.linalg.inv(A[np.ix_(d, d)]), rtol=1e-9)
    ce = 0
    r = np.zeros(op.size)
    r[g.coarse_edge_dofs(ce)] = 1.0
    out = local_apply(lp, r)
    assert set(np.flatnonzero(out)) <= set(g.coarse_edge_dofs(ce))


def test_restrictive_local_matches_dense_oracle(mid):
    g, k, op = mid
    lp = LocalPreconditioner(op, 2)
    assert not lp.symmetric
    r = np.random.default_rng(3).normal(size=op.size)
    ref = np.zeros(op.size)
    for ce in range(g.n_coarse_edges):
        gather = edge_skeleton_dofs(g, oversample_region(g, ce, domain_spec(2, g.n)))
        own = g.coarse_edge_dofs(ce)
        cols = np.column_stack([op.apply(e) for e in np.eye(op.size)[gather]])
        z = np.linalg.solve(cols[gather], r[gather])
        ref[own] += z[np.searchsorted(gather, own)]
    np.testing.assert_allclose(lp(r), ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


# ---------------------------------------------------------------- compositions


def test_additive_is_sum_and_symmetric(tiny):
    g, k, op, A = tiny
    cp = CoarsePreconditioner(op, basis_for(g, k, "case2", 1).R)
    lp = LocalPreconditioner(op, 1)
    M = TwoLevelPreconditioner(op, cp, lp, "additive")
    r = np.random.default_rng(4).normal(size=op.size)
    np.testing.assert_allclose(M(r), cp(r) + lp(r), rtol=1e-14)
    np.testing.assert_allclose(additive_apply(cp, lp, r), M(r), rtol=1e-14)
    assert np.all(M(np.zeros(op.size)) == 0)
    D = np.column_stack([M(e) for e in np.eye(op.size)])
    np.testing.assert_allclose(D, D.T, atol=1e-10 * np.abs(D).max())
    assert np.linalg.eigvalsh(0.5 * (D + D.T)).min() > 0


def test_hybrid_matches_projected_formula(tiny):
    g, k, op, A = tiny
    cp = CoarsePreconditioner(op, basis_for(g, k, "case2", 2).R)
    lp = LocalPreconditioner(op, 1)
    B0, Bl = cp.R @ np.linalg.solve(cp.A0, cp.R.T), lp.dense()
    P = np.eye(op.size) - B0 @ A
    ref = B0 + P @ Bl @ P.T
    H = np.column_stack([hybrid_apply(cp, lp, op, e) for e in np.eye(op.size)])
    np.testing.assert_allclose(H, ref, atol=1e-9 * np.abs(ref).max())
    # B0 A is an A-orthogonal projection
    P0 = B0 @ A
    np.testing.assert_allclose(P0 @ P0, P0, atol=1e-9)


def test_hybrid_with_exact_coarse_is_inverse(tiny):
    g, k, op, A = tiny
    M = TwoLevelPreconditioner(op, CoarsePreconditioner(op, full_basis(g)), LocalPreconditioner(op, 1), "hybrid")
    b = np.random.default_rng(5).normal(size=op.size)
    np.testing.assert_allclose(A @ M(b), b, atol=1e-8 * np.abs(b).max())


def test_literal_hybrid_form_runs(tiny):
    g, k, op, A = tiny
    M = TwoLevelPreconditioner(op, CoarsePreconditioner(op, basis_for(g, k, "case2", 2).R), LocalPreconditioner(op, 1), "hybrid", "literal")
    assert np.isfinite(M(np.ones(op.size))).all()
    with pytest.raises(ValueError):
        TwoLevelPreconditioner(op, M.coarse, M.local, "multiplicative")
    with pytest.raises(ValueError):
        TwoLevelPreconditioner(op, M.coarse, M.local, "hybrid", "other")


@pytest.mark.parametrize("domain", [1, 2, 3, 4])
@pytest.mark.parametrize("composition", ["additive", "hybrid"])
def test_preconditioned_solves_match_direct(mid, domain, composition):
    g, k, op = mid
    f = np.ones(g.n_cells)
    b = op.rhs(f)
    M = TwoLevelPreconditioner(op, CoarsePreconditioner(op, basis_for(g, k, "case3", 2).R), LocalPreconditioner(op, domain), composition)
    if M.symmetric:
        x, rep = pcg(op.apply, M, b, tol=1e-10)
    else:
        x, rep = gmres_restarted(op.apply, M, b, m=2, tol=1e-10)
    assert rep.converged
    ref, _ = op.solve_fine(f)
    assert np.linalg.norm(x - ref) <= 1e-6 * np.linalg.norm(ref)


def test_additive_pcg_iteration_budget(shipped):
    g, k, op = shipped
    M = TwoLevelPreconditioner(op, CoarsePreconditioner(op, basis_for(g, k, "case2", 2).R), LocalPreconditioner(op, 1))
    _, rep = pcg(op.apply, M, op.rhs(np.ones(g.n_cells)))
    assert rep.converged and rep.iterations <= 40


def test_multiscale_coarse_space_beats_polynomial(shipped):
    g, k, op = shipped
    b = op.rhs(np.ones(g.n_cells))
    its = {}
    for bt in ("polynomial", "case2"):
        M = TwoLevelPreconditioner(op, CoarsePreconditioner(op, basis_for(g, k, bt, 2).R), LocalPreconditioner(op, 1))
        its[bt] = pcg(op.apply, M, b)[1].iterations
    assert its["case2"] <= its["polynomial"]


# ---------------------------------------------------------------- Krylov


def _report_invariants(rep, tol):
    assert rep.residual_history[0] == 1.0
    if rep.converged:
        assert rep.residual_history[-1] <= tol


def test_pcg_identity_one_step():
    x, rep = pcg(np.eye(6), None, np.arange(1.0, 7.0))
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_allclose(x, np.arange(1.0, 7.0))
    _report_invariants(rep, 1e-7)


def test_pcg_random_spd():
    rng = np.random.default_rng(8)
    Q = rng.normal(size=(20, 20))
    A = Q @ Q.T + 20 * np.eye(20)
    b = rng.normal(size=20)
    D = np.diag(1 / np.diag(A))
    x, rep = pcg(A, D, b, tol=1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-9)
    assert rep.iterations <= 20
    _report_invariants(rep, 1e-12)
    assert np.all(np.diff(rep.residual_history) < 1e2)


def test_pcg_zero_rhs():
    x, rep = pcg(np.eye(3), None, np.zeros(3))
    assert rep.iterations == 0 and rep.converged and np.all(x == 0)


def test_pcg_breakdown_on_indefinite():
    with pytest.raises(KrylovBreakdown):
        pcg(np.diag([1.0, -1.0]), None, np.array([1.0, 1.0]))
    with pytest.raises(KrylovBreakdown):
        pcg(np.eye(2), -np.eye(2), np.ones(2))


def test_pcg_reports_nonconvergence():
    A = np.diag(np.logspace(0, 6, 50))
    _, rep = pcg(A, None, np.ones(50), tol=1e-12, maxit=3)
    assert not rep.converged and rep.iterations == 3
    _report_invariants(rep, 1e-12)


@pytest.mark.parametrize("side", ["left", "right"])
def test_gmres_identity_one_step(side):
    x, rep = gmres_restarted(np.eye(5), None, np.ones(5), side=side)
    assert rep.converged and rep.inner_iterations == 1 and rep.iterations == 1
    np.testing.assert_allclose(x, np.ones(5))


@pytest.mark.parametrize("side", ["left", "right"])
def test_gmres_full_krylov_solves_nonsymmetric(side):
    rng = np.random.default_rng(9)
    A = rng.normal(size=(20, 20)) + 8 * np.eye(20)
    b = rng.normal(size=20)
    M = np.diag(1 / np.diag(A))
    x, rep = gmres_restarted(A, M, b, m=20, tol=1e-12, side=side)
    assert rep.converged and rep.inner_iterations <= 20
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-10)
    assert rep.true_residual <= 1e-9
    _report_invariants(rep, 1e-12)


def test_gmres_residuals_monotone_within_cycle():
    rng = np.random.default_rng(10)
    A = rng.normal(size=(30, 30)) + 6 * np.eye(30)
    _, rep = gmres_restarted(A, None, rng.normal(size=30), m=5, tol=1e-10, side="right")
    h = np.array(rep.residual_history)
    assert np.all(np.diff(h) <= 1e-12)


def test_gmres_stagnation_flag():
    P = np.roll(np.eye(6), 1, axis=0)
    b = np.zeros(6)
    b[0] = 1.0
    _, rep = gmres_restarted(P, None, b, m=1, side="right")
    assert rep.stagnated and not rep.converged


def test_gmres_rejects_unknown_side():
    with pytest.raises(ValueError):
        gmres_restarted(np.eye(2), None, np.ones(2), side="both")


def test_gmres_zero_rhs():
    x, rep = gmres_restarted(np.eye(3), None, np.zeros(3))
    assert rep.converged and rep.iterations == 0 and np.all(x == 0)


def test_sparse_operators_accepted():
    A = sp.diags([2.0] * 10).tocsr()
    x, rep = pcg(A, None, np.ones(10))
    np.testing.assert_allclose(x, 0.5)
