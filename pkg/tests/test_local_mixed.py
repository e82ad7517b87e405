import numpy as np
import pytest

from msmortar.field import checkerboard
from msmortar.geometry import build_geometry
from msmortar.local_mixed import (
    KHAT,
    MHAT,
    HybridRect,
    SaddleSystem,
    assemble_block,
    flux_energy,
    monolithic_fine_solve,
)

from .oracles import SIDES, DenseMixed, midpoint, reference_mass


def _boundary_midpoints(rect: HybridRect):
    return [midpoint(c % rect.nx, c // rect.nx, SIDES[a]) for c, a in zip(rect._bcell, rect._bside)]


def test_reference_mass_matrix():
    assert np.allclose(MHAT, reference_mass(), atol=1e-15)


def test_condensed_cell_matrix():
    expected = np.array([[2.5, 0.5, -1.5, -1.5], [0.5, 2.5, -1.5, -1.5], [-1.5, -1.5, 2.5, 0.5], [-1.5, -1.5, 0.5, 2.5]])
    assert np.allclose(KHAT, expected, atol=1e-14)
    assert np.all(KHAT.sum(axis=1) == 0)


def test_single_cell_system():
    s = SaddleSystem(np.ones(1), 1, 1, 0.5)
    A = s.matrix.toarray()
    assert A.shape == (5, 5)
    assert np.allclose(A[:4, :4], reference_mass())
    assert np.array_equal(A[4, :4], -np.ones(4)) and A[4, 4] == 0


def test_block_matrix_structure():
    g = build_geometry(2, 4)
    k = np.random.default_rng(0).uniform(1, 50, g.n_cells)
    blk = assemble_block(g, k, 3)
    B = blk.block_matrix().toarray()
    n = g.n
    assert B.shape == (blk.n_dofs, blk.n_dofs) == (5 * n * n + 2 * n * (n - 1),) * 2
    assert np.array_equal(B, B.T)
    nflux = 4 * n * n
    assert np.all(B[nflux:, nflux:] == 0)


def test_kappa_scaling_of_block_matrix():
    one = SaddleSystem(np.ones(9), 3, 3, 1 / 3).matrix.toarray()
    big = SaddleSystem(np.full(9, 8.0), 3, 3, 1 / 3).matrix.toarray()
    nflux = 36
    assert np.allclose(big[:nflux, :nflux], one[:nflux, :nflux] / 8.0)
    assert np.array_equal(big[nflux:], one[nflux:])


def test_source_part_zero_and_unit():
    g = build_geometry(2, 4)
    blk = assemble_block(g, np.ones(g.n_cells), 0)
    zero = blk.solve_source_part(np.zeros(16))
    assert np.all(zero.flux == 0) and np.all(zero.pressure == 0)
    one = blk.solve_source_part(np.ones(16))
    assert one.boundary_flux.sum() == pytest.approx(g.H**2, rel=1e-10)


def test_source_part_matches_dense_oracle():
    g = build_geometry(2, 4)
    k = checkerboard(g, 1e3).values
    blk = assemble_block(g, k, 2)
    sol = blk.solve_source_part(np.ones(16))
    flux, pressure, _ = DenseMixed(k[blk.cells], 4, 4, g.h).solve(np.ones(16))
    assert np.allclose(sol.flux, flux, rtol=1e-10, atol=1e-14)
    assert np.allclose(sol.pressure, pressure, rtol=1e-10, atol=1e-14)


def test_mortar_part_zero_and_constant():
    g = build_geometry(2, 4)
    k = np.random.default_rng(1).uniform(1, 1e4, g.n_cells)
    blk = assemble_block(g, k, 1)
    nb = len(blk.boundary_edges)
    z = blk.solve_mortar_part(np.zeros(nb))
    assert np.all(z.flux == 0) and np.all(z.pressure == 0)
    c = blk.solve_mortar_part(np.full(nb, 2.5))
    assert np.abs(c.flux).max() < 1e-10
    assert np.allclose(c.pressure, 2.5, atol=1e-10)


def test_mortar_part_matches_dense_oracle():
    rect = HybridRect(np.ones(16), 4, 4, 0.25)
    mids = _boundary_midpoints(rect)
    oracle = DenseMixed(np.ones(16), 4, 4, 0.25)
    for j in (0, 5, 11):
        trace = np.zeros(len(mids))
        trace[j] = 1.0
        sol = rect.solve(None, trace)
        flux, pressure, _ = oracle.solve(None, {mids[j]: 1.0})
        assert np.allclose(sol.flux, flux, atol=1e-12)
        assert np.allclose(sol.pressure, pressure, atol=1e-12)
        expect = flux[rect._bcell, rect._bside]
        assert np.allclose(sol.boundary_flux, expect, atol=1e-12)


def test_steklov_symmetry():
    k = np.random.default_rng(2).uniform(1, 1e5, 20)
    rect = HybridRect(k, 5, 4, 0.1)
    nb = len(rect.boundary)
    G = rect.solve(None, np.eye(nb)).boundary_flux
    assert np.allclose(G, G.T, rtol=0, atol=1e-10 * np.abs(G).max())


def test_superposition():
    rng = np.random.default_rng(3)
    k = rng.uniform(1, 100, 12)
    rect = HybridRect(k, 4, 3, 0.2)
    f = rng.normal(size=12)
    lam = rng.normal(size=len(rect.boundary))
    both = rect.solve(f, lam)
    parts = [rect.solve(f, None), rect.solve(None, lam)]
    for name in ("flux", "pressure", "multipliers", "boundary_flux"):
        total = getattr(parts[0], name) + getattr(parts[1], name)
        scale = np.abs(getattr(both, name)).max()
        assert np.allclose(getattr(both, name), total, rtol=0, atol=1e-12 * scale)


def test_batched_solve_matches_columns():
    rng = np.random.default_rng(4)
    rect = HybridRect(rng.uniform(1, 10, 9), 3, 3, 1 / 3)
    lam = rng.normal(size=(len(rect.boundary), 3))
    many = rect.solve(None, lam)
    for j in range(3):
        assert np.allclose(many.flux[..., j], rect.solve(None, lam[:, j]).flux)


def test_condensed_matches_saddle_system():
    rng = np.random.default_rng(5)
    k = 10 ** rng.uniform(0, 6, 20)
    f = rng.normal(size=20)
    rect = HybridRect(k, 4, 5, 0.1)
    lam = rng.normal(size=len(rect.boundary))
    a = rect.solve(f, lam)
    flux, pressure, mult = SaddleSystem(k, 4, 5, 0.1).solve(f, lam, dense=True)
    assert np.allclose(a.flux, flux, rtol=1e-9, atol=1e-9 * np.abs(flux).max())
    assert np.allclose(a.pressure, pressure, rtol=1e-9, atol=1e-12)
    assert np.allclose(a.multipliers, mult, rtol=1e-9, atol=1e-12)


def test_monolithic_zero_source():
    g = build_geometry(2, 3)
    sol = monolithic_fine_solve(g, np.ones(g.n_cells), np.zeros(g.n_cells))
    assert np.all(sol.flux == 0) and np.all(sol.pressure == 0)


def test_monolithic_conservation_and_oracle():
    g = build_geometry(2, 3)
    rng = np.random.default_rng(6)
    k = 10 ** rng.uniform(0, 6, g.n_cells)
    f = rng.normal(size=g.n_cells)
    sol = monolithic_fine_solve(g, k, f)
    assert np.abs(sol.divergence() - f).max() < 1e-10
    flux, pressure, _ = DenseMixed(k, 6, 6, g.h).solve(f)
    assert np.allclose(sol.pressure, pressure, rtol=1e-8, atol=1e-12)
    assert np.allclose(sol.flux, flux, rtol=1e-8, atol=1e-12)


def test_flux_energy_is_kappa_weighted():
    F = np.array([[1.0, -1.0, 0.0, 0.0]])
    assert flux_energy(F, np.array([2.0])) == pytest.approx((1 / 3 + 1 / 3 + 2 / 6) / 2)


def test_local_conservation_with_high_contrast():
    rng = np.random.default_rng(8)
    k = 10 ** rng.uniform(0, 6, 36)
    rect = HybridRect(k, 6, 6, 0.05)
    f = rng.uniform(-1, 1, 36)
    sol = rect.solve(f, rng.normal(size=len(rect.boundary)))
    # relative to the flux scale: the boundary data drives fluxes of O(kappa)
    scale = np.abs(sol.flux).max() / 0.05**2
    assert np.abs(sol.flux.sum(axis=1) / 0.05**2 - f).max() < 1e-10 * scale
