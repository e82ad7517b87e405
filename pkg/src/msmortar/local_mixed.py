"""Hybridized lowest-order mixed element on square cells.

Each cell carries four outward normal fluxes (integrated over the edge), one
constant pressure, and every interior edge one constant multiplier.  On a
square cell the velocity mass matrix in these unknowns does not depend on
``h``::

    (kappa^-1 q, v)_T = F^T (MHAT / kappa) G

so one reference matrix serves the whole grid.

Two routes solve the same discrete equations:

* :class:`HybridRect` eliminates fluxes and pressures cell by cell and
  factorizes the condensed multiplier matrix (used for every repeated solve);
* :class:`SaddleSystem` assembles the full flux/pressure/multiplier saddle
  matrix and is used as the monolithic fine solver and as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import BOTTOM, LEFT, RIGHT, TOP, GridGeometry, Rect

# reference mass matrix in (left, right, bottom, top) order
MHAT = np.array(
    [
        [1 / 3, -1 / 6, 0, 0],
        [-1 / 6, 1 / 3, 0, 0],
        [0, 0, 1 / 3, -1 / 6],
        [0, 0, -1 / 6, 1 / 3],
    ]
)
_MINV = np.linalg.inv(MHAT)
_MINV1 = _MINV.sum(axis=1)
_C1 = _MINV1.sum()
# condensed cell matrix: outward fluxes = -kappa * KHAT @ lam + s / 4
KHAT = _MINV - np.outer(_MINV1, _MINV1) / _C1


class SingularSystemError(RuntimeError):
    pass


def rect_topology(nx: int, ny: int):
    """Cell->edge and edge->cell maps of an ``nx x ny`` rectangle of cells,
    numbered exactly like :class:`GridGeometry` numbers the whole grid."""
    nh = nx * (ny + 1)
    jj, ii = np.divmod(np.arange(nx * ny), nx)
    cell_edges = np.empty((nx * ny, 4), dtype=np.int64)
    cell_edges[:, LEFT] = nh + jj * (nx + 1) + ii
    cell_edges[:, RIGHT] = nh + jj * (nx + 1) + ii + 1
    cell_edges[:, BOTTOM] = jj * nx + ii
    cell_edges[:, TOP] = (jj + 1) * nx + ii
    n_edges = nh + (nx + 1) * ny
    edge_cells = np.full((n_edges, 2), -1, dtype=np.int64)
    cells = np.arange(nx * ny)
    edge_cells[cell_edges[:, TOP], 0] = cells
    edge_cells[cell_edges[:, BOTTOM], 1] = cells
    edge_cells[cell_edges[:, RIGHT], 0] = cells
    edge_cells[cell_edges[:, LEFT], 1] = cells
    return cell_edges, edge_cells


def _as_columns(a, rows: int) -> tuple[np.ndarray, bool]:
    if a is None:
        return np.zeros((rows, 1)), True
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return a[:, None], True
    return a, False


@dataclass
class LocalSolution:
    """Result of a rectangle solve.  Arrays carry a trailing column axis when
    several right-hand sides were solved at once.

    ``flux`` holds the outward normal flux of every cell side integrated over
    the edge, in (left, right, bottom, top) order; ``boundary_flux`` is the
    same quantity on the rectangle boundary edges, outward from the rectangle.
    """

    flux: np.ndarray
    pressure: np.ndarray
    multipliers: np.ndarray
    interior_multipliers: np.ndarray
    boundary_flux: np.ndarray


class HybridRect:
    """Statically condensed solver for a rectangle of cells with Dirichlet
    multiplier data on its boundary edges.

    ``kappa`` is given per cell in the rectangle's row-major order.  The
    factorization is computed once; :meth:`solve` only reads it, so one
    instance can serve many right-hand sides (and threads).
    """

    def __init__(self, kappa: np.ndarray, nx: int, ny: int, h: float):
        self.nx, self.ny, self.h = nx, ny, h
        self.kappa = np.asarray(kappa, dtype=float).ravel()
        if self.kappa.shape != (nx * ny,):
            raise ValueError("kappa does not match the rectangle")
        self.cell_edges, self.edge_cells = rect_topology(nx, ny)
        n_edges = len(self.edge_cells)
        on_boundary = (self.edge_cells < 0).any(axis=1)
        self.boundary = np.flatnonzero(on_boundary)
        self.interior = np.flatnonzero(~on_boundary)

        rows = np.repeat(self.cell_edges, 4, axis=1).ravel()
        cols = np.tile(self.cell_edges, (1, 4)).ravel()
        vals = (self.kappa[:, None, None] * KHAT[None]).ravel()
        S = sp.csc_matrix((vals, (rows, cols)), shape=(n_edges, n_edges))
        self.S = S
        self._S_IB = S[self.interior][:, self.boundary].tocsr()
        self._factor = None
        if len(self.interior):
            try:
                self._factor = spla.splu(S[self.interior][:, self.interior].tocsc())
            except RuntimeError as exc:
                raise SingularSystemError(f"condensed block matrix is singular: {exc}") from None

        # (cell, side) owning each boundary edge
        cell = np.where(self.edge_cells[self.boundary, 0] >= 0, self.edge_cells[self.boundary, 0], self.edge_cells[self.boundary, 1])
        side = np.argmax(self.cell_edges[cell] == self.boundary[:, None], axis=1)
        self._bcell, self._bside = cell, side

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def _load(self, s: np.ndarray) -> np.ndarray:
        """Edge load from cell source integrals ``s`` (shape cells x k)."""
        b = np.zeros((len(self.edge_cells), s.shape[1]))
        np.add.at(b, self.cell_edges.ravel(), np.repeat(s / 4.0, 4, axis=0))
        return b

    def solve(self, source=None, boundary=None) -> LocalSolution:
        """Solve with cell source *densities* ``source`` and boundary
        multipliers ``boundary``.  Either may be 2-D (one column per RHS)."""
        nb = len(self.boundary)
        lam_b, single_b = _as_columns(boundary, nb)
        f, single_f = _as_columns(source, self.n_cells)
        k = max(lam_b.shape[1], f.shape[1])
        if lam_b.shape[1] != k:
            lam_b = np.broadcast_to(lam_b, (nb, k))
        if f.shape[1] != k:
            f = np.broadcast_to(f, (self.n_cells, k))
        s = f * self.h**2

        lam = np.zeros((len(self.edge_cells), k))
        lam[self.boundary] = lam_b
        if self._factor is not None:
            rhs = self._load(s)[self.interior] - self._S_IB @ lam_b
            lam[self.interior] = self._factor.solve(np.ascontiguousarray(rhs))
        lam_t = lam[self.cell_edges]  # cells x 4 x k
        kap = self.kappa[:, None]
        pressure = s / (_C1 * kap) + (_MINV1[None, :, None] * lam_t).sum(axis=1) / _C1
        # KHAT annihilates constants; centring avoids cancellation when kappa is large
        centred = lam_t - lam_t.mean(axis=1, keepdims=True)
        flux = s[:, None, :] / 4.0 - kap[:, :, None] * np.einsum("ab,cbk->cak", KHAT, centred)
        bflux = flux[self._bcell, self._bside]
        out = LocalSolution(flux, pressure, lam, lam[self.interior], bflux)
        if single_b and single_f:
            out = LocalSolution(*(a[..., 0] for a in (flux, pressure, lam, lam[self.interior], bflux)))
        return out


class LocalBlockSolver:
    """Factorized hybridized system of one coarse block.

    ``boundary_edges`` lists the global fine edges of the block boundary in
    the order expected by :meth:`solve_mortar_part`; ``boundary_dofs`` maps
    them to fine mortar DOFs (``-1`` on the domain boundary).
    """

    def __init__(self, geom: GridGeometry, kappa: np.ndarray, block: int):
        self.block = block
        self.rect = geom.block_rect(block)
        self.cells = self.rect.cells(geom.nf)
        n = geom.n
        self.rect_solver = HybridRect(np.asarray(kappa)[self.cells], n, n, geom.h)
        local_edges = geom.rect_edges(self.rect)
        self.edges = local_edges
        self.boundary_edges = local_edges[self.rect_solver.boundary]
        self.boundary_dofs = geom.edge_to_dof[self.boundary_edges]

    @property
    def n_dofs(self) -> int:
        n = self.rect_solver.nx
        return 5 * n * n + 2 * n * (n - 1)

    def solve(self, source=None, trace=None) -> LocalSolution:
        return self.rect_solver.solve(source, trace)

    def solve_source_part(self, source) -> LocalSolution:
        return self.rect_solver.solve(source, None)

    def solve_mortar_part(self, trace) -> LocalSolution:
        return self.rect_solver.solve(None, trace)

    def block_matrix(self) -> sp.csr_matrix:
        """Uncondensed saddle-point matrix of the block (for inspection)."""
        r = self.rect_solver
        return SaddleSystem(r.kappa, r.nx, r.ny, r.h).matrix


def assemble_block(geom: GridGeometry, kappa, block: int) -> LocalBlockSolver:
    return LocalBlockSolver(geom, getattr(kappa, "values", kappa), block)


class SaddleSystem:
    """Full hybridized saddle-point system on a rectangle of cells.

    Unknown ordering: fluxes (4 per cell), pressures (1 per cell), interior
    edge multipliers.  Rows are signed so that the matrix is symmetric::

        [ M   -B^T  C ] [F]     [-C_B lam_B]
        [-B    0    0 ] [u]  =  [-s        ]
        [ C^T  0    0 ] [lam]   [ 0        ]
    """

    def __init__(self, kappa: np.ndarray, nx: int, ny: int, h: float):
        self.nx, self.ny, self.h = nx, ny, h
        kappa = np.asarray(kappa, dtype=float).ravel()
        self.kappa = kappa
        self.cell_edges, self.edge_cells = rect_topology(nx, ny)
        nc = nx * ny
        on_boundary = (self.edge_cells < 0).any(axis=1)
        self.boundary = np.flatnonzero(on_boundary)
        self.interior = np.flatnonzero(~on_boundary)
        lam_index = np.full(len(self.edge_cells), -1)
        lam_index[self.interior] = np.arange(len(self.interior))
        self.n_flux, self.n_cells, self.n_lam = 4 * nc, nc, len(self.interior)
        self.size = self.n_flux + self.n_cells + self.n_lam

        flux_ids = np.arange(4 * nc).reshape(nc, 4)
        r_m = np.repeat(flux_ids, 4, axis=1).ravel()
        c_m = np.tile(flux_ids, (1, 4)).ravel()
        v_m = (MHAT[None] / kappa[:, None, None]).ravel()

        u_ids = self.n_flux + np.arange(nc)
        r_b = np.repeat(u_ids, 4)
        c_b = flux_ids.ravel()
        v_b = -np.ones(4 * nc)

        li = lam_index[self.cell_edges.ravel()]
        keep = li >= 0
        r_c = flux_ids.ravel()[keep]
        c_c = self.n_flux + self.n_cells + li[keep]
        v_c = np.ones(keep.sum())

        rows = np.concatenate([r_m, r_b, c_b, r_c, c_c])
        cols = np.concatenate([c_m, c_b, r_b, c_c, r_c])
        vals = np.concatenate([v_m, v_b, v_b, v_c, v_c])
        self.matrix = sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))

        bpos = np.full(len(self.edge_cells), -1)
        bpos[self.boundary] = np.arange(len(self.boundary))
        bi = bpos[self.cell_edges.ravel()]
        self._bflux_rows = flux_ids.ravel()[bi >= 0]
        self._bflux_pos = bi[bi >= 0]

    def rhs(self, source=None, boundary=None) -> np.ndarray:
        b = np.zeros(self.size)
        if source is not None:
            b[self.n_flux:self.n_flux + self.n_cells] = -np.asarray(source, dtype=float) * self.h**2
        if boundary is not None:
            np.add.at(b, self._bflux_rows, -np.asarray(boundary, dtype=float)[self._bflux_pos])
        return b

    def split(self, x: np.ndarray):
        nc = self.n_cells
        flux = x[:self.n_flux].reshape(nc, 4)
        pressure = x[self.n_flux:self.n_flux + nc]
        lam = x[self.n_flux + nc:]
        return flux, pressure, lam

    def solve(self, source=None, boundary=None, dense: bool = False):
        """Return ``(flux, pressure, all-edge multipliers)``."""
        b = self.rhs(source, boundary)
        if dense:
            x = np.linalg.solve(self.matrix.toarray(), b)
        else:
            x = spla.spsolve(self.matrix.tocsc(), b)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("saddle-point system is singular")
        flux, pressure, lam_i = self.split(x)
        lam = np.zeros(len(self.edge_cells))
        lam[self.interior] = lam_i
        if boundary is not None:
            lam[self.boundary] = boundary
        return flux, pressure, lam


@dataclass
class GlobalSolution:
    """Fine-grid fields: outward cell-side fluxes (integrated over each edge),
    cell pressures, and multipliers on every edge (zero on the boundary)."""

    flux: np.ndarray
    pressure: np.ndarray
    multipliers: np.ndarray
    h: float

    def divergence(self) -> np.ndarray:
        """Cell-averaged discrete divergence of the flux."""
        return self.flux.sum(axis=1) / self.h**2

    def conservation_residual(self, source) -> np.ndarray:
        """Per-cell ``(div q - f)``, relative to ``max(1, |f|_inf)``."""
        f = np.asarray(getattr(source, "values", source), dtype=float)
        return (self.divergence() - f) / max(1.0, np.abs(f).max())

    def normal_flux_density(self, geom: GridGeometry) -> np.ndarray:
        """``q . n`` per edge, with ``n`` pointing in +x / +y."""
        out = np.zeros(geom.n_edges)
        ce = geom.cell_edges
        out[ce[:, RIGHT]] = self.flux[:, RIGHT]
        out[ce[:, TOP]] = self.flux[:, TOP]
        first_col = ce[:, LEFT][geom.edge_cells[ce[:, LEFT], 0] < 0]
        first_row = ce[:, BOTTOM][geom.edge_cells[ce[:, BOTTOM], 0] < 0]
        lc = geom.edge_cells[first_col, 1]
        bc = geom.edge_cells[first_row, 1]
        out[first_col] = -self.flux[lc, LEFT]
        out[first_row] = -self.flux[bc, BOTTOM]
        return out / geom.h


def monolithic_fine_solve(geom: GridGeometry, kappa, source) -> GlobalSolution:
    """Direct solve of the full fine-scale hybridized system."""
    kappa = np.asarray(getattr(kappa, "values", kappa), dtype=float)
    f = np.asarray(getattr(source, "values", source), dtype=float)
    system = SaddleSystem(kappa, geom.nf, geom.nf, geom.h)
    flux, pressure, lam = system.solve(f)
    return GlobalSolution(flux, pressure, lam, geom.h)


def flux_energy(flux: np.ndarray, kappa: np.ndarray) -> float:
    """Squared kappa^-1 weighted L2 norm of a cellwise flux field."""
    return float(np.einsum("ca,ab,cb->", flux, MHAT, flux / np.asarray(kappa)[:, None]))
