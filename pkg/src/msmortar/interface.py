"""Reduced interface problem on the coarse skeleton.

For mortar data ``xi`` on the skeleton, every block is solved with ``xi`` as
Dirichlet multiplier data and the two outward boundary fluxes meeting at a
skeleton edge are summed.  The operator is signed so that it is symmetric
positive definite::

    A xi = -(flux jump of the mortar parts)
    g    =  (flux jump of the source parts)

and ``A xi = g`` is exactly flux continuity across the skeleton.  Vectors
live on the fine mortar space (one value per skeleton fine edge); a coarse
space is a matrix ``R`` whose columns are fine mortar vectors.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import GridGeometry
from .local_mixed import GlobalSolution, LocalBlockSolver, flux_energy

__all__ = [
    "ErrorReport",
    "GlobalSolution",
    "InterfaceOperator",
    "error_metrics",
]


class InterfaceOperator:
    """Matrix-free Steklov-Poincare operator built from per-block solvers."""

    def __init__(self, geom: GridGeometry, kappa, threads: int = 1):
        self.geom = geom
        self.kappa = np.asarray(getattr(kappa, "values", kappa), dtype=float)
        self.threads = max(1, int(threads))
        self.blocks = self._map(lambda b: LocalBlockSolver(geom, self.kappa, b), range(geom.n_blocks))
        self._masks = [blk.boundary_dofs >= 0 for blk in self.blocks]
        dof_blocks: list[list[int]] = [[] for _ in range(geom.n_mortar)]
        for blk in self.blocks:
            for d in blk.boundary_dofs[blk.boundary_dofs >= 0]:
                dof_blocks[d].append(blk.block)
        self.dof_blocks = [tuple(sorted(set(b))) for b in dof_blocks]

    @property
    def size(self) -> int:
        return self.geom.n_mortar

    def _map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, items))

    def _block_flux(self, b: int, xi: np.ndarray):
        blk = self.blocks[b]
        mask = self._masks[b]
        dofs = blk.boundary_dofs[mask]
        trace = np.zeros((len(blk.boundary_dofs), xi.shape[1]))
        trace[mask] = xi[dofs]
        cols = np.flatnonzero(np.any(trace != 0.0, axis=0))
        if len(cols) == 0:
            return dofs, cols, None
        sol = blk.solve_mortar_part(trace[:, cols])
        return dofs, cols, sol.boundary_flux[mask]

    def apply(self, xi, blocks=None) -> np.ndarray:
        """``A @ xi`` for a vector or a matrix of column vectors.  ``blocks``
        limits the sum to a subset of coarse blocks."""
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        X = xi[:, None] if single else xi
        if X.shape[0] != self.size:
            raise ValueError(f"mortar vector has length {X.shape[0]}, expected {self.size}")
        out = np.zeros_like(X)
        order = range(self.geom.n_blocks) if blocks is None else sorted(blocks)
        # fixed block order in the reduction keeps results thread-count independent
        for dofs, cols, flux in self._map(lambda b: self._block_flux(b, X), order):
            if flux is not None:
                out[np.ix_(dofs, cols)] -= flux
        return out[:, 0] if single else out

    __matmul__ = apply

    def rhs(self, source) -> np.ndarray:
        f = np.asarray(getattr(source, "values", source), dtype=float)
        g = np.zeros(self.size)

        def one(b):
            blk = self.blocks[b]
            return blk, blk.solve_source_part(f[blk.cells]).boundary_flux

        for blk, flux in self._map(one, range(self.geom.n_blocks)):
            m = self._masks[blk.block]
            g[blk.boundary_dofs[m]] += flux[m]
        return g

    def galerkin(self, R) -> np.ndarray:
        """Dense ``R^T A R``."""
        R = R.toarray() if sp.issparse(R) else np.asarray(R, dtype=float)
        if R.shape[0] != self.size:
            raise ValueError(f"basis has {R.shape[0]} rows, expected {self.size}")
        return R.T @ self.apply(R)

    def restrict_apply(self, R):
        """Return ``xi_c -> R^T A R xi_c``."""
        R = R.toarray() if sp.issparse(R) else np.asarray(R, dtype=float)
        if R.shape[0] != self.size:
            raise ValueError(f"basis has {R.shape[0]} rows, expected {self.size}")
        return lambda xc: R.T @ self.apply(R @ xc)

    def assemble_block(self, dofs) -> np.ndarray:
        """Dense principal submatrix ``A[dofs][:, dofs]``, probing only the
        blocks adjacent to ``dofs``."""
        dofs = np.asarray(dofs, dtype=np.int64)
        if dofs.size == 0:
            raise ValueError("empty DOF set")
        blocks = sorted({b for d in dofs for b in self.dof_blocks[d]})
        E = np.zeros((self.size, len(dofs)))
        E[dofs, np.arange(len(dofs))] = 1.0
        return self.apply(E, blocks=blocks)[dofs]

    def dense(self) -> np.ndarray:
        return self.assemble_block(np.arange(self.size))

    def recover(self, xi, source) -> GlobalSolution:
        """Recombine source and mortar parts block by block."""
        geom = self.geom
        xi = np.asarray(xi, dtype=float)
        f = np.asarray(getattr(source, "values", source), dtype=float)
        flux = np.zeros((geom.n_cells, 4))
        pressure = np.zeros(geom.n_cells)
        lam = np.zeros(geom.n_edges)

        def one(b):
            blk = self.blocks[b]
            trace = np.zeros(len(blk.boundary_dofs))
            m = self._masks[b]
            trace[m] = xi[blk.boundary_dofs[m]]
            return blk, blk.solve(f[blk.cells], trace)

        for blk, sol in self._map(one, range(geom.n_blocks)):
            flux[blk.cells] = sol.flux
            pressure[blk.cells] = sol.pressure
            lam[blk.edges] = sol.multipliers
        return GlobalSolution(flux, pressure, lam, geom.h)

    def solve_fine(self, source) -> tuple[np.ndarray, GlobalSolution]:
        """Direct solve of the full fine-mortar interface system."""
        xi = np.linalg.solve(self.dense(), self.rhs(source))
        return xi, self.recover(xi, source)

    def solve_coarse(self, R, source, g=None) -> tuple[np.ndarray, GlobalSolution]:
        """Galerkin solve on ``range(R)``; returns the prolonged mortar and the
        recovered fine fields."""
        R = R.toarray() if sp.issparse(R) else np.asarray(R, dtype=float)
        if g is None:
            g = self.rhs(source)
        xc = np.linalg.solve(self.galerkin(R), R.T @ g)
        xi = R @ xc
        return xi, self.recover(xi, source)


@dataclass(frozen=True)
class ErrorReport:
    e_u: float
    e_q: float


def error_metrics(coarse: GlobalSolution, fine: GlobalSolution, kappa) -> ErrorReport:
    """Relative L2 pressure error and relative kappa^-1 weighted flux error."""
    kappa = np.asarray(getattr(kappa, "values", kappa), dtype=float)
    if coarse.pressure.shape != fine.pressure.shape:
        raise ValueError("solutions live on different grids")
    u_norm = np.linalg.norm(fine.pressure)
    q_norm = flux_energy(fine.flux, kappa)
    if u_norm == 0.0 or q_norm == 0.0:
        raise ZeroDivisionError("reference solution is identically zero")
    e_u = np.linalg.norm(coarse.pressure - fine.pressure) / u_norm
    e_q = np.sqrt(flux_energy(coarse.flux - fine.flux, kappa) / q_norm)
    return ErrorReport(float(e_u), float(e_q))
