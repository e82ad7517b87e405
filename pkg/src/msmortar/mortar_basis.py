"""Enriched mortar spaces on the coarse skeleton.

Per interior coarse edge the space is spanned by the constant followed by
``Nb - 1`` enrichment modes.  Multiscale enrichment comes from POD of the
edge traces of local harmonic solutions (snapshots); the baseline uses
Legendre polynomials.  All inner products are the discrete L2 product of the
edge, i.e. fine-edge-length weighted sums.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from numpy.polynomial import legendre

from .geometry import GridGeometry, OversampleSpec, Rect, domain_spec, oversample_rect
from .local_mixed import HybridRect

log = logging.getLogger(__name__)

# snapshot case -> (local domain, randomized?)
CASES = {1: (1, False), 2: (2, False), 3: (3, False), 4: (2, True)}
BASIS_TYPES = ("polynomial", "case1", "case2", "case3", "case4")

RANK_TOL = 1e-12
DROP_TOL = 1e-10


class BasisError(ValueError):
    pass


def edge_weights(geom: GridGeometry) -> np.ndarray:
    return np.full(geom.n, geom.h)


def constant_mode(geom: GridGeometry) -> np.ndarray:
    return np.full(geom.n, 1.0 / np.sqrt(geom.n * geom.h))


@dataclass
class SnapshotSet:
    edge: int
    traces: np.ndarray
    provenance: tuple
    domain: Rect
    # columns with no harmonic influence on the edge beyond a constant
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def count(self) -> int:
        return self.traces.shape[1]


@dataclass
class PODModes:
    modes: np.ndarray
    eigenvalues: np.ndarray


class _EdgeRegion:
    """Local Dirichlet solver on a rectangle around one coarse edge."""

    def __init__(self, geom: GridGeometry, kappa: np.ndarray, edge: int, rect: Rect):
        self.rect = rect
        self.solver = HybridRect(np.asarray(kappa)[rect.cells(geom.nf)], rect.nx, rect.ny, geom.h)
        local = geom.rect_edges(rect)
        pos = {int(e): k for k, e in enumerate(local)}
        try:
            self.trace_index = np.array([pos[int(e)] for e in geom.coarse_edges[edge].fine_edges])
        except KeyError:
            raise BasisError(f"domain {rect} does not contain coarse edge {edge}") from None
        if (self.solver.edge_cells[self.trace_index] < 0).any():
            raise BasisError(f"coarse edge {edge} lies on the boundary of {rect}")

    @property
    def n_boundary(self) -> int:
        return len(self.solver.boundary)

    def traces(self, boundary_data: np.ndarray) -> np.ndarray:
        return self.solver.solve(None, boundary_data).multipliers[self.trace_index]


def _as_rect(geom: GridGeometry, domain) -> Rect:
    if isinstance(domain, Rect):
        return domain
    cells = np.unique(np.asarray(domain, dtype=np.int64))
    i, j = cells % geom.nf, cells // geom.nf
    rect = Rect(int(i.min()), int(i.max()) + 1, int(j.min()), int(j.max()) + 1)
    if rect.nx * rect.ny != len(cells):
        raise BasisError("snapshot domain must be a rectangle of cells")
    return rect


def harmonic_snapshot(geom: GridGeometry, kappa, edge: int, domain, mode: int) -> np.ndarray:
    """Edge trace of the local harmonic solution with unit multiplier on the
    ``mode``-th boundary fine edge of ``domain`` and zero on the others."""
    region = _EdgeRegion(geom, getattr(kappa, "values", kappa), edge, _as_rect(geom, domain))
    if not 0 <= mode < region.n_boundary:
        raise IndexError(f"mode {mode} out of range for {region.n_boundary} boundary edges")
    w = np.zeros(region.n_boundary)
    w[mode] = 1.0
    return region.traces(w)


def random_boundary_data(n_boundary: int, count: int, seed: int, edge: int) -> np.ndarray:
    """Uniform(-1, 1) boundary vectors, one stream per (seed, edge, snapshot)."""
    cols = [
        np.random.default_rng(np.random.SeedSequence([seed, edge, j])).uniform(-1.0, 1.0, n_boundary)
        for j in range(count)
    ]
    return np.column_stack(cols)


def remove_constant(traces: np.ndarray, weights: np.ndarray) -> np.ndarray:
    mean = weights @ traces / weights.sum()
    return traces - mean


def snapshot_space(geom: GridGeometry, kappa, edge: int, case: int, seed: int = 0) -> SnapshotSet:
    if case not in CASES:
        raise BasisError(f"unknown snapshot case {case}; expected 1..4")
    domain, randomized = CASES[case]
    rect = oversample_rect(geom, edge, domain_spec(domain, geom.n))
    region = _EdgeRegion(geom, getattr(kappa, "values", kappa), edge, rect)
    if randomized:
        count = geom.n + 2
        data = random_boundary_data(region.n_boundary, count, seed, edge)
        provenance: tuple = ("randomized", count, seed)
    else:
        data = np.eye(region.n_boundary)
        provenance = ("full",)
    traces = region.traces(data)
    w = edge_weights(geom)
    norms = np.sqrt(w @ remove_constant(traces, w) ** 2)
    flagged = np.flatnonzero(norms <= RANK_TOL * max(norms.max(), np.finfo(float).tiny))
    return SnapshotSet(edge, traces, provenance, rect, flagged)


def pod(traces: np.ndarray, weights: np.ndarray) -> PODModes:
    """All POD modes of the columns of ``traces`` in the weighted product.

    Modes are eigenvectors of the correlation operator
    ``v -> sum_j psi_j (psi_j, v)_W``, normalized in the W-norm, sorted by
    descending eigenvalue, with the first significant entry made positive.
    """
    sw = np.sqrt(weights)
    B = sw[:, None] * traces
    vals, vecs = la.eigh(B @ B.T)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    modes = vecs / sw[:, None]
    for k in range(modes.shape[1]):
        col = modes[:, k]
        lead = np.flatnonzero(np.abs(col) > 1e-8 * np.abs(col).max())[0]
        if col[lead] < 0:
            modes[:, k] = -col
    return PODModes(modes, vals)


def pod_reduce(snap, l: int, weights: np.ndarray | None = None) -> PODModes:
    """The ``l`` dominant POD modes; raises if ``l`` exceeds the numerical rank."""
    traces = snap.traces if isinstance(snap, SnapshotSet) else np.asarray(snap, dtype=float)
    if weights is None:
        weights = np.ones(traces.shape[0])
    res = pod(traces, weights)
    rank = int(np.sum(res.eigenvalues > RANK_TOL * res.eigenvalues[0])) if res.eigenvalues[0] > 0 else 0
    if l > rank:
        raise BasisError(f"requested {l} modes but the snapshots have numerical rank {rank}")
    return PODModes(res.modes[:, :l], res.eigenvalues)


def enrichment_modes(geom: GridGeometry, snap: SnapshotSet, count: int) -> np.ndarray:
    """Up to ``count`` dominant POD modes of the snapshots with the constant
    component removed (fewer if the snapshot rank is smaller)."""
    w = edge_weights(geom)
    res = pod(remove_constant(snap.traces, w), w)
    if res.eigenvalues[0] <= 0:
        return np.zeros((geom.n, 0))
    rank = int(np.sum(res.eigenvalues > RANK_TOL * res.eigenvalues[0]))
    return res.modes[:, :min(count, rank)]


def polynomial_basis(geom: GridGeometry, edge: int, Nb: int) -> np.ndarray:
    """Legendre polynomials of degree < Nb as fine-edge averages,
    orthonormalized on the edge."""
    n = geom.n
    if not 1 <= Nb <= n:
        raise BasisError(f"polynomial basis needs 1 <= Nb <= n, got {Nb}")
    t = np.linspace(-1.0, 1.0, n + 1)
    cols = []
    for d in range(Nb):
        antider = legendre.Legendre.basis(d).integ()
        cols.append((antider(t[1:]) - antider(t[:-1])) / np.diff(t))
    modes, dropped = _orthonormalize(np.column_stack(cols), edge_weights(geom), Nb)
    return modes


def _orthonormalize(candidates: np.ndarray, weights: np.ndarray, count: int, start=None):
    """Gram-Schmidt (twice) in the weighted product; returns the first
    ``count`` accepted vectors and the indices of dropped candidates."""
    basis = [] if start is None else [c for c in start.T]
    dropped = []
    for k in range(candidates.shape[1]):
        if len(basis) >= count:
            break
        v = candidates[:, k].astype(float)
        ref = np.sqrt(weights @ v**2)
        for _ in range(2):
            for u in basis:
                v = v - (weights @ (u * v)) * u
        nrm = np.sqrt(weights @ v**2)
        if ref == 0.0 or nrm < DROP_TOL * ref:
            dropped.append(k)
            continue
        basis.append(v / nrm)
    return np.column_stack(basis), dropped


@dataclass
class MortarBasis:
    """Per-edge orthonormal modes and the prolongation into the fine mortar
    space (block diagonal, one block of columns per coarse edge)."""

    modes: list
    R: sp.csr_matrix
    dropped: dict = field(default_factory=dict)

    @property
    def n_coarse(self) -> int:
        return self.R.shape[1]

    def export(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for ce, m in enumerate(self.modes):
            p = directory / f"edge_{ce:04d}.txt"
            np.savetxt(p, m, fmt="%.12e", header=f"{m.shape[0]} {m.shape[1]}", comments="")
            paths.append(p)
        return paths


def build_mortar_basis(geom: GridGeometry, edge_modes, Nb: int) -> MortarBasis:
    """Constant plus the first ``Nb - 1`` supplied modes on every edge,
    orthonormalized; near-dependent modes are dropped and replaced by the
    next supplied one."""
    if Nb < 1:
        raise BasisError("Nb must be at least 1")
    edge_modes = list(edge_modes)
    if len(edge_modes) != geom.n_coarse_edges:
        raise BasisError(f"got modes for {len(edge_modes)} edges, grid has {geom.n_coarse_edges}")
    w = edge_weights(geom)
    const = constant_mode(geom)[:, None]
    per_edge, dropped = [], {}
    for ce, cand in enumerate(edge_modes):
        cand = np.zeros((geom.n, 0)) if cand is None else np.asarray(cand, dtype=float).reshape(geom.n, -1)
        modes, drop = _orthonormalize(cand, w, Nb, start=const)
        if modes.shape[1] < Nb:
            raise BasisError(f"edge {ce}: only {modes.shape[1]} independent modes, need {Nb}")
        if drop:
            dropped[ce] = drop
            log.info("edge %d: dropped dependent modes %s", ce, drop)
        per_edge.append(modes)
    rows, cols, vals = [], [], []
    col0 = 0
    for ce, m in enumerate(per_edge):
        r, c = np.meshgrid(geom.coarse_edge_dofs(ce), np.arange(m.shape[1]) + col0, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(m.ravel())
        col0 += m.shape[1]
    R = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(geom.n_mortar, col0))
    return MortarBasis(per_edge, R, dropped)


def multiscale_edge_modes(geom: GridGeometry, kappa, case: int, count: int, seed: int = 0) -> list[np.ndarray]:
    """Enrichment candidates for every edge (computed once, sliced per Nb)."""
    return [enrichment_modes(geom, snapshot_space(geom, kappa, ce, case, seed), count) for ce in range(geom.n_coarse_edges)]


def polynomial_edge_modes(geom: GridGeometry, Nb: int) -> list[np.ndarray]:
    return [polynomial_basis(geom, ce, Nb)[:, 1:] for ce in range(geom.n_coarse_edges)]


def basis_for(geom: GridGeometry, kappa, basis_type: str, Nb: int, seed: int = 0) -> MortarBasis:
    """Build a mortar basis by name (``polynomial`` or ``case1`` .. ``case4``)."""
    if basis_type == "polynomial":
        return build_mortar_basis(geom, polynomial_edge_modes(geom, Nb), Nb)
    if basis_type.startswith("case") and basis_type[4:].isdigit():
        return build_mortar_basis(geom, multiscale_edge_modes(geom, kappa, int(basis_type[4:]), geom.n, seed), Nb)
    raise BasisError(f"unknown basis type {basis_type!r}; choose from {BASIS_TYPES}")


def full_basis(geom: GridGeometry) -> sp.csr_matrix:
    """Identity prolongation: the fine mortar space itself."""
    return sp.identity(geom.n_mortar, format="csr")
