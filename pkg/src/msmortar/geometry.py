"""Two-level structured grid on the unit square.

Cells are numbered row-major from the bottom-left corner, ``c = j * nf + i``.
Edges are numbered horizontal-first:

* horizontal edge ``(i, j)`` (at ``y = j h``, spanning cell column ``i``)
  has index ``j * nf + i``;
* vertical edge ``(i, j)`` (at ``x = i h``, spanning cell row ``j``) has
  index ``nf * (nf + 1) + j * (nf + 1) + i``.

Interior coarse edges follow the same horizontal-then-vertical rule, and the
fine mortar degrees of freedom are numbered coarse edge by coarse edge,
``dof = coarse_edge * n + k`` with ``k`` running left-to-right / bottom-to-top.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

# local side slots of a cell, used by every cellwise array in the package
LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3
HORIZONTAL, VERTICAL = "h", "v"


class Rect(NamedTuple):
    """Half-open rectangle of fine cells ``[i0, i1) x [j0, j1)``."""

    i0: int
    i1: int
    j0: int
    j1: int

    @property
    def nx(self) -> int:
        return self.i1 - self.i0

    @property
    def ny(self) -> int:
        return self.j1 - self.j0

    def cells(self, nf: int) -> np.ndarray:
        jj, ii = np.meshgrid(np.arange(self.j0, self.j1), np.arange(self.i0, self.i1), indexing="ij")
        return (jj * nf + ii).ravel()

    def clip(self, nf: int) -> "Rect":
        return Rect(max(self.i0, 0), min(self.i1, nf), max(self.j0, 0), min(self.j1, nf))


@dataclass(frozen=True)
class OversampleSpec:
    """Extension counts (in fine cells) of a snapshot / local-solve domain.

    The first row applies to vertical coarse edges: ``d11`` is the extent
    normal to the edge on each side, ``d12`` the extension past each end.
    The second row applies to horizontal edges: ``d21`` extends past each
    end, ``d22`` is the normal extent on each side.
    """

    d11: int
    d12: int
    d21: int
    d22: int

    def __post_init__(self):
        for name in ("d11", "d12", "d21", "d22"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def domain_spec(domain: int, n: int) -> OversampleSpec:
    """The four local domains used by the experiments (1 = no oversampling)."""
    if domain == 1:
        return OversampleSpec(n, 0, 0, n)
    if domain == 2:
        return OversampleSpec(n, 1, 1, n)
    if domain == 3:
        return OversampleSpec(n // 2, 1, 1, n // 2)
    if domain == 4:
        return OversampleSpec(2, 1, 1, 2)
    raise ValueError(f"unknown domain {domain}; expected 1..4")


@dataclass(frozen=True)
class CoarseEdge:
    index: int
    orientation: str
    # (minus, plus) blocks: below/above for horizontal, left/right for vertical
    blocks: tuple[int, int]
    fine_edges: np.ndarray
    # position of the edge line in fine-cell units, and its first cell along it
    line: int
    start: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridGeometry:
    N: int
    n: int
    coarse_edges: tuple[CoarseEdge, ...] = field(repr=False)
    cell_edges: np.ndarray = field(repr=False)
    edge_cells: np.ndarray = field(repr=False)
    skeleton_edges: np.ndarray = field(repr=False)
    edge_to_dof: np.ndarray = field(repr=False)

    @property
    def nf(self) -> int:
        return self.N * self.n

    @property
    def H(self) -> float:
        return 1.0 / self.N

    @property
    def h(self) -> float:
        return 1.0 / self.nf

    @property
    def n_cells(self) -> int:
        return self.nf**2

    @property
    def n_edges(self) -> int:
        return 2 * self.nf * (self.nf + 1)

    @property
    def n_blocks(self) -> int:
        return self.N**2

    @property
    def n_coarse_edges(self) -> int:
        return len(self.coarse_edges)

    @property
    def n_mortar(self) -> int:
        """Number of fine mortar DOFs on the interior coarse skeleton."""
        return len(self.skeleton_edges)

    @property
    def n_fine_dofs(self) -> int:
        nf = self.nf
        return 5 * nf**2 + 2 * nf * (nf - 1)

    def multiscale_dofs(self, Nb: int) -> int:
        return Nb * self.n_coarse_edges

    def horizontal_edge(self, i, j):
        return np.asarray(j) * self.nf + np.asarray(i)

    def vertical_edge(self, i, j):
        nf = self.nf
        return nf * (nf + 1) + np.asarray(j) * (nf + 1) + np.asarray(i)

    def is_boundary_edge(self, e) -> np.ndarray:
        return (self.edge_cells[e] < 0).any(axis=-1)

    def block_rect(self, b: int) -> Rect:
        I, J = b % self.N, b // self.N
        n = self.n
        return Rect(I * n, (I + 1) * n, J * n, (J + 1) * n)

    def block_cells(self, b: int) -> np.ndarray:
        return self.block_rect(b).cells(self.nf)

    def rect_edges(self, rect: Rect) -> np.ndarray:
        """Global indices of every edge of ``rect``, in the rectangle's own
        horizontal-then-vertical numbering."""
        jh, ih = np.meshgrid(np.arange(rect.j0, rect.j1 + 1), np.arange(rect.i0, rect.i1), indexing="ij")
        jv, iv = np.meshgrid(np.arange(rect.j0, rect.j1), np.arange(rect.i0, rect.i1 + 1), indexing="ij")
        return np.concatenate([self.horizontal_edge(ih, jh).ravel(), self.vertical_edge(iv, jv).ravel()])

    def coarse_edge_dofs(self, ce: int) -> np.ndarray:
        return np.arange(ce * self.n, (ce + 1) * self.n)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.arange(self.n_cells)
        return (idx % self.nf + 0.5) * self.h, (idx // self.nf + 0.5) * self.h

    def encode_dof(self, ce: int, k: int) -> int:
        return ce * self.n + k

    def decode_dof(self, dof: int) -> tuple[int, int]:
        return divmod(int(dof), self.n)


def build_geometry(N: int, n: int) -> GridGeometry:
    """Build the ``N x N`` coarse / ``n x n`` per-block fine grid."""
    if N < 2 or n < 2:
        raise ValueError(f"need N >= 2 and n >= 2, got N={N}, n={n}")
    nf = N * n
    nh = nf * (nf + 1)

    ii, jj = np.meshgrid(np.arange(nf), np.arange(nf), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    cell_edges = np.empty((nf * nf, 4), dtype=np.int64)
    cell_edges[:, LEFT] = nh + jj * (nf + 1) + ii
    cell_edges[:, RIGHT] = nh + jj * (nf + 1) + ii + 1
    cell_edges[:, BOTTOM] = jj * nf + ii
    cell_edges[:, TOP] = (jj + 1) * nf + ii

    edge_cells = np.full((2 * nh, 2), -1, dtype=np.int64)
    cells = np.arange(nf * nf)
    edge_cells[cell_edges[:, TOP], 0] = cells
    edge_cells[cell_edges[:, BOTTOM], 1] = cells
    edge_cells[cell_edges[:, RIGHT], 0] = cells
    edge_cells[cell_edges[:, LEFT], 1] = cells

    coarse = []
    for J in range(1, N):
        for I in range(N):
            fine = (J * n) * nf + I * n + np.arange(n)
            coarse.append(CoarseEdge(len(coarse), HORIZONTAL, ((J - 1) * N + I, J * N + I), _readonly(fine), J * n, I * n))
    for J in range(N):
        for I in range(1, N):
            fine = nh + (J * n + np.arange(n)) * (nf + 1) + I * n
            coarse.append(CoarseEdge(len(coarse), VERTICAL, (J * N + I - 1, J * N + I), _readonly(fine), I * n, J * n))

    skeleton = np.concatenate([c.fine_edges for c in coarse])
    edge_to_dof = np.full(2 * nh, -1, dtype=np.int64)
    edge_to_dof[skeleton] = np.arange(len(skeleton))

    return GridGeometry(
        N=N,
        n=n,
        coarse_edges=tuple(coarse),
        cell_edges=_readonly(cell_edges),
        edge_cells=_readonly(edge_cells),
        skeleton_edges=_readonly(skeleton),
        edge_to_dof=_readonly(edge_to_dof),
    )


def oversample_rect(geom: GridGeometry, edge: int, spec: OversampleSpec) -> Rect:
    """Rectangle of the (possibly oversampled) neighbourhood of a coarse edge,
    clipped to the domain.  A zero normal extent is widened to one cell so the
    cells touching the edge are always included."""
    ce = geom.coarse_edges[edge]
    n = geom.n
    if ce.orientation == VERTICAL:
        normal, along = max(spec.d11, 1), spec.d12
        rect = Rect(ce.line - normal, ce.line + normal, ce.start - along, ce.start + n + along)
    else:
        along, normal = spec.d21, max(spec.d22, 1)
        rect = Rect(ce.start - along, ce.start + n + along, ce.line - normal, ce.line + normal)
    return rect.clip(geom.nf)


def oversample_region(geom: GridGeometry, edge: int, spec: OversampleSpec) -> np.ndarray:
    """Sorted fine-cell indices of the oversampled neighbourhood of ``edge``."""
    return oversample_rect(geom, edge, spec).cells(geom.nf)


def edge_skeleton_dofs(geom: GridGeometry, region) -> np.ndarray:
    """Fine mortar DOFs whose edge has cells of ``region`` on both sides."""
    inside = np.zeros(geom.n_cells, dtype=bool)
    inside[np.asarray(region, dtype=np.int64)] = True
    both = geom.edge_cells[geom.skeleton_edges]
    return np.flatnonzero(inside[both[:, 0]] & inside[both[:, 1]])
