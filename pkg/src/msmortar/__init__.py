"""Multiscale mortar mixed finite elements for Darcy flow on the unit square.

Lowest-order hybridized Raviart-Thomas elements on a uniform fine grid,
a non-overlapping decomposition into square coarse blocks glued by mortar
multipliers, multiscale mortar spaces built from local snapshots and POD,
and two-level Schwarz preconditioners for the interface problem.
"""

from .geometry import GridGeometry, OversampleSpec, build_geometry, domain_spec
from .interface import ErrorReport, InterfaceOperator, error_metrics
from .local_mixed import GlobalSolution, monolithic_fine_solve
from .mortar_basis import MortarBasis, basis_for, full_basis
from .solvers import (
    CoarsePreconditioner,
    KrylovReport,
    LocalPreconditioner,
    TwoLevelPreconditioner,
    gmres_restarted,
    pcg,
)

__version__ = "0.1.0"

__all__ = [
    "CoarsePreconditioner",
    "ErrorReport",
    "GlobalSolution",
    "GridGeometry",
    "InterfaceOperator",
    "KrylovReport",
    "LocalPreconditioner",
    "MortarBasis",
    "OversampleSpec",
    "TwoLevelPreconditioner",
    "basis_for",
    "build_geometry",
    "domain_spec",
    "error_metrics",
    "full_basis",
    "gmres_restarted",
    "monolithic_fine_solve",
    "pcg",
]
