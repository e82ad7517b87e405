"""Krylov solvers and two-level Schwarz preconditioners for the interface
problem.

Operators and preconditioners are plain callables ``v -> w`` on fine mortar
vectors.  Residuals are measured in the Euclidean norm relative to the
initial residual; the initial guess is always zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .geometry import OversampleSpec, domain_spec, edge_skeleton_dofs, oversample_region
from .interface import InterfaceOperator

log = logging.getLogger(__name__)


class KrylovBreakdown(ArithmeticError):
    pass


def _as_apply(op):
    if op is None:
        return lambda v: v.copy()
    if callable(op):
        return op
    return lambda v: op @ v


@dataclass
class KrylovReport:
    method: str
    iterations: int = 0
    residual_history: list = field(default_factory=lambda: [1.0])
    converged: bool = False
    inner_iterations: int = 0
    stagnated: bool = False
    true_residual: float = float("nan")


def pcg(A, M, b, tol: float = 1e-7, maxit: int = 500):
    """Preconditioned conjugate gradients.  Stops when ``|r_k| <= tol |b|``."""
    A, M = _as_apply(A), _as_apply(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    report = KrylovReport("PCG")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        report.converged = True
        return x, report
    r = b.copy()
    z = M(r)
    rz = r @ z
    if rz <= 0:
        raise KrylovBreakdown("preconditioner is not positive definite")
    p = z.copy()
    for k in range(1, maxit + 1):
        Ap = A(p)
        curv = p @ Ap
        if curv <= 0:
            raise KrylovBreakdown(f"nonpositive curvature {curv:.3e} at iteration {k}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bnorm
        report.residual_history.append(rel)
        report.iterations = k
        if rel <= tol:
            report.converged = True
            break
        z = M(r)
        rz_new = r @ z
        if rz_new <= 0:
            raise KrylovBreakdown("preconditioner is not positive definite")
        p = z + (rz_new / rz) * p
        rz = rz_new
    report.inner_iterations = report.iterations
    return x, report


def gmres_restarted(A, M, b, m: int = 2, tol: float = 1e-7, maxit: int = 500, side: str = "left"):
    """Restarted GMRES(m), left- or right-preconditioned.

    With ``side="left"`` the method runs on ``M A x = M b`` and the
    stopping test uses the preconditioned residual.  Left is the default:
    with restrictive local solves the Euclidean field of values of ``A M``
    typically contains the origin and small restarts stall, while ``M A``
    behaves well.

    ``report.iterations`` counts restart cycles (outer iterations), the last
    one possibly partial; ``inner_iterations`` counts Arnoldi steps.
    ``residual_history`` holds the relative residual after every inner step;
    ``true_residual`` is ``|b - A x| / |b|`` at exit.
    """
    if side not in ("left", "right"):
        raise ValueError(f"unknown preconditioning side {side!r}")
    A_true, M = _as_apply(A), _as_apply(M)
    b_true = np.asarray(b, dtype=float)
    if side == "left":
        Ml = M
        A = lambda v: Ml(A_true(v))
        b = Ml(b_true)
        M = _as_apply(None)
    else:
        A, b = A_true, b_true
    x = np.zeros_like(b)
    report = KrylovReport(f"GMRES({m})")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        report.converged = True
        report.true_residual = 0.0
        return x, report
    r = b.copy()
    beta = bnorm
    for cycle in range(1, maxit + 1):
        report.iterations = cycle
        V = np.zeros((m + 1, b.size))
        Z = np.zeros((m, b.size))
        Hm = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        s = np.zeros(m + 1)
        s[0] = beta
        V[0] = r / beta
        start = beta
        j_done = 0
        for j in range(m):
            Z[j] = M(V[j])
            w = A(Z[j])
            for i in range(j + 1):
                Hm[i, j] = w @ V[i]
                w -= Hm[i, j] * V[i]
            hn = np.linalg.norm(w)
            Hm[j + 1, j] = hn
            for i in range(j):
                t = cs[i] * Hm[i, j] + sn[i] * Hm[i + 1, j]
                Hm[i + 1, j] = -sn[i] * Hm[i, j] + cs[i] * Hm[i + 1, j]
                Hm[i, j] = t
            denom = np.hypot(Hm[j, j], Hm[j + 1, j])
            if denom == 0.0:
                raise KrylovBreakdown("GMRES breakdown: singular Hessenberg column")
            cs[j], sn[j] = Hm[j, j] / denom, Hm[j + 1, j] / denom
            Hm[j, j] = denom
            Hm[j + 1, j] = 0.0
            s[j + 1] = -sn[j] * s[j]
            s[j] = cs[j] * s[j]
            j_done = j + 1
            report.inner_iterations += 1
            rel = abs(s[j + 1]) / bnorm
            report.residual_history.append(rel)
            if rel <= tol or hn <= 1e-14 * start:
                break
            V[j + 1] = w / hn
        y = la.solve_triangular(Hm[:j_done, :j_done], s[:j_done])
        x += Z[:j_done].T @ y
        r = b - A(x)
        beta = np.linalg.norm(r)
        report.residual_history[-1] = beta / bnorm
        if beta / bnorm <= tol:
            report.converged = True
            break
        if (start - beta) <= 1e-14 * start:
            report.stagnated = True
            log.warning("GMRES(%d) stagnated after %d cycles", m, cycle)
            break
    tn = np.linalg.norm(b_true)
    report.true_residual = float(np.linalg.norm(b_true - A_true(x)) / tn) if tn > 0 else 0.0
    return x, report


def _dense(R):
    return R.toarray() if sp.issparse(R) else np.asarray(R, dtype=float)


class CoarsePreconditioner:
    """``r -> R0 A0^{-1} R0^T r`` with ``A0 = R0^T A R0`` factorized once."""

    def __init__(self, op: InterfaceOperator, R):
        self.R = _dense(R)
        self.A0 = op.galerkin(self.R)
        self.A0 = 0.5 * (self.A0 + self.A0.T)
        try:
            self._chol = la.cho_factor(self.A0)
        except la.LinAlgError:
            raise la.LinAlgError("coarse matrix is not positive definite (dependent basis columns?)") from None

    @property
    def n_coarse(self) -> int:
        return self.R.shape[1]

    def __call__(self, r):
        return self.R @ la.cho_solve(self._chol, self.R.T @ r)


class LocalPreconditioner:
    """Edgewise block solves ``sum_i R_i^T A_i^{-1} P_i``.

    ``A_i`` is the interface block on the skeleton DOFs inside the local
    domain of edge ``i`` (``E_i^+``); the result is kept only on the edge's
    own DOFs ``E_i``.  With the plain neighbourhood (domain 1) both sets
    coincide and the preconditioner is symmetric.
    """

    def __init__(self, op: InterfaceOperator, spec: OversampleSpec | int = 1):
        geom = op.geom
        if isinstance(spec, int):
            spec = domain_spec(spec, geom.n)
        self.spec = spec
        self.size = op.size
        self.solve_sets, self.gather_sets, self.factors, self.positions = [], [], [], []
        self.restrictive = False
        for ce in range(geom.n_coarse_edges):
            own = geom.coarse_edge_dofs(ce)
            gather = edge_skeleton_dofs(geom, oversample_region(geom, ce, spec))
            if not np.all(np.isin(own, gather)):
                raise ValueError(f"local domain of edge {ce} does not contain the edge")
            Ai = op.assemble_block(gather)
            self.factors.append(la.cho_factor(0.5 * (Ai + Ai.T)))
            self.solve_sets.append(own)
            self.gather_sets.append(gather)
            self.positions.append(np.searchsorted(gather, own))
            self.restrictive |= len(gather) != len(own)

    @property
    def symmetric(self) -> bool:
        return not self.restrictive

    def __call__(self, r):
        out = np.zeros(self.size)
        for own, gather, fac, pos in zip(self.solve_sets, self.gather_sets, self.factors, self.positions):
            out[own] += la.cho_solve(fac, r[gather])[pos]
        return out

    def dense(self) -> np.ndarray:
        """Explicit matrix of the preconditioner (small instances only)."""
        return np.column_stack([self(e) for e in np.eye(self.size)])


COMPOSITIONS = ("additive", "hybrid")


class TwoLevelPreconditioner:
    """Additive ``B0 + Bloc`` or hybrid ``B0 + (I - P0) Bloc (I - P0^T)``
    with ``P0 = B0 A``.  ``hybrid_form="literal"`` instead evaluates
    ``B0 + (I - B0) Bloc (I - B0^T)`` as the formula is sometimes printed."""

    def __init__(self, op, coarse: CoarsePreconditioner, local: LocalPreconditioner, composition: str = "additive", hybrid_form: str = "standard"):
        if composition not in COMPOSITIONS:
            raise ValueError(f"unknown composition {composition!r}")
        if hybrid_form not in ("standard", "literal"):
            raise ValueError(f"unknown hybrid form {hybrid_form!r}")
        self.op, self.coarse, self.local = op, coarse, local
        self.composition, self.hybrid_form = composition, hybrid_form

    @property
    def symmetric(self) -> bool:
        return self.local.symmetric

    def __call__(self, r):
        if self.composition == "additive":
            return additive_apply(self.coarse, self.local, r)
        return hybrid_apply(self.coarse, self.local, self.op, r, form=self.hybrid_form)


def coarse_apply(cp: CoarsePreconditioner, r):
    return cp(r)


def local_apply(lp: LocalPreconditioner, r):
    return lp(r)


def additive_apply(cp: CoarsePreconditioner, lp: LocalPreconditioner, r):
    return cp(r) + lp(r)


def hybrid_apply(cp: CoarsePreconditioner, lp: LocalPreconditioner, A, r, form: str = "standard"):
    A = _as_apply(A)
    z0 = cp(r)
    if form == "literal":
        z1 = lp(r - cp(r))
        return z0 + z1 - cp(z1)
    z1 = lp(r - A(z0))
    return z0 + z1 - cp(A(z1))
