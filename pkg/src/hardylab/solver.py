"""Nonlinear Dirichlet solves for Q_{p,A,V}(u) = g and the principal
eigenvalue via minimization of the Rayleigh quotient.

The Dirichlet solve is damped Newton on the discrete energy
J(u) = int (1/p)|grad u|_A^p + (1/p) V |u|^p - g u, with a Picard
(frozen-coefficient) fallback direction; p != 2 solves warm-start from
the p = 2 solution of the same data by default.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, ScalarField
from .operator import (OperatorError, ProblemSpec, apply_Q, load_vector,
                       residual_norm, _grad_norm_sq, _regularized_q)


class SolverError(RuntimeError):
    pass


class CriticalityWarningError(SolverError):
    """Raised when lambda_1 <= 0 is detected before a Dirichlet solve."""


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 60
    tol_residual: float = 1e-11
    damping: str = "line_search"   # or "fixed"
    alpha: float = 1.0
    init: str = "p2_warmstart"     # "zero" | "given" | "p2_warmstart"
    init_field: ScalarField | None = None
    check_lambda1: bool = False

    def __post_init__(self):
        if self.tol_residual <= 0:
            raise OperatorError("tol_residual must be positive")
        if not (0 < self.alpha <= 1):
            raise OperatorError("damping alpha must lie in (0, 1]")


@dataclass(frozen=True)
class SolveResult:
    u: ScalarField
    residual_norm: float
    iterations: int
    converged: bool
    diagnostics: list = field(default_factory=list, compare=False)


@dataclass(frozen=True)
class EigenResult:
    lambda1: float
    u1: ScalarField
    iterations: int
    converged: bool = True


def _assemble_hessian(spec: ProblemSpec, u: np.ndarray,
                      picard: bool = False) -> sp.csr_matrix:
    """Hessian of J at u (kinetic + potential parts), full node set."""
    mesh = spec.mesh
    p = spec.p
    f = ScalarField(mesh, u)
    g, q = _grad_norm_sq(spec, f)
    qr = _regularized_q(spec, q)
    coef = qr ** ((p - 2.0) / 2.0)
    G = mesh.cell_grad                     # (C, m, d)
    AG = np.einsum("cde,cme->cmd", spec.A.entries, G)
    K = np.einsum("cmd,cnd->cmn", G, AG) * coef[:, None, None]
    if not picard and p != 2.0:
        Agu = np.einsum("cde,ce->cd", spec.A.entries, g)
        b = np.einsum("cmd,cd->cm", G, Agu)
        K += ((p - 2.0) * coef / qr)[:, None, None] \
            * b[:, :, None] * b[:, None, :]
    nloc = mesh.cell_nodes.shape[1]
    ubar = f.cell_averages()
    vmass = (p - 1.0) * spec.V * np.abs(ubar) ** (p - 2.0)
    vmass = np.where(ubar == 0, 0.0, vmass) if p < 2 else vmass
    K += (vmass / nloc ** 2)[:, None, None] * np.ones((1, nloc, nloc))
    K *= mesh.cell_measures[:, None, None]
    rows = np.repeat(mesh.cell_nodes, nloc, axis=1).ravel()
    cols = np.tile(mesh.cell_nodes, (1, nloc)).ravel()
    H = sp.coo_matrix((K.ravel(), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes))
    return H.tocsr()


def _energy_J(spec: ProblemSpec, u: np.ndarray, load: np.ndarray) -> float:
    f = ScalarField(spec.mesh, u)
    _, q = _grad_norm_sq(spec, f)
    m = spec.mesh.cell_measures
    p = spec.p
    ubar = f.cell_averages()
    J = np.dot(q ** (p / 2.0), m) / p \
        + np.dot(spec.V * np.abs(ubar) ** p, m) / p
    return float(J - np.dot(load, u))


def dirichlet_solve(spec: ProblemSpec, g: ScalarField,
                    boundary_values=0.0,
                    opts: SolveOptions | None = None) -> SolveResult:
    """Solve Q_{p,A,V}(u) = g with Dirichlet data on the boundary nodes."""
    opts = opts or SolveOptions()
    mesh = spec.mesh
    if opts.check_lambda1:
        eig = principal_eigen(spec, SolveOptions(max_iters=300,
                                                 tol_residual=1e-8))
        if eig.lambda1 <= 0:
            raise CriticalityWarningError(
                f"lambda_1 = {eig.lambda1:.3e} <= 0: operator not "
                "subcritical on this mesh; refusing Dirichlet solve")

    interior = mesh.interior
    bvals = np.broadcast_to(np.asarray(boundary_values, dtype=float),
                            (int(mesh.boundary.sum()),))
    load = load_vector(spec, g)

    def make_u0():
        u = np.zeros(mesh.n_nodes)
        u[mesh.boundary] = bvals
        return u

    if opts.init == "given":
        if opts.init_field is None:
            raise OperatorError("init='given' requires init_field")
        u = opts.init_field.values.copy()
        u[mesh.boundary] = bvals
    elif opts.init == "p2_warmstart" and spec.p != 2.0:
        lin = replace(spec, p=2.0)
        res2 = dirichlet_solve(lin, g, boundary_values,
                               replace(opts, init="zero"))
        u = res2.u.values.copy()
    else:
        u = make_u0()

    diagnostics = []
    res = apply_Q(spec, ScalarField(mesh, u))
    r = res.values - load
    rnorm = float(np.sqrt(np.sum(r[interior] ** 2
                                 / mesh.lumped_measures()[interior])))
    J = _energy_J(spec, u, load)
    it = 0
    for it in range(1, opts.max_iters + 1):
        if rnorm <= opts.tol_residual:
            break
        for attempt in ("newton", "picard"):
            H = _assemble_hessian(spec, u, picard=(attempt == "picard"))
            Hii = H[interior][:, interior].tocsc()
            try:
                delta = spla.spsolve(Hii, r[interior])
            except RuntimeError:
                continue
            if not np.all(np.isfinite(delta)):
                continue
            step = opts.alpha
            accepted = False
            for _ in range(40):
                u_try = u.copy()
                u_try[interior] -= step * delta
                J_try = _energy_J(spec, u_try, load)
                if J_try <= J + 1e-14 * (1 + abs(J)):
                    accepted = True
                    break
                if opts.damping == "fixed":
                    break
                step *= 0.5
            if accepted:
                u = u_try
                J = J_try
                break
        else:
            break  # no descent direction found
        r = apply_Q(spec, ScalarField(mesh, u)).values - load
        rnorm = float(np.sqrt(np.sum(r[interior] ** 2
                                     / mesh.lumped_measures()[interior])))
        diagnostics.append({"iter": it, "residual": rnorm,
                            "energy": J, "step_size": step})

    converged = rnorm <= opts.tol_residual
    if not converged and opts.max_iters > 0 and spec.p != 2.0 \
            and rnorm > opts.tol_residual:
        pass  # caller inspects diagnostics
    return SolveResult(u=ScalarField(mesh, u), residual_norm=rnorm,
                       iterations=it, converged=converged,
                       diagnostics=diagnostics)


def _lp_norm_p(spec: ProblemSpec, u: np.ndarray) -> float:
    ubar = np.abs(ScalarField(spec.mesh, u).cell_averages())
    return float(np.dot(ubar ** spec.p, spec.mesh.cell_measures))


def _rayleigh(spec: ProblemSpec, u: np.ndarray) -> float:
    f = ScalarField(spec.mesh, u)
    _, q = _grad_norm_sq(spec, f)
    m = spec.mesh.cell_measures
    ubar = f.cell_averages()
    num = np.dot(q ** (spec.p / 2.0), m) \
        + np.dot(spec.V * np.abs(ubar) ** spec.p, m)
    return float(num / _lp_norm_p(spec, u))


def principal_eigen(spec: ProblemSpec,
                    opts: SolveOptions | None = None) -> EigenResult:
    """Minimize the Rayleigh quotient Q(u)/||u||_p^p by preconditioned
    projected gradient descent with L^p normalization; nonnegativity is
    enforced by |u| (same quotient)."""
    opts = opts or SolveOptions(max_iters=500, tol_residual=1e-10)
    mesh = spec.mesh
    interior = mesh.interior
    p = spec.p

    if opts.init == "given" and opts.init_field is not None:
        u = np.abs(opts.init_field.values.copy())
    else:
        # positive tent profile vanishing at the boundary
        coords = mesh.coordinates()
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        u = np.prod((coords - lo) * (hi - coords), axis=1)
    u[~interior] = 0.0
    u /= _lp_norm_p(spec, u) ** (1.0 / p)

    # preconditioner: p=2 stiffness + mass, factorized once
    lin = replace(spec, p=2.0, V=np.ones(mesh.n_cells))
    M = _assemble_hessian(lin, np.zeros(mesh.n_nodes))
    Mii = M[interior][:, interior].tocsc()
    solve_M = spla.factorized(Mii)

    lam = _rayleigh(spec, u)
    it = 0
    tol = opts.tol_residual
    converged = False
    for it in range(1, opts.max_iters + 1):
        f = ScalarField(mesh, u)
        rQ = apply_Q(spec, f).values
        ubar = f.cell_averages()
        dN = np.zeros(mesh.n_nodes)
        nloc = mesh.cell_nodes.shape[1]
        contrib = (np.abs(ubar) ** (p - 2.0) * ubar
                   * mesh.cell_measures)[:, None] / nloc
        contrib = np.where(ubar[:, None] == 0, 0.0, contrib)
        np.add.at(dN, mesh.cell_nodes,
                  np.broadcast_to(contrib, mesh.cell_nodes.shape))
        grad = p * (rQ - lam * dN)
        d = solve_M(grad[interior])
        step = 1.0
        lam_new = lam
        for _ in range(50):
            u_try = u.copy()
            u_try[interior] = np.abs(u[interior] - step * d)
            nrm = _lp_norm_p(spec, u_try)
            if nrm > 0:
                u_try /= nrm ** (1.0 / p)
                lam_try = _rayleigh(spec, u_try)
                if lam_try < lam:
                    u, lam_new = u_try, lam_try
                    break
            step *= 0.5
        if lam - lam_new <= tol * (1.0 + abs(lam)):
            lam = lam_new
            converged = True
            break
        lam = lam_new
    u /= _lp_norm_p(spec, u) ** (1.0 / p)
    return EigenResult(lambda1=lam, u1=ScalarField(mesh, u), iterations=it,
                       converged=converged)


def comparison_check(spec: ProblemSpec, pairs,
                     opts: SolveOptions | None = None,
                     tol: float = 1e-8):
    """Weak-comparison check: for data (g1, bc1) <= (g2, bc2) the solutions
    must satisfy u1 <= u2.  Returns (max_violation, per-pair table)."""
    opts = opts or SolveOptions()
    rows = []
    worst = 0.0
    for idx, (g1, bc1, g2, bc2) in enumerate(pairs):
        if np.any(g1.values > g2.values) or np.any(
                np.asarray(bc1) > np.asarray(bc2)):
            rows.append({"pair": idx, "valid": False, "violation": None})
            continue
        u1 = dirichlet_solve(spec, g1, bc1, opts).u.values
        u2 = dirichlet_solve(spec, g2, bc2, opts).u.values
        scale = max(np.abs(u2).max(), np.abs(u1).max(), 1e-300)
        viol = float((u1 - u2).max() / scale)
        worst = max(worst, viol)
        rows.append({"pair": idx, "valid": True, "violation": viol})
    return worst, rows
