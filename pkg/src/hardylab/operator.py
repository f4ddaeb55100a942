"""The energy functional of Q_{p,A,V}, its simplified form, and the
pointwise algebra (|.|_A, c_p, weak residuals over nodal hat functions)."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import Mesh, MeshError, ScalarField, gradient


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class MatrixField:
    """Per-cell symmetric positive definite matrix A(x) (1x1 or 2x2)."""
    mesh: Mesh
    entries: np.ndarray  # (C, d, d)
    theta_min: float = field(init=False)

    def __post_init__(self):
        d = self.mesh.dim
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (self.mesh.n_cells, d, d):
            raise OperatorError("one d x d matrix per cell required")
        if not np.allclose(e, np.swapaxes(e, 1, 2), rtol=0, atol=0):
            raise OperatorError("matrix field must be exactly symmetric")
        eig = np.linalg.eigvalsh(e)
        if eig.min() <= 0:
            raise OperatorError("matrix field must be positive definite")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "theta_min", float(eig.min()))

    @classmethod
    def identity(cls, mesh: Mesh) -> "MatrixField":
        d = mesh.dim
        e = np.broadcast_to(np.eye(d), (mesh.n_cells, d, d)).copy()
        return cls(mesh, e)

    @classmethod
    def diagonal(cls, mesh: Mesh, *diag: float) -> "MatrixField":
        d = mesh.dim
        if len(diag) != d:
            raise OperatorError(f"expected {d} diagonal entries")
        e = np.broadcast_to(np.diag(diag), (mesh.n_cells, d, d)).copy()
        return cls(mesh, e)

    @classmethod
    def rotated_diagonal(cls, mesh: Mesh, a: float, b: float,
                         theta: float) -> "MatrixField":
        """R(theta) diag(a, b) R(theta)^T on a 2D mesh."""
        if mesh.dim != 2:
            raise OperatorError("rotated diagonal requires a 2D mesh")
        c, s = np.cos(theta), np.sin(theta)
        R = np.array([[c, -s], [s, c]])
        m = R @ np.diag([a, b]) @ R.T
        m = 0.5 * (m + m.T)
        e = np.broadcast_to(m, (mesh.n_cells, 2, 2)).copy()
        return cls(mesh, e)

    def at_nodes(self) -> np.ndarray:
        """Nodal matrices by averaging adjacent cells (exact for constant A)."""
        mesh = self.mesh
        acc = np.zeros((mesh.n_nodes, mesh.dim, mesh.dim))
        cnt = np.zeros(mesh.n_nodes)
        m = mesh.cell_nodes.shape[1]
        for loc in range(m):
            np.add.at(acc, mesh.cell_nodes[:, loc], self.entries)
            np.add.at(cnt, mesh.cell_nodes[:, loc], 1.0)
        return acc / cnt[:, None, None]


def norm_A(vectors: np.ndarray, A: np.ndarray, p: float | None = None
           ) -> np.ndarray | float:
    """|xi|_A = sqrt(<A xi, xi>); vectorized over leading axes.

    The p argument is accepted for signature uniformity with the energy
    quadratures but does not change the value.
    """
    vectors = np.asarray(vectors, dtype=float)
    A = np.asarray(A, dtype=float)
    if vectors.ndim == 1:
        q = float(vectors @ A @ vectors)
        if q < 0:
            raise OperatorError("quadratic form negative: A is not SPD")
        return float(np.sqrt(q))
    q = np.einsum("cd,cde,ce->c", vectors, A, vectors)
    if q.min() < 0:
        raise OperatorError("quadratic form negative: A is not SPD")
    return np.sqrt(q)


def c_p(p: float) -> float:
    """(p/(p-1))^{p-1}; the potential divisor of the main construction."""
    if p <= 1:
        raise OperatorError("p must exceed 1")
    return (p / (p - 1.0)) ** (p - 1.0)


@dataclass(frozen=True)
class ProblemSpec:
    """(p, mesh, A, V) defining Q_{p,A,V}; V is piecewise constant per cell."""
    p: float
    n_dim: int
    mesh: Mesh
    A: MatrixField
    V: np.ndarray  # per-cell values
    eps_reg: float = 1e-10

    def __post_init__(self):
        if self.p <= 1:
            raise OperatorError("p must exceed 1")
        if self.n_dim != self.mesh.n_dim:
            raise OperatorError("n_dim must match the mesh")
        V = np.asarray(self.V, dtype=float)
        if V.shape != (self.mesh.n_cells,):
            raise OperatorError("one potential value per cell required")
        if not np.all(np.isfinite(V)):
            raise OperatorError("potential must be finite")
        if self.A.mesh is not self.mesh:
            raise OperatorError("A must live on the same mesh")
        if self.eps_reg < 0:
            raise OperatorError("eps_reg must be nonnegative")
        object.__setattr__(self, "V", V)

    def with_potential(self, V: np.ndarray) -> "ProblemSpec":
        return replace(self, V=V)


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential

    def to_dict(self, p: float | None = None, mesh_id: str = "") -> dict:
        return {"kinetic": self.kinetic, "potential": self.potential,
                "total": self.total, "p": p, "mesh_id": mesh_id}


def _check_boundary_zero(phi: ScalarField):
    if np.any(phi.values[phi.mesh.boundary] != 0.0):
        raise OperatorError("test function must vanish on boundary nodes")


def _grad_norm_sq(spec: ProblemSpec, f: ScalarField) -> tuple:
    g = gradient(f).vectors
    q = np.einsum("cd,cde,ce->c", g, spec.A.entries, g)
    return g, q


def energy(spec: ProblemSpec, phi: ScalarField) -> EnergyBreakdown:
    """Cellwise quadrature of |grad phi|_A^p + V |phi|^p."""
    if phi.mesh is not spec.mesh:
        raise OperatorError("field and spec must share a mesh")
    _check_boundary_zero(phi)
    _, q = _grad_norm_sq(spec, phi)
    m = spec.mesh.cell_measures
    kinetic = float(np.dot(q ** (spec.p / 2.0), m))
    pbar = phi.cell_averages()
    potential = float(np.dot(spec.V * np.abs(pbar) ** spec.p, m))
    return EnergyBreakdown(kinetic=kinetic, potential=potential)


def energy_sim(spec: ProblemSpec, v: ScalarField, w: ScalarField) -> float:
    """Simplified energy: integral of v^2 |grad w|_A^2
    (w |grad v|_A + v |grad w|_A)^{p-2}."""
    if np.any(v.values[spec.mesh.interior] <= 0) or np.any(v.values < 0):
        raise OperatorError("v must be positive on interior nodes and "
                            "nonnegative on the boundary")
    _, qv = _grad_norm_sq(spec, v)
    _, qw = _grad_norm_sq(spec, w)
    nv, nw = np.sqrt(qv), np.sqrt(qw)
    vbar, wbar = v.cell_averages(), w.cell_averages()
    base = wbar * nv + vbar * nw
    scale = base.max() if base.size else 0.0
    if spec.p < 2:
        base = np.sqrt(base ** 2 + (spec.eps_reg * scale) ** 2)
    integrand = vbar ** 2 * qw * base ** (spec.p - 2.0)
    # where grad w vanishes the integrand vanishes regardless of the exponent
    integrand = np.where(qw == 0, 0.0, integrand)
    return float(np.dot(integrand, spec.mesh.cell_measures))


def X_functional(spec: ProblemSpec, v: ScalarField, w: ScalarField) -> float:
    """X(w) = integral of v^p |grad w|_A^p."""
    if np.any(v.values[spec.mesh.interior] <= 0) or np.any(v.values < 0):
        raise OperatorError("v must be positive on interior nodes and "
                            "nonnegative on the boundary")
    _, qw = _grad_norm_sq(spec, w)
    vbar = v.cell_averages()
    return float(np.dot(vbar ** spec.p * qw ** (spec.p / 2.0),
                        spec.mesh.cell_measures))


def Y_functional(spec: ProblemSpec, v: ScalarField, w: ScalarField) -> float:
    """Y(w) = integral of |w|^p |grad v|_A^p."""
    if np.any(v.values[spec.mesh.interior] <= 0) or np.any(v.values < 0):
        raise OperatorError("v must be positive on interior nodes and "
                            "nonnegative on the boundary")
    _, qv = _grad_norm_sq(spec, v)
    wbar = w.cell_averages()
    return float(np.dot(np.abs(wbar) ** spec.p * qv ** (spec.p / 2.0),
                        spec.mesh.cell_measures))


def _regularized_q(spec: ProblemSpec, q: np.ndarray) -> np.ndarray:
    scale = np.sqrt(q.max()) if q.size else 0.0
    return q + (spec.eps_reg * scale) ** 2


def apply_Q(spec: ProblemSpec, u: ScalarField) -> ScalarField:
    """Discrete weak residual of Q_{p,A,V} at u over nodal hat functions.

    Residual r_i = int |grad u|_A^{p-2} A grad u . grad chi_i
                 + int V |u|^{p-2} u chi_i, one value per node (boundary
    rows carry the one-sided assembly and are usually masked by callers).
    """
    if u.mesh is not spec.mesh:
        raise OperatorError("field and spec must share a mesh")
    mesh = spec.mesh
    g, q = _grad_norm_sq(spec, u)
    qr = _regularized_q(spec, q)
    coef = qr ** ((spec.p - 2.0) / 2.0)
    flux = coef[:, None] * np.einsum("cde,ce->cd", spec.A.entries, g)
    m = mesh.cell_measures
    ubar = u.cell_averages()
    vterm = spec.V * np.abs(ubar) ** (spec.p - 2.0) * ubar
    vterm = np.where(ubar == 0, 0.0, vterm)
    nloc = mesh.cell_nodes.shape[1]
    contrib = (np.einsum("cd,cmd->cm", flux, mesh.cell_grad)
               + vterm[:, None] / nloc) * m[:, None]
    r = np.zeros(mesh.n_nodes)
    np.add.at(r, mesh.cell_nodes, contrib)
    return ScalarField(mesh, r)


def load_vector(spec: ProblemSpec, g: ScalarField) -> np.ndarray:
    """Quadrature of g . chi_i from nodal data (cell averages)."""
    mesh = spec.mesh
    gbar = g.cell_averages()
    nloc = mesh.cell_nodes.shape[1]
    contrib = (gbar * mesh.cell_measures)[:, None] / nloc
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.cell_nodes,
              np.broadcast_to(contrib, mesh.cell_nodes.shape))
    return out


def residual_norm(spec: ProblemSpec, residual: ScalarField,
                  interior_only: bool = True) -> float:
    """L2 norm of the residual density (residual / lumped node measure)."""
    mesh = spec.mesh
    lump = mesh.lumped_measures()
    r = residual.values
    mask = mesh.interior if interior_only else np.ones(mesh.n_nodes, bool)
    return float(np.sqrt(np.sum(r[mask] ** 2 / lump[mask])))
