"""The supersolution transform f(t) = t^{(p-1)/p}, Hardy-weight
constructors for every case of the construction, and the small-perturbation
rule W -> W + V1."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .green import GreenPotential, check_assumptions
from .mesh import ScalarField, nodal_gradient
from .operator import (MatrixField, OperatorError, ProblemSpec, apply_Q,
                       c_p)


class HardyError(ValueError):
    pass


@dataclass(frozen=True)
class HardyWeight:
    """A Hardy weight W with its ground state and provenance.

    closed_form_region marks the nodes where W equals the logarithmic
    derivative expression ((p-1)/p)^p |grad G / G|_A^p (outside the density
    support); elsewhere W comes from the discrete residual of Q(f(G)).
    """
    W: ScalarField
    ground_state: ScalarField
    closed_form_region: np.ndarray
    provenance: str
    p: float
    clip_fraction: float = 0.0
    gamma: float | None = None
    eps: float | None = None
    hypotheses_ok: bool = True

    def __post_init__(self):
        if np.any(self.W.values[self.closed_form_region] < 0):
            raise HardyError("W must be nonnegative on the closed-form "
                             "region")
        interior = self.W.mesh.interior
        if np.any(self.ground_state.values[interior] <= 0):
            raise HardyError("ground state must be positive on interior "
                             "nodes")

    def cell_values(self) -> np.ndarray:
        return self.W.cell_averages()

    def to_meta(self) -> dict:
        return {"provenance": self.provenance,
                "clip_fraction": self.clip_fraction,
                "c_p": c_p(self.p), "p": self.p, "gamma": self.gamma,
                "eps": self.eps, "hypotheses_ok": self.hypotheses_ok}


def transform_f(t, p: float):
    """f(t) = t^{(p-1)/p}: returns (f, f', -Delta_p^{1D} f at t).

    The third value is computed by the generic power rule applied to
    f'^{p-1}; it must coincide with ((p-1)/p)^p f^{p-1} / t^p, the identity
    that drives the whole construction.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise HardyError("transform requires t > 0")
    if p <= 1:
        raise OperatorError("p must exceed 1")
    a = (p - 1.0) / p
    f = t ** a
    fp = a * t ** (a - 1.0)
    # -(f'^{p-1})' for f' = a t^{a-1}
    lap1d = -(a ** (p - 1.0)) * (a - 1.0) * (p - 1.0) \
        * t ** ((a - 1.0) * (p - 1.0) - 1.0)
    if np.isscalar(t) or t.ndim == 0:
        return float(f), float(fp), float(lap1d)
    return f, fp, lap1d


def _nodal_A(A: MatrixField) -> np.ndarray:
    return A.at_nodes()


def weight_from_green(spec: ProblemSpec, Gp: GreenPotential,
                      supp_pad: int = 1) -> HardyWeight:
    """Hardy weight of the Green-potential construction.

    `spec` carries the potential the weight belongs to (the Green build's
    potential divided by c_p).  Outside the density support
    W = ((p-1)/p)^p |grad G / G|_A^p nodewise; inside, W is the discrete
    residual density of Q(f(G)) over f(G)^{p-1}, clipped at zero.
    """
    mesh = spec.mesh
    if Gp.G.mesh is not mesh:
        raise HardyError("Green potential and spec must share a mesh")
    p = spec.p
    G = Gp.G.values
    if np.any(G[mesh.interior] <= 0):
        raise HardyError("Green potential must be positive on the interior")
    gs = np.maximum(G, 0.0) ** ((p - 1.0) / p)
    grad = nodal_gradient(Gp.G)
    An = _nodal_A(spec.A)
    gnorm = np.sqrt(np.einsum("nd,nde,ne->n", grad, An, grad))
    W_closed = np.zeros(mesh.n_nodes)
    pos = G > 0
    W_closed[pos] = ((p - 1.0) / p) ** p * (gnorm[pos] / G[pos]) ** p

    supp = Gp.density.values > 0
    if supp.any() and supp_pad > 0:
        for _ in range(supp_pad):
            cells_touch = supp[mesh.cell_nodes].any(axis=1)
            grow = supp.copy()
            grow[mesh.cell_nodes[cells_touch].ravel()] = True
            supp = grow
    closed_region = ~supp & mesh.interior & pos

    W = W_closed.copy()
    clip_fraction = 0.0
    if supp.any():
        res = apply_Q(spec, ScalarField(mesh, gs))
        lump = mesh.lumped_measures()
        dens = res.values / lump
        with np.errstate(divide="ignore", invalid="ignore"):
            W_res = np.where(gs > 0, dens / gs ** (p - 1.0), 0.0)
        neg = W_res < 0
        total = np.abs(W_res[supp]).sum()
        clipped = np.abs(W_res[supp & neg]).sum()
        clip_fraction = float(clipped / total) if total > 0 else 0.0
        W_res = np.maximum(W_res, 0.0)
        W[supp] = W_res[supp]

    return HardyWeight(W=ScalarField(mesh, W),
                       ground_state=ScalarField(mesh, gs),
                       closed_form_region=closed_region,
                       provenance="from_green_potential", p=p,
                       clip_fraction=clip_fraction)


def weight_case_gamma(G: ScalarField, gamma: float, p: float,
                      A: MatrixField) -> HardyWeight:
    """The p > n branch with lim_{x->0} G = gamma > 0:
    v = [G (gamma - G)]^{(p-1)/p} and the quoted weight formula."""
    if gamma <= 0:
        raise HardyError("gamma must be positive")
    if p <= 1:
        raise OperatorError("p must exceed 1")
    mesh = G.mesh
    vals = G.values
    ok = (vals > 0) & (vals < gamma)
    if not ok.any():
        raise HardyError("no nodes with 0 < G < gamma")
    grad = nodal_gradient(G)
    An = _nodal_A(A)
    gnorm = np.sqrt(np.einsum("nd,nde,ne->n", grad, An, grad))
    W = np.zeros(mesh.n_nodes)
    g = vals[ok]
    prod = g * (gamma - g)
    W[ok] = ((p - 1.0) / p) ** p * (gnorm[ok] / prod) ** p \
        * np.abs(gamma - 2.0 * g) ** (p - 2.0) \
        * (2.0 * (p - 2.0) * prod + gamma ** 2)
    v = np.zeros(mesh.n_nodes)
    v[ok] = prod ** ((p - 1.0) / p)
    # keep the ground state positive on excluded interior nodes so the
    # invariant holds; callers restrict attention to the reported region
    v[~ok] = np.minimum(gamma ** 2 / 4.0, np.abs(vals[~ok]) + 1e-300) \
        ** ((p - 1.0) / p)
    return HardyWeight(W=ScalarField(mesh, W), ground_state=ScalarField(
        mesh, v), closed_form_region=ok,
        provenance=f"plaplacian_case2(gamma={gamma})", p=p, gamma=gamma)


def perturbed_weight(W: HardyWeight, V1: ScalarField,
                     eps: float) -> HardyWeight:
    """Admissible perturbation: V1 >= -eps W with 0 <= eps < 1 keeps
    W + V1 an optimal weight for the shifted operator."""
    if not (0 <= eps < 1):
        raise HardyError("eps must lie in [0, 1)")
    if V1.mesh is not W.W.mesh:
        raise HardyError("perturbation must live on the weight's mesh")
    bad = V1.values < -eps * W.W.values - 1e-15 * np.abs(W.W.values)
    if bad.any():
        locs = np.where(bad)[0][:10]
        raise HardyError(f"V1 >= -eps W violated at nodes {locs.tolist()}")
    return HardyWeight(W=ScalarField(W.W.mesh, W.W.values + V1.values),
                       ground_state=W.ground_state,
                       closed_form_region=np.zeros(W.W.mesh.n_nodes, bool),
                       provenance="perturbed", p=W.p, eps=eps,
                       gamma=W.gamma, hypotheses_ok=W.hypotheses_ok)


def optimal_pair(spec_V: ProblemSpec, phi: ScalarField,
                 levels: int = 10, opts=None,
                 exhaust_K: int | None = None):
    """Full main-theorem pipeline: build the Green potential of Q_{p,A,V},
    check its hypotheses, divide the potential by c_p, and attach the
    weight.  Returns (spec with V/c_p, HardyWeight)."""
    from .green import green_potential
    Gp = green_potential(spec_V, phi, levels=levels, opts=opts,
                         exhaust_K=exhaust_K)
    chk = check_assumptions(spec_V, Gp)
    v_nonpos = bool(np.all(spec_V.V <= 0))
    hypotheses_ok = chk.decay_at_infinity and np.isfinite(
        chk.integral_absVG) and (chk.integral_VG < 0 or v_nonpos)
    spec_w = spec_V.with_potential(spec_V.V / c_p(spec_V.p))
    W = weight_from_green(spec_w, Gp)
    if not hypotheses_ok:
        W = HardyWeight(W=W.W, ground_state=W.ground_state,
                        closed_form_region=W.closed_form_region,
                        provenance=W.provenance, p=W.p,
                        clip_fraction=W.clip_fraction,
                        hypotheses_ok=False)
    return spec_w, W
