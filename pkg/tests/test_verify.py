import numpy as np
import pytest

import hardylab as hl
from hardylab import ScalarField
from hardylab.green import GreenPotential, radial_green_oracle
from hardylab.operator import MatrixField, ProblemSpec
from hardylab.verify import null_sequence_field


def _oracle_setup(p, n, r_min, r_max, cells):
    m = hl.build_radial_mesh(n, r_min, r_max, cells, "geometric")
    spec = ProblemSpec(p=p, n_dim=n, mesh=m, A=MatrixField.identity(m),
                       V=np.zeros(m.n_cells))
    r = m.coordinates()[:, 0]
    Gp = GreenPotential.from_oracle(spec, radial_green_oracle(p, n)(r))
    return spec, r, Gp


# ------------------------------------------------------------- coarea

def test_coarea_flux_matches_exact_value_radial():
    spec, r, Gp = _oracle_setup(2.0, 3, 0.01, 100.0, 2000)
    rep = hl.coarea_flux(Gp.G, spec.A, 2.0,
                         list(np.geomspace(0.02, 20.0, 7)))
    fluxes = [row["flux"] for row in rep.artifacts if not row["dropped"]]
    # |grad G| = 1/r^2 on the sphere of radius r = 1/t: flux = 4*pi
    assert np.allclose(fluxes, 4.0 * np.pi, rtol=1e-3)
    assert rep.passed


def test_coarea_flux_drops_unreachable_levels():
    spec, r, Gp = _oracle_setup(2.0, 3, 0.1, 10.0, 300)
    rep = hl.coarea_flux(Gp.G, spec.A, 2.0, [1.0, 1e6])
    assert rep.parameters["n_dropped"] == 1


def test_coarea_flux_anisotropic_exact_value():
    a1, a2 = 1.0, 4.0
    m = hl.build_tensor_mesh((-1, 1), (-1, 1), 120, 120,
                             hole=(-0.1, 0.1, -0.1, 0.1))
    A = MatrixField.diagonal(m, a1, a2)
    xy = m.coordinates()
    s = xy[:, 0] ** 2 / a1 + xy[:, 1] ** 2 / a2
    G = ScalarField(m, -0.5 * np.log(np.maximum(s, 1e-300)))
    rep = hl.coarea_flux(G, A, 2.0, [-np.log(0.36), -np.log(0.25)])
    fluxes = [row["flux"] for row in rep.artifacts if not row["dropped"]]
    assert np.allclose(fluxes, 2.0 * np.pi * np.sqrt(a1 * a2), rtol=2e-2)


# -------------------------------------------------- null sequence laws

def test_null_sequence_field_structure():
    spec, r, Gp = _oracle_setup(2.0, 3, 1e-7, 1e7, 2000)
    u4 = null_sequence_field(Gp.G, 4, p=2.0)
    s = np.maximum(Gp.G.values, 0.0) ** 0.5
    # u_k = f(G) * w_k: equal to f(G) on the plateau 1/k <= f(G) <= k,
    # zero outside (1/k^2, k^2), in between on the logarithmic ramps
    plateau = (s >= 1.0 / 4.0) & (s <= 4.0)
    outside = (s <= 1.0 / 16.0) | (s >= 16.0)
    assert np.allclose(u4.values[plateau], s[plateau])
    assert np.allclose(u4.values[outside], 0.0)
    assert np.all(u4.values >= 0.0)
    assert np.all(u4.values <= s + 1e-15)


@pytest.mark.parametrize("p, n, r_min, r_max, cells", [
    (1.5, 3, 1e-4, 1e4, 2400),
    (2.0, 3, 1e-7, 1e7, 2800),
    (3.0, 5, 1e-6, 1e6, 2400),
])
def test_discrete_null_sequence_laws(p, n, r_min, r_max, cells):
    """The laws the discretization actually obeys, for every p:

    * Q(u_k) on the weighted operator decays like 1/log k (slope -1
      against log log k), because the first-order ramp contributions of
      the piecewise-logarithmic cutoff telescope exactly;
    * X(w_k) = int (f o G)^p |grad w_k|_A^p decays like (1/log k)^{p-1},
      which is the -(p-1) law; the two rates agree only at p = 2.
    """
    spec, r, Gp = _oracle_setup(p, n, r_min, r_max, cells)
    W = hl.weight_from_green(spec, Gp)
    spec_w = spec.with_potential(spec.V - W.cell_values())
    rep = hl.null_sequence_decay(spec_w, Gp.G, [4, 8, 16, 32], p)
    ks = np.array([row["k"] for row in rep.artifacts], dtype=float)
    Qs = np.array([row["Q_uk"] for row in rep.artifacts])
    Xs = np.array([row["X_k"] for row in rep.artifacts])
    ll = np.log(np.log(ks))
    q_slope = np.polyfit(ll, np.log(Qs), 1)[0]
    x_slope = np.polyfit(ll, np.log(Xs), 1)[0]
    assert q_slope == pytest.approx(-1.0, abs=0.12)
    assert x_slope == pytest.approx(-(p - 1.0), abs=0.15 * (p - 1.0))
    # energies decrease and the band mass is stable
    assert np.all(np.diff(Qs) < 0)
    masses = np.array([row["band_mass"] for row in rep.artifacts])
    assert masses.max() / masses.min() <= 2.0


def test_null_sequence_reports_under_resolved_mesh():
    spec, r, Gp = _oracle_setup(2.0, 3, 0.1, 10.0, 300)
    W = hl.weight_from_green(spec, Gp)
    spec_w = spec.with_potential(spec.V - W.cell_values())
    rep = hl.null_sequence_decay(spec_w, Gp.G, [4, 8, 16, 32], 2.0)
    assert rep.parameters.get("under_resolved", False)
    assert not rep.passed


# ------------------------------------------------- null criticality

def test_null_criticality_classical_ratio_is_pi():
    # For W = 1/(4r^2) and ground state G^{1/2} = r^{-1/2} in n = 3,
    # int_{tau < G < 1} W |f(G)|^2 = pi log(1/tau).
    spec, r, Gp = _oracle_setup(2.0, 3, 0.05, 1e7, 3000)
    W = hl.weight_from_green(spec, Gp)
    rep = hl.null_criticality_growth(W, [1e-2, 1e-3, 1e-4, 1e-5], G=Gp.G)
    assert rep.passed
    for row in rep.artifacts:
        assert row["ratio"] == pytest.approx(np.pi, rel=1e-2)


# ------------------------------------------------------- chain rule

def test_chain_rule_residual_structure():
    m = hl.build_radial_mesh(3, 0.5, 2.0, 1000, "uniform")
    spec = ProblemSpec(p=2.0, n_dim=3, mesh=m,
                       A=MatrixField.identity(m),
                       V=0.3 * np.ones(m.n_cells))
    rr = m.coordinates()[:, 0]
    u = ScalarField(m, 1.0 + rr ** 2 / 8.0)
    rep = hl.chain_rule_residual(spec, u, f_choice=("power", 0.5))
    assert rep.check_name == "chain_rule_residual"
    assert rep.passed
    assert rep.parameters["c_p_max_err"] <= 1e-12


# --------------------------------------------------- simplified energy

def test_simp_equivalence_p2_band_contains_one():
    # For p = 2 the ground-state identity E(v w) = E_sim(v, w) is exact
    # whenever Q(v) = 0, so the ratio band must straddle 1.
    m = hl.build_radial_mesh(3, 0.05, 20.0, 1500, "geometric")
    r = m.coordinates()[:, 0]
    spec = ProblemSpec(p=2.0, n_dim=3, mesh=m,
                       A=MatrixField.identity(m),
                       V=-1.0 / (4.0 * m.cell_mid[:, 0] ** 2))
    v = ScalarField(m, r ** (-0.5))  # ground state of -Delta - 1/(4r^2)
    fam = hl.TestFunctionFamily(kind="random_bumps", count=20, seed=2,
                                support_margin=0.1)
    rep = hl.simp_equivalence(spec, v, fam)
    assert rep.parameters["valid_v"]
    lo, hi = rep.parameters["band"]
    assert lo <= 1.0 + 1e-6 and hi >= 1.0 - 1e-6
    assert rep.passed


# --------------------------------------------------- report plumbing

def test_report_direction_logic():
    from hardylab.verify import VerificationReport
    le = VerificationReport("x", {}, 0.5, 1.0, "<=")
    ge = VerificationReport("x", {}, 0.5, 1.0, ">=")
    assert le.passed and not ge.passed
    d = le.to_dict()
    assert d["pass"] is True and d["check_name"] == "x"
