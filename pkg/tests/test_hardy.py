import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hardylab as hl
from hardylab import ScalarField
from hardylab.green import GreenPotential, radial_green_oracle
from hardylab.hardy import HardyError, transform_f
from hardylab.operator import MatrixField, ProblemSpec
from hardylab.solver import SolveOptions


def _oracle_setup(p, n, r_min=0.01, r_max=100.0, cells=1000):
    m = hl.build_radial_mesh(n, r_min, r_max, cells, "geometric")
    spec = ProblemSpec(p=p, n_dim=n, mesh=m, A=MatrixField.identity(m),
                       V=np.zeros(m.n_cells))
    r = m.coordinates()[:, 0]
    Gp = GreenPotential.from_oracle(spec, radial_green_oracle(p, n)(r))
    return spec, r, Gp


@settings(max_examples=100, deadline=None)
@given(t=st.floats(1e-6, 1e6), p=st.floats(1.1, 6.0))
def test_transform_f_supersolution_identity(t, p):
    # -(f'^{p-1})'(t) must equal ((p-1)/p)^p f(t)^{p-1} / t^p: this is the
    # algebraic identity behind the whole weight construction.
    f, fp, lap1d = transform_f(t, p)
    rhs = ((p - 1.0) / p) ** p * f ** (p - 1.0) / t ** p
    assert lap1d == pytest.approx(rhs, rel=1e-10)


def test_transform_f_is_concave_increasing():
    t = np.geomspace(1e-3, 1e3, 200)
    f, fp, _ = transform_f(t, 2.5)
    assert np.all(fp > 0)
    assert np.all(np.diff(fp) < 0)


def test_transform_f_rejects_nonpositive_t():
    with pytest.raises(HardyError):
        transform_f(-1.0, 2.0)


def test_weight_from_green_classical_shape():
    spec, r, Gp = _oracle_setup(2.0, 3)
    W = hl.weight_from_green(spec, Gp)
    assert np.all(W.W.values >= 0.0)
    assert W.p == 2.0
    mask = W.closed_form_region & (r > 0.05) & (r < 50.0)
    assert np.allclose(W.W.values[mask] * 4.0 * r[mask] ** 2, 1.0,
                       rtol=1e-2)
    # the ground state is f(G) = G^{1/2} up to normalization
    g = np.maximum(Gp.G.values, 0.0)
    expected = g ** 0.5
    scale = W.ground_state.values[mask][0] / expected[mask][0]
    assert np.allclose(W.ground_state.values[mask],
                       scale * expected[mask], rtol=1e-12)


def test_weight_vanishes_where_green_hits_boundary_zero():
    spec, r, Gp = _oracle_setup(2.0, 3)
    vals = Gp.G.values.copy()
    vals[spec.mesh.boundary] = 0.0
    Gp0 = GreenPotential.from_oracle(spec, vals)
    W = hl.weight_from_green(spec, Gp0)
    assert np.all(np.isfinite(W.W.values))
    assert np.all(W.W.values[spec.mesh.boundary] == 0.0)


def test_optimal_pair_divides_potential_by_c_p():
    m = hl.build_radial_mesh(3, 1e-4, 1e4, 1200, "geometric")
    rmid = m.cell_mid[:, 0]
    V = np.where((rmid > 0.5) & (rmid < 2.0), -0.1, 0.0)
    spec = ProblemSpec(p=2.0, n_dim=3, mesh=m,
                       A=MatrixField.identity(m), V=V)
    phi = hl.mollified_delta(m, center=1.0, radius=0.4)
    spec_w, W = hl.optimal_pair(spec, phi, levels=26, exhaust_K=8,
                                opts=SolveOptions(max_iters=80,
                                                  tol_residual=1e-10))
    assert np.allclose(spec_w.V, V / hl.c_p(2.0), rtol=1e-14)
    assert W.hypotheses_ok
    assert 0.0 <= W.clip_fraction < 0.05


def test_perturbed_weight_accepts_admissible_shift():
    spec, r, Gp = _oracle_setup(2.0, 3)
    W = hl.weight_from_green(spec, Gp)
    V1 = ScalarField(spec.mesh, -0.5 * 0.3 * W.W.values)
    W2 = hl.perturbed_weight(W, V1, eps=0.3)
    assert np.allclose(W2.W.values, W.W.values + V1.values)
    assert W2.provenance == "perturbed"


def test_perturbed_weight_rejects_deep_negative_shift():
    spec, r, Gp = _oracle_setup(2.0, 3)
    W = hl.weight_from_green(spec, Gp)
    V1 = ScalarField(spec.mesh, -0.5 * W.W.values)
    with pytest.raises(HardyError):
        hl.perturbed_weight(W, V1, eps=0.3)
    with pytest.raises(HardyError):
        hl.perturbed_weight(W, V1, eps=1.0)


def test_hardy_margin_nonnegative_for_oracle_weight():
    spec, r, Gp = _oracle_setup(2.0, 3, r_min=1e-4, r_max=1e4, cells=1500)
    W = hl.weight_from_green(spec, Gp)
    fam = hl.TestFunctionFamily(kind="random_bumps", count=30, seed=1)
    rep = hl.hardy_margin(spec, W, fam)
    assert rep.check_name == "hardy_margin"
    assert rep.statistic >= -1e-3
    assert len(rep.artifacts) == 30


def test_hardy_margin_detects_overweighting():
    # 1/(4r^2) is optimal, so doubling it must break the inequality for
    # wide logarithmic bumps
    spec, r, Gp = _oracle_setup(2.0, 3, r_min=1e-4, r_max=1e4, cells=1500)
    W = hl.weight_from_green(spec, Gp)
    fam = hl.TestFunctionFamily(kind="random_bumps", count=30, seed=1)
    rep = hl.hardy_margin(spec, W, fam, weight_factor=2.0)
    assert rep.statistic < -1e-2


def test_family_members_are_admissible():
    m = hl.build_radial_mesh(3, 0.01, 100.0, 400, "geometric")
    fam = hl.TestFunctionFamily(kind="random_bumps", count=15, seed=4)
    members = list(fam.members(m))
    assert len(members) == 15
    for w in members:
        assert np.all(w.values[m.boundary] == 0.0)
        assert np.any(w.values > 0.0)


def test_family_is_deterministic_in_seed():
    m = hl.build_radial_mesh(3, 0.01, 100.0, 200, "geometric")
    a = [w.values for w in
         hl.TestFunctionFamily(count=5, seed=9).members(m)]
    b = [w.values for w in
         hl.TestFunctionFamily(count=5, seed=9).members(m)]
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
