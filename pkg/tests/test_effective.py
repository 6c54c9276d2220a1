import math

import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, strategies as st

from qconstraint import geometry as geo
from qconstraint.effective import (
    assemble_effective,
    codim2_reduction,
    curve_effective_field,
    curve_grid,
    effective_potential_nonconstant,
    extrapotential_forms,
    extrapotential_preliminary,
    planar_effective_field,
    rotational_invariance_check,
    surface_effective_field,
    uniform_curve_field,
)
from qconstraint.errors import FormMismatch, NonHermitianResidual, ShapeMismatch
from qconstraint.framing import PotentialFrame, potential_twist
from qconstraint.solver import discretize_tangential, eigensolve
from qconstraint.transverse import (
    TransversePotential,
    grid_modes,
    harmonic_lambda2_closed_form,
    harmonic_lambda_matrices,
    harmonic_modes,
    interval_modes,
    lambda_matrices,
    rotational_modes,
)
from qconstraint.checks import SCALENE


@pytest.fixture(scope="module")
def helix():
    return geo.arclength_reparameterize(geo.helix(3.0, 4.0), n=200)


def ho_modes(omegas=(1.0, 2.0), occ=((0, 0),), hbar=1.0):
    return harmonic_lambda_matrices(harmonic_modes(omegas, occ, hbar))


# -- scalar extrapotential ----------------------------------------------------------------


def test_planar_arc_extrapotential():
    c = geo.arclength_reparameterize(geo.circle(1.0), n=64)
    f = planar_effective_field(c, interval_modes(0.1))
    assert np.all(f.Vex.total[:, 0, 0] == -0.125)
    assert np.all(f.A == 0.0)
    forms = extrapotential_forms(geo.curvature_scalars(geo.planar_curve_geometry(1.0)))
    assert max(forms) - min(forms) < 1e-12


@pytest.mark.parametrize("emb,q,expected", [
    (geo.torus(1.0, 1.0), (0.0, 0.0), -1 / 32),
    (geo.torus(2.0, 1.0), (0.5, 0.0), -1 / 18),
    (geo.plane(), (0.2, 0.1), 0.0),
    (geo.sphere(1.7), (1.0, 0.5), 0.0),
    (geo.cylinder(0.5), (1.0, 0.5), -0.5),
])
def test_surface_extrapotential_values(emb, q, expected):
    sc = geo.curvature_scalars(geo.embedding_at(emb, np.array(q)))
    assert abs(extrapotential_preliminary(sc) - expected) < 1e-6


def test_inconsistent_scalars_rejected():
    sc = geo.curvature_scalars(geo.embedding_at(geo.cylinder(1.0), np.array([0.1, 0.2])))
    bad = replace(sc, R_hat=sc.R_hat + 0.1)
    with pytest.raises(FormMismatch):
        extrapotential_preliminary(bad)


def test_forms_agree_in_r4():
    emb = geo.graph_r4(lambda x, y: 0.3 * x * y, lambda x, y: 0.2 * x * x - 0.1 * y * y)
    f = extrapotential_forms(geo.curvature_scalars(geo.embedding_at(emb, np.array([0.1, -0.2]))))
    assert max(f) - min(f) < 1e-12


# -- curves in R^3 ---------------------------------------------------------------------


def test_helix_harmonic_closed_form(helix):
    fr = PotentialFrame.along_curve(helix, "frenet")
    f = curve_effective_field(helix, fr, ho_modes())
    var = harmonic_lambda2_closed_form((0, 0), (1.0, 2.0))[0, 1, 0, 1]
    expected = -(0.12**2) / 8 + 2 * 0.16**2 * var
    assert np.max(np.abs(f.Vex.total[:, 0, 0] - expected)) < 1e-8
    # harmonic modes carry no diagonal Lambda, so the gauge term vanishes
    assert np.max(np.abs(f.A)) < 1e-15
    assert f.Vex.bookkeeping_residual() < 1e-12


def test_helix_scalene_mode_formula(helix):
    fr = PotentialFrame.along_curve(helix, "frenet")
    m = lambda_matrices(grid_modes(TransversePotential.polygon(SCALENE), n=129))
    f = curve_effective_field(helix, fr, m)
    S, L, L2 = codim2_reduction(potential_twist(fr), m)
    var = float(np.real(L2[0, 0] - L[0, 0] ** 2))
    expected = -(0.12**2) / 8 + 2 * 0.16**2 * var
    assert np.max(np.abs(f.Vex.total[:, 0, 0] - expected)) < 1e-8
    assert np.max(np.abs(f.A[:, 0, 0, 0] - 2 * S[:, 0] * L[0, 0])) < 1e-12


def test_codim1_surface_has_no_gauge():
    f = surface_effective_field(geo.sphere(1.0), (12, 24), interval_modes(0.1))
    assert np.all(f.A == 0.0)
    assert np.max(np.abs(f.Vex.total)) < 1e-8
    f = surface_effective_field(geo.cylinder(0.5), (16, 8), interval_modes(0.1))
    assert np.all(f.A == 0.0)
    assert np.max(np.abs(f.Vex.total + 0.5)) < 1e-6


def test_hbar_scaling(helix):
    fr = PotentialFrame.along_curve(helix, "frenet")
    m = lambda_matrices(grid_modes(TransversePotential.polygon(SCALENE), n=129))
    m2 = lambda_matrices(grid_modes(TransversePotential.polygon(SCALENE, hbar=2.0), n=129))
    f1 = curve_effective_field(helix, fr, m)
    f2 = curve_effective_field(helix, fr, m2)
    assert np.allclose(f2.Vex.dacosta, 4 * f1.Vex.dacosta, rtol=1e-12)
    # Lambda carries one power of hbar: gauge ~ hbar, twist block ~ hbar^2
    assert np.allclose(f2.Vex.twist, 4 * f1.Vex.twist, rtol=1e-8, atol=1e-18)
    assert np.allclose(f2.A, 2 * f1.A, rtol=1e-8, atol=1e-18)


def test_mode_dimension_mismatch(helix):
    fr = PotentialFrame.along_curve(helix, "frenet")
    with pytest.raises(ShapeMismatch):
        curve_effective_field(helix, fr, interval_modes(0.1))


def test_non_hermitian_input_rejected(helix):
    fr = PotentialFrame.along_curve(helix, "frenet")
    m = ho_modes(occ=((1, 0), (0, 1)), omegas=(1.0, 1.0))
    L = m.Lambda.copy()
    L[0, 1, 0, 1] += 0.3  # breaks Hermiticity of Lambda_12
    L[1, 0, 0, 1] -= 0.3
    bad = replace(m, Lambda=L)
    geoms = [geo.curve_embedding_geometry(helix, j, fr.vectors[j]) for j in range(helix.n_samples)]
    with pytest.raises(NonHermitianResidual):
        assemble_effective(geoms, potential_twist(fr), bad, curve_grid(helix, fr))


def test_adiabatic_correction_is_additive():
    f = uniform_curve_field(2.0, 64, A=0.0, V=0.3, bc="dirichlet")
    g = effective_potential_nonconstant(f, lambda a: np.zeros_like(a))
    assert np.array_equal(g.potential(), f.potential())
    g = effective_potential_nonconstant(f, lambda a: np.sin(a))
    assert np.allclose(g.potential()[:, 0, 0] - f.potential()[:, 0, 0], np.sin(f.grid.axes[0]))


def test_localization_at_frequency_minimum():
    L = 10.0
    f = uniform_curve_field(L, 401, bc="dirichlet")
    a0 = 6.3
    # ground-state shift hbar (omega(alpha) - omega_min)/2 for a slowly varying frequency
    E2 = lambda a: 0.5 * 0.4 * (a - a0) ** 2
    g = effective_potential_nonconstant(f, E2)
    op = discretize_tangential(g)
    spec = eigensolve(op, 1, vectors=True)
    nodes = op.nodes[0]
    peak = nodes[int(np.argmax(np.abs(spec.vectors[:, 0])))]
    assert abs(peak - a0) <= nodes[1] - nodes[0]
    # harmonic oracle: sqrt(0.4)/2
    assert abs(spec.values[0] - math.sqrt(0.4) / 2) < 1e-3


# -- invariance ----------------------------------------------------------------------------


def test_rotational_invariance_disk():
    c = geo.arclength_reparameterize(geo.circle(1.0), n=256)
    fa = PotentialFrame.along_curve(c, "untwisted")
    fb = PotentialFrame.along_curve(c, "rotation", theta=lambda a: 0.7 * np.sin(a) + 0.3 * np.sin(2 * a))
    rep = rotational_invariance_check(c, fa, fb, rotational_modes(0.1, [1, -1]))
    assert rep.max_difference < 1e-8


def test_isotropic_ground_state_frame_independent(helix):
    m = ho_modes(omegas=(1.0, 1.0))
    fa = curve_effective_field(helix, PotentialFrame.along_curve(helix, "frenet"), m)
    fb = curve_effective_field(helix, PotentialFrame.along_curve(helix, "constant_rate", rate=0.8), m)
    assert np.max(np.abs(fa.Vex.twist)) < 1e-15
    assert np.max(np.abs(fa.Vex.total - fb.Vex.total)) < 1e-14


def test_constant_frame_rotation_leaves_spectrum(helix):
    fr = PotentialFrame.along_curve(helix, "rotation", theta=lambda a: 0.4 * np.sin(a / 3))
    Q = np.array([[math.cos(0.9), math.sin(0.9)], [-math.sin(0.9), math.cos(0.9)]])
    m = lambda_matrices(grid_modes(TransversePotential.polygon(SCALENE), n=129))
    ea = eigensolve(discretize_tangential(curve_effective_field(helix, fr, m)), 8).values
    eb = eigensolve(discretize_tangential(curve_effective_field(helix, fr.rotated(Q), m)), 8).values
    assert np.max(np.abs(ea - eb)) < 1e-8


@given(st.floats(0.5, 4.0), st.floats(0.0, 4.0), st.floats(0.3, 3.0), st.integers(0, 3), st.integers(0, 3),
       st.floats(-2.0, 2.0))
def test_assembly_hermitian_and_consistent(a, b, w2, n1, n2, rate):
    c = geo.arclength_reparameterize(geo.helix(a, b, turns=0.25), n=48)
    fr = PotentialFrame.along_curve(c, "constant_rate", rate=rate)
    f = curve_effective_field(c, fr, ho_modes((1.0, w2), ((n1, n2),)))
    assert f.Vex.bookkeeping_residual() < 1e-12
    assert f.Vex.hermiticity_residual < 1e-10
    assert f.Vex.twist[:, 0, 0].real.min() >= -1e-12
