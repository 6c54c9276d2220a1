import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from oracles import box_levels, ring_levels
from qconstraint import geometry as geo
from qconstraint.effective import (
    EffectiveField,
    ExtrapotentialBreakdown,
    TangentGrid,
    planar_effective_field,
    surface_effective_field,
    uniform_curve_field,
)
from qconstraint.errors import NoConvergence, SelfIntersection, TruncationInsufficient, UnsupportedDimension
from qconstraint.solver import (
    ConvergenceReport,
    ConvergenceRow,
    ambient_oracle_2d,
    ambient_oracle_3d_twisted,
    annulus_bessel_oracle,
    discretize_tangential,
    eigensolve,
    epsilon_convergence,
    fit_order,
    fourier_derivative_matrix,
    strip_convergence,
    vielbein_kinetic_check,
)
from qconstraint.transverse import TransversePotential, interval_modes

TWO_PI = 2 * math.pi


def _rel(a, b):
    return np.abs(a - b) / np.maximum(np.abs(b), 1e-300)


# -- tangential operator -----------------------------------------------------------------


def test_free_rotor():
    op = discretize_tangential(uniform_curve_field(TWO_PI, 512))
    vals = eigensolve(op, 11).values
    exact = ring_levels(TWO_PI, 0.0, 5)
    assert abs(vals[0]) < 1e-12
    assert np.max(_rel(vals[1:], exact[1:])) < 1e-3
    assert op.hermiticity_residual < 1e-12


@pytest.mark.parametrize("a", [0.0, 0.23, 0.5, 0.77])
def test_flux_spectrum_and_periodicity(a):
    e1 = eigensolve(discretize_tangential(uniform_curve_field(TWO_PI, 512, A=a)), 11).values
    e2 = eigensolve(discretize_tangential(uniform_curve_field(TWO_PI, 512, A=a + 1.0)), 11).values
    exact = ring_levels(TWO_PI, a, 6)[:11]
    assert np.max(np.abs(e1 - exact)) < 1e-3 * max(1.0, exact.max())
    assert np.max(np.abs(e1 - e2)) < 1e-9


def test_discrete_gauge_transformation_is_exact():
    n = 256
    f = uniform_curve_field(TWO_PI, n)
    alpha = f.grid.axes[0]
    # pure-gauge potential A = d chi / d alpha with chi = sin(alpha)
    links = (np.sin(np.roll(alpha, -1)) - np.sin(alpha))[:, None, None]
    g = replace(f, links=links.astype(complex))
    e0 = eigensolve(discretize_tangential(f), 9).values
    e1 = eigensolve(discretize_tangential(g), 9).values
    assert np.max(np.abs(e0 - e1)) < 1e-11


def test_dirichlet_box():
    op = discretize_tangential(uniform_curve_field(1.0, 514, bc="dirichlet"))
    assert op.dim == 512
    vals = eigensolve(op, 5).values
    assert np.max(_rel(vals, box_levels(1.0, 5))) < 1e-3


def test_neumann_keeps_all_nodes():
    op = discretize_tangential(uniform_curve_field(1.0, 257, bc="dirichlet"), bc="neumann")
    vals = eigensolve(op, 3).values
    assert op.dim == 257 and abs(vals[0]) < 1e-10
    assert abs(vals[1] - 0.5 * math.pi**2) / (0.5 * math.pi**2) < 1e-3


def test_matrix_valued_potential():
    f = uniform_curve_field(TWO_PI, 512, V=np.diag([1.0, 2.0, 3.0]))
    vals = eigensolve(discretize_tangential(f), 9).values
    exact = np.sort(np.concatenate([ring_levels(TWO_PI, 0.0, 3) + v for v in (1.0, 2.0, 3.0)]))[:9]
    assert np.max(np.abs(vals - exact)) < 1e-3


def test_eigensolve_diagonal():
    s = eigensolve(np.diag([3.0, 1.0, 2.0]), 3)
    assert np.array_equal(s.values, [1.0, 2.0, 3.0])


def test_eigensolve_paths_agree():
    f = uniform_curve_field(3.0, 2002, A=0.3, V=0.1, bc="dirichlet")
    op = discretize_tangential(f)
    banded = eigensolve(op, 6)
    dense = eigensolve(op.H.toarray(), 6)
    sparse = eigensolve(op, 6, dense_max=0, seed=3)
    assert banded.method == "banded" and dense.method == "dense" and sparse.method == "shift-invert"
    assert np.max(np.abs(banded.values - dense.values)) < 1e-9
    assert np.max(np.abs(sparse.values - dense.values)) < 1e-9


def test_eigensolve_reports_failure():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((40, 40))
    with pytest.raises(NoConvergence):
        eigensolve(M + M.T, 3, tol=0.0)


def test_unsupported_dimension():
    g = TangentGrid(tuple(np.arange(4.0) for _ in range(3)), (1.0,) * 3, ("periodic",) * 3)
    z = np.zeros((4, 4, 4))
    bd = ExtrapotentialBreakdown(z, z, np.zeros((4, 4, 4, 1, 1)), np.zeros((4, 4, 4, 1, 1)), np.zeros((4, 4, 4, 1, 1)))
    f = EffectiveField(g, 1, 1, 1.0, np.zeros((4, 4, 4, 3, 1, 1)), bd)
    with pytest.raises(UnsupportedDimension):
        discretize_tangential(f)


def test_bent_guide_binds():
    c = geo.arclength_reparameterize(geo.arc_line(1.0, math.pi / 2, 10.0), n=8001)
    vals = eigensolve(discretize_tangential(planar_effective_field(c, interval_modes(0.05))), 2).values
    assert vals[0] < 0


def test_sphere_laplacian_spectrum():
    f = surface_effective_field(geo.sphere(1.0), (24, 48), interval_modes(0.05))
    vals = eigensolve(discretize_tangential(f), 9).values
    exact = np.array([0, 1, 1, 1, 3, 3, 3, 3, 3], float)
    assert abs(vals[0]) < 1e-10
    assert np.max(np.abs(vals - exact)) < 0.05


def test_cylinder_spectrum():
    f = surface_effective_field(geo.cylinder(1.0, 2.0), (32, 32), interval_modes(0.05))
    vals = eigensolve(discretize_tangential(f), 3).values
    base = -0.125 + 0.5 * (math.pi / 2.0) ** 2
    exact = np.array([base, base + 0.5, base + 0.5])
    assert np.max(np.abs(vals - exact)) < 0.01


# -- strip oracle ---------------------------------------------------------------------


def test_straight_strip_is_separable():
    c = geo.arclength_reparameterize(geo.line(2.0), n=64)
    s = ambient_oracle_2d(c, 0.1, n_a=200, n_u=20, k_eigs=3)
    assert np.max(np.abs(s.offset_extrapolated - box_levels(2.0, 3))) < 1e-5
    assert s.E_full[0] == pytest.approx(s.E_perp + box_levels(2.0, 1)[0], rel=1e-9)


def test_annulus_against_bessel():
    c = geo.arclength_reparameterize(geo.circle(1.0), n=256)
    s = ambient_oracle_2d(c, 0.1, n_a=200, n_u=20, k_eigs=1)
    exact = annulus_bessel_oracle(1.0, 0.1, 0)
    assert abs(s.E_full[0] - exact) / exact < 5e-3


def test_self_intersection_local():
    c = geo.arclength_reparameterize(geo.circle(1.0), n=64)
    with pytest.raises(SelfIntersection):
        ambient_oracle_2d(c, 2.5)


def test_self_intersection_global():
    c = geo.arclength_reparameterize(geo.arc_line(1.0, 1.9 * math.pi, 1.0), n=800)
    with pytest.raises(SelfIntersection):
        ambient_oracle_2d(c, 0.1)


def test_strip_convergence_on_straight_guide():
    c = geo.arclength_reparameterize(geo.line(2.0), n=64)
    rep = strip_convergence(c, [0.2, 0.1, 0.05], box_levels(2.0, 1)[0], n_a=100, n_u=16)
    assert all(r.abs_error < 1e-5 for r in rep.rows)


def test_epsilon_convergence_exact_model():
    rep = epsilon_convergence([0.3, 0.2, 0.1], lambda e: 1 / e**2 + 0.5 + e, lambda e: 1 / e**2, 0.5)
    assert rep.order == pytest.approx(1.0, abs=1e-6)
    assert rep.monotonic
    with pytest.raises(ValueError):
        ConvergenceReport([ConvergenceRow(0.1, 0, 0, 0, 0, 0), ConvergenceRow(0.2, 0, 0, 0, 0, 0)], 1.0, True, 0.0)


def test_fit_order():
    eps = [0.4, 0.2, 0.1]
    assert fit_order(eps, [3 * e**2 for e in eps]) == pytest.approx(2.0)


# -- twisted harmonic tube -----------------------------------------------------------------


def test_untwisted_tube_separates():
    s = ambient_oracle_3d_twisted(0.0, TransversePotential.harmonic((1.0, 2.0)), TWO_PI, k_eigs=4, j_max=2)
    assert s.values[0] == pytest.approx(1.5, abs=1e-12)
    for j, ev in s.meta["blocks"].items():
        assert ev[0] == pytest.approx(1.5 + 0.5 * j**2, abs=1e-12)


def test_isotropic_twist_shifts_angular_levels():
    S0 = 0.3
    s = ambient_oracle_3d_twisted(S0, TransversePotential.harmonic((1.0, 1.0)), TWO_PI, k_eigs=3, j_max=1)
    b = s.meta["blocks"][1]
    assert b[0] == pytest.approx(1.5, abs=1e-10)
    assert sorted(b[1:3]) == pytest.approx([2 + 0.5 * (1 - S0) ** 2, 2 + 0.5 * (1 + S0) ** 2], abs=1e-10)


def test_fock_truncation_detected():
    with pytest.raises(TruncationInsufficient):
        ambient_oracle_3d_twisted(3.0, TransversePotential.harmonic((1.0, 2.0)), TWO_PI, n_basis=4)


# -- vielbein scaling ---------------------------------------------------------------------


def test_fourier_derivative_exact_on_trig():
    n = 33
    x = TWO_PI * np.arange(n) / n
    D = fourier_derivative_matrix(n, TWO_PI)
    assert np.max(np.abs(D @ np.sin(3 * x) - 3 * np.cos(3 * x))) < 1e-12
    with pytest.raises(ValueError):
        fourier_derivative_matrix(32, TWO_PI)


@pytest.mark.parametrize("metric", [
    lambda x: np.ones_like(x),
    lambda x: (1 + 0.3 * np.sin(x)) ** 2,
    lambda x: np.exp(0.2 * np.cos(x)),
])
def test_vielbein_identity(metric):
    rep = vielbein_kinetic_check(metric, n=255)
    assert rep.max_residual < 1e-8


def test_vielbein_flat_potential_vanishes():
    rep = vielbein_kinetic_check(lambda x: np.full_like(x, 2.0), n=65)
    assert np.max(np.abs(rep.V_s)) < 1e-12
