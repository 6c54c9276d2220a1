import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import ellipe

from qconstraint import geometry as geo
from qconstraint.errors import FrameMismatch, NonUnitSpeed, SingularMetric, ZeroSpeed


# -- curves -------------------------------------------------------------------


def test_helix_closed_form_frenet():
    c = geo.arclength_reparameterize(geo.helix(3.0, 4.0), n=64)
    assert np.allclose(c.kappa, 0.12, atol=1e-12)
    assert np.allclose(c.tau, 0.16, atol=1e-12)
    assert c.frame_check() < 1e-12


def test_helix_numerical_frenet_matches_closed_form():
    c = geo.arclength_reparameterize(geo.helix(3.0, 4.0, closed_form=False), n=32)
    assert np.max(np.abs(c.kappa - 0.12)) < 1e-6
    assert np.max(np.abs(c.tau - 0.16)) < 1e-6


def test_frenet_data_pointwise():
    fam = geo.helix(3.0, 4.0)
    fr = geo.frenet_data(fam.curve_map, 2.0)
    assert abs(fr.kappa - 0.12) < 1e-6 and abs(fr.tau - 0.16) < 1e-6
    assert abs(fr.t @ fr.n) < 1e-9 and abs(np.linalg.norm(fr.b) - 1) < 1e-9


def test_circle_radius_two():
    fam = geo.circle(2.0)
    fr = geo.frenet_data(fam.curve_map, 0.7)
    assert abs(fr.kappa - 0.5) < 1e-6
    assert abs(fr.tau) < 1e-6


def test_straight_line_uses_transport():
    fr = geo.frenet_data(geo.line(3.0).curve_map, 1.0)
    assert fr.kappa == 0.0 and math.isnan(fr.tau) and fr.transported
    assert abs(fr.t @ fr.n) < 1e-12
    c = geo.arclength_reparameterize(geo.line(3.0), n=32)
    assert np.all(np.isnan(c.tau))
    # transported normal stays constant along a straight line
    assert np.max(np.abs(c.n - c.n[0])) < 1e-14


def test_non_unit_speed_rejected():
    with pytest.raises(NonUnitSpeed):
        geo.frenet_data(lambda s: np.array([2 * s, 0.0, 0.0]), 0.3)


def test_zero_speed_rejected():
    with pytest.raises(ZeroSpeed):
        geo.frenet_data(lambda s: np.array([s**3, s**3, 0.0]), 0.0, check_speed=False)


def test_arclength_lengths():
    assert abs(geo.arclength_reparameterize(geo.circle(1.0), n=64).length - 2 * math.pi) < 1e-10
    seg = geo.arclength_reparameterize(lambda s: np.array([2 * s, 0.0, 0.0]), 0.0, 1.0, n=32)
    assert abs(seg.length - 2.0) < 1e-10
    assert np.allclose(np.diff(seg.alpha), seg.spacing, atol=1e-12)


def test_ellipse_length_matches_complete_elliptic_integral():
    a, b = 2.0, 1.0
    exact = 4 * a * ellipe(1 - (b / a) ** 2)
    c = geo.arclength_reparameterize(geo.ellipse(a, b), n=128)
    assert abs(c.length - exact) < 1e-9
    # samples sit at equal arclength: chord lengths nearly constant
    chords = np.linalg.norm(np.diff(c.points, axis=0), axis=1)
    assert np.max(chords) - np.min(chords) < 1e-3 * c.spacing


def test_ellipse_signed_curvature_positive_ccw():
    c = geo.arclength_reparameterize(geo.ellipse(2.0, 1.0), n=64)
    assert c.planar and np.all(c.kappa_signed > 0)
    # vertex curvatures a/b^2 and b/a^2
    assert abs(c.kappa_signed[0] - 2.0) < 1e-5


# -- ambient curvature ---------------------------------------------------------------


def test_flat_space_has_zero_curvature():
    assert geo.scalar_curvature(geo.AmbientSpace.flat(3), np.zeros(3)) == 0.0


def test_sphere_metric_scalar_curvature():
    r = 1.5
    sph = geo.AmbientSpace(2, lambda x: np.diag([r**2, (r * math.sin(x[0])) ** 2]), fd_step=1e-3)
    R = geo.scalar_curvature(sph, np.array([1.0, 0.3]))
    assert abs(R - 2 / r**2) < 1e-5


def test_hyperbolic_plane_curvature():
    hyp = geo.AmbientSpace(2, lambda x: np.eye(2) / x[1] ** 2, fd_step=1e-4)
    R = geo.ambient_riemann(hyp, np.array([0.2, 1.3]))
    assert geo.riemann_symmetry_residual(R) < 1e-6
    assert abs(geo.scalar_curvature(hyp, np.array([0.2, 1.3])) + 2.0) < 1e-5


def test_singular_metric_rejected():
    bad = geo.AmbientSpace(2, lambda x: np.diag([1.0, -1.0]))
    with pytest.raises(SingularMetric):
        bad.g(np.zeros(2))


# -- embeddings -----------------------------------------------------------------------------


def _scalars(emb, q):
    return geo.curvature_scalars(geo.embedding_at(emb, np.asarray(q, float)))


def test_plane_second_fundamental_form_vanishes():
    g = geo.embedding_at(geo.plane(), np.array([0.1, -0.2]))
    assert np.max(np.abs(g.T)) < 1e-8


def test_cylinder_principal_curvatures():
    rho = 0.8
    g = geo.embedding_at(geo.cylinder(rho), np.array([0.4, 0.5]))
    ev = np.sort(np.abs(np.linalg.eigvalsh(g.T[0])))
    assert np.allclose(ev, [0.0, 1 / rho], atol=1e-6)


def test_sphere_is_umbilic():
    r = 1.3
    g = geo.embedding_at(geo.sphere(r), np.array([0.9, 2.0]))
    assert np.allclose(np.abs(g.T[0]), np.eye(2) / r, atol=1e-6)


def test_cylinder_scalars():
    rho = 0.7
    s = _scalars(geo.cylinder(rho), (1.0, 0.3))
    assert abs(s.Tsq - 1 / rho**2) < 1e-6
    assert abs(s.Msq - 1 / rho**2) < 1e-6
    assert abs(s.R_hat) < 1e-6
    assert s.R_perp == 0.0


def test_torus_outer_equator_scalar_curvature():
    # principal curvatures 1 and 1/3 at v = 0 of torus(2, 1): R_hat = 2 K = 2/3
    s = _scalars(geo.torus(2.0, 1.0), (0.4, 0.0))
    assert abs(s.R_hat - 2 / 3) < 1e-6
    assert abs(s.R_hat_intrinsic - 2 / 3) < 1e-5


@pytest.mark.parametrize("emb,q", [
    (geo.plane(), (0.1, 0.2)),
    (geo.cylinder(1.2), (0.5, 0.1)),
    (geo.sphere(0.9), (1.1, 0.4)),
    (geo.torus(2.0, 0.7), (0.3, 2.2)),
    (geo.graph(lambda x, y: 0.3 * x * x - 0.2 * x * y), (0.2, -0.3)),
])
def test_gauss_equation_two_routes(emb, q):
    s = _scalars(emb, q)
    assert abs(s.gauss_residual) < 1e-6


def test_codimension_two_in_r4_has_normal_curvature_data():
    emb = geo.graph_r4(lambda x, y: 0.3 * x * y, lambda x, y: 0.2 * x * x - 0.1 * y * y)
    g = geo.embedding_at(emb, np.array([0.0, 0.0]))
    assert g.d == 2
    # at the origin T[mu] is the Hessian of f_mu
    H1 = np.array([[0.0, 0.3], [0.3, 0.0]])
    H2 = np.array([[0.4, 0.0], [0.0, -0.2]])
    assert np.allclose(np.abs(g.T[0]), np.abs(H1), atol=1e-6)
    assert np.allclose(np.abs(g.T[1]), np.abs(H2), atol=1e-6)
    assert abs(geo.curvature_scalars(g).gauss_residual) < 1e-6


def test_embedding_in_curved_ambient():
    # the equator of the round unit 2-sphere (as a curve) is a geodesic
    metric = lambda x: np.diag([1.0, math.sin(x[0]) ** 2])
    space = geo.AmbientSpace(2, metric, fd_step=1e-4)
    emb = geo.Embedding("equator", lambda p: np.array([math.pi / 2, p[0]]), 1, 2, ((0.0, 2 * math.pi),), (True,))
    g = geo.embedding_at(emb, np.array([0.5]), space=space)
    assert np.max(np.abs(g.T)) < 1e-6
    assert abs(np.einsum("abab->", g.R) - 2.0) < 1e-4


def test_frame_dimension_mismatch():
    with pytest.raises(FrameMismatch):
        geo.embedding_at(geo.plane(), np.zeros(2), normal_frame=np.array([[0.0, 0.0, 1.0, 0.0]]))


@given(st.floats(0.05, math.pi - 0.05), st.floats(0.0, 2 * math.pi), st.floats(0.3, 3.0))
def test_sphere_scalars_property(theta, phi, r):
    s = _scalars(geo.sphere(r), (theta, phi))
    assert abs(s.Tsq - 2 / r**2) < 1e-5 * max(1, 1 / r**2)
    assert abs(s.Msq - 4 / r**2) < 1e-5 * max(1, 1 / r**2)
