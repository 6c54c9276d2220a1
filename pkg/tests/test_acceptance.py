"""Acceptance criteria, one test group per criterion.

Each group records PASS/FAIL with a short detail line through the
``acceptance`` fixture; the summary is printed at the end of the session.
"""

import math
import time
from itertools import product

import numpy as np
import pytest

from oracles import quadrature_lambda, ring_levels
from qconstraint import geometry as geo
from qconstraint.checks import run_identity_suite
from qconstraint.effective import (
    curve_effective_field,
    extrapotential_forms,
    planar_effective_field,
    rotational_invariance_check,
    surface_effective_field,
    uniform_curve_field,
)
from qconstraint.framing import PotentialFrame
from qconstraint.solver import (
    ambient_oracle_2d,
    ambient_oracle_3d_twisted,
    discretize_tangential,
    eigensolve,
    strip_convergence,
)
from qconstraint.transverse import (
    TransversePotential,
    fock_lambda_matrix,
    harmonic_lambda2_closed_form,
    harmonic_lambda_matrices,
    harmonic_modes,
    interval_modes,
    rotational_modes,
)

TWO_PI = 2 * math.pi


def _arc_guide(lead, n):
    return geo.arclength_reparameterize(geo.arc_line(1.0, math.pi / 2, lead), n=n)


def _effective_ground(curve):
    return float(eigensolve(discretize_tangential(planar_effective_field(curve, interval_modes(0.05))), 1).values[0])


# -- 1 ------------------------------------------------------------------------------


def test_c1_planar_arc_extrapotential(acceptance):
    c = geo.arclength_reparameterize(geo.circle(1.0), n=128)
    f = planar_effective_field(c, interval_modes(0.1))
    exact = bool(np.all(f.Vex.total[:, 0, 0] == -0.125))
    forms = extrapotential_forms(geo.curvature_scalars(geo.planar_curve_geometry(1.0)))
    spread = max(forms) - min(forms)
    ok = exact and spread < 1e-12 and forms[0] == -0.125
    acceptance(1, ok, f"V_ex == -1/8 exactly: {exact}; form spread {spread:.1e}")
    assert ok


# -- 2 ------------------------------------------------------------------------------


def test_c2_bent_strip_epsilon_limit(acceptance):
    c = _arc_guide(1.0, 4001)
    E_eff = _effective_ground(c)
    t0 = time.perf_counter()
    rep = strip_convergence(c, [0.2, 0.1, 0.05], E_eff, n_a=400, n_u=40)
    secs = time.perf_counter() - t0
    errs = [r.abs_error for r in rep.rows]
    ok = rep.monotonic and rep.order >= 0.9 and rep.relative_error_last < 0.05
    acceptance(2, ok, f"errors {', '.join(f'{e:.2e}' for e in errs)}; order {rep.order:.3f}; "
                      f"rel {rep.relative_error_last:.2%} at eps 0.05; {secs:.1f} s")
    assert ok
    assert secs < 60


# -- 3 ------------------------------------------------------------------------------


def test_c3_curvature_bound_state(acceptance):
    c = _arc_guide(10.0, 8001)
    E_eff = _effective_ground(c)
    eps = 0.05
    s = ambient_oracle_2d(c, eps, n_a=1600, n_u=40, k_eigs=1)
    drop = float(s.offset_extrapolated[0])  # E_full - hbar^2 pi^2 / (2 eps^2)
    rel = abs(drop - E_eff) / abs(E_eff)
    ok = E_eff < 0 and drop < 0 and rel < 0.10
    acceptance(3, ok, f"effective {E_eff:.6g}; strip below threshold by {drop:.6g}; rel {rel:.2%}")
    assert ok


# -- 4 ------------------------------------------------------------------------------


@pytest.mark.parametrize("omegas", [(1.0, 1.0), (1.0, 2.0), (1.0, 5 / 3)], ids=["1", "2", "5/3"])
def test_c4_harmonic_lambda_closed_forms(omegas, acceptance):
    basis = list(product(range(4), repeat=2))
    L, L2 = quadrature_lambda(basis, omegas)
    err_L = max(float(np.max(np.abs(fock_lambda_matrix(basis, m, n, omegas) - L[m, n])))
                for m, n in product(range(2), repeat=2))
    err_L2 = 0.0
    diag = 0.0
    for i, occ in enumerate(basis):
        m = harmonic_lambda_matrices(harmonic_modes(omegas, [occ]))
        diag = max(diag, float(np.max(np.abs(m.Lambda[..., 0, 0]))))
        err_L2 = max(err_L2, float(np.max(np.abs(m.Lambda2[..., 0, 0] - L2[..., i, i]))),
                     float(np.max(np.abs(harmonic_lambda2_closed_form(occ, omegas) - L2[..., i, i]))))
    ok = err_L < 1e-8 and err_L2 < 1e-8 and diag < 1e-12
    ratio = omegas[1] / omegas[0]
    acceptance(4, ok, f"ratio {ratio:.4g}: Lambda {err_L:.1e}, Lambda2 {err_L2:.1e}, diag {diag:.1e}")
    assert ok


# -- 5 ------------------------------------------------------------------------------


def test_c5_twisted_tube_variance(acceptance):
    omegas = (1.0, 2.0)
    pot = TransversePotential.harmonic(omegas)
    E_perp = 0.5 * sum(omegas)
    var = float(harmonic_lambda2_closed_form((0, 0), omegas)[0, 1, 0, 1])
    _, L2 = quadrature_lambda([(0, 0)], omegas)
    var_q = float(np.real(L2[0, 1, 0, 1, 0, 0]))
    S0s = np.array([0.01, 0.02, 0.03, 0.04, 0.05])
    shift = np.array([ambient_oracle_3d_twisted(S, pot, TWO_PI, j_max=0, k_eigs=1).meta["blocks"][0][0]
                      for S in S0s]) - E_perp
    coef = float(np.sum(shift * S0s**2) / np.sum(S0s**4))  # pure S0^2 least squares
    fit_rel = abs(coef - 2 * var_q) / abs(2 * var_q)
    resid = float(np.max(np.abs(shift - 2 * var_q * S0s**2) / (2 * var_q * S0s**2)))
    # the library's effective twist term on a straight guide with a rotating frame
    line = geo.arclength_reparameterize(geo.line(TWO_PI), n=64)
    m = harmonic_lambda_matrices(harmonic_modes(omegas, [(0, 0)]))
    eff = [float(np.mean(curve_effective_field(line, PotentialFrame.along_curve(line, "constant_rate", rate=S), m)
                         .Vex.total[:, 0, 0].real)) for S in S0s]
    eff_rel = float(np.max(np.abs(np.array(eff) - shift) / np.abs(shift)))
    ok = fit_rel < 0.01 and resid < 0.01 and eff_rel < 0.01 and abs(var - var_q) < 1e-10
    acceptance(5, ok, f"fit coefficient {coef:.6g} vs 2 var {2 * var_q:.6g} ({fit_rel:.2%}); "
                      f"worst point {resid:.2%}; effective route {eff_rel:.2%}")
    assert ok


# -- 6 ------------------------------------------------------------------------------


@pytest.mark.parametrize("length,S", [(TWO_PI, 0.23), (TWO_PI, 0.71), (3.0, 0.4)])
def test_c6_gauge_flux_identity(length, S, acceptance):
    lam = float(np.real(rotational_modes(1.0, [1]).Lambda[0, 1, 0, 0]))
    a = 2 * S * lam
    exact = ring_levels(length, a, 8)[:11]  # the eleven lowest levels
    e1 = eigensolve(discretize_tangential(uniform_curve_field(length, 512, A=a)), 11).values
    e2 = eigensolve(discretize_tangential(uniform_curve_field(length, 512, A=a + TWO_PI / length)), 11).values
    rel = float(np.max(np.abs(e1 - exact) / exact))
    inv = float(np.max(np.abs(e1 - e2) / exact))
    ok = rel < 1e-3 and inv < 1e-3
    acceptance(6, ok, f"L={length:.4g}, 2S<Lambda>={a:.3g}: spectrum {rel:.1e}, flux shift {inv:.1e}")
    assert ok


# -- 7 ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def identity_suite():
    return {r.name: r for r in run_identity_suite()}


def test_c7_identity_suite(identity_suite, acceptance):
    scalene = identity_suite["scalene_triangle_lambda_nonvanishing"]
    rest = [r for n, r in identity_suite.items() if n != scalene.name]
    failed = [r.name for r in identity_suite.values() if not r.passed]
    acceptance(7, not failed, f"{len(identity_suite) - len(failed)}/{len(identity_suite)} items pass"
               + (f"; failing: {', '.join(failed)} (|<Lambda>| = {scalene.value:.1e})" if failed else ""))
    assert all(r.passed for r in rest), [r.line() for r in rest if not r.passed]
    names = set(identity_suite)
    assert {"gauss_plane", "gauss_cylinder", "gauss_sphere", "gauss_torus", "ds_identity_flat_torus_r4",
            "omega_commutators_d2", "reflection_square_lambda_vanishes",
            "reflection_harmonic_lambda_vanishes"} <= names
    assert any(n.startswith("vielbein") for n in names)


@pytest.mark.xfail(strict=True, reason="a real nondegenerate mode has <Lambda> = 0 by time reversal")
def test_c7_scalene_triangle_lambda_nonvanishing(identity_suite):
    assert identity_suite["scalene_triangle_lambda_nonvanishing"].passed


# -- 8 ------------------------------------------------------------------------------


@pytest.mark.parametrize("profile", [
    lambda a: 0.7 * np.sin(a) + 0.3 * np.sin(2 * a),
    lambda a: 1.5 * np.cos(3 * a) - 0.2,
], ids=["sin", "cos3"])
def test_c8_rotational_invariance(profile, acceptance):
    c = geo.arclength_reparameterize(geo.circle(1.0), n=256)
    fa = PotentialFrame.along_curve(c, "untwisted")
    fb = PotentialFrame.along_curve(c, "rotation", theta=profile)
    worst = 0.0
    for ms in ([1, -1], [0], [2, -2]):
        rep = rotational_invariance_check(c, fa, fb, rotational_modes(0.1, ms))
        worst = max(worst, rep.max_difference)
    ok = worst < 1e-8
    acceptance(8, ok, f"max spectral difference {worst:.1e}")
    assert ok


# -- 9 ------------------------------------------------------------------------------


@pytest.mark.parametrize("emb,shape,expected", [
    (geo.sphere(1.0), (16, 32), 0.0),
    (geo.cylinder(1.0, 2.0), (16, 16), -0.125),
    (geo.torus(2.0, 1.0), (16, 16), None),
], ids=["sphere", "cylinder", "torus"])
def test_c9_codim1_separation(emb, shape, expected, acceptance):
    f = surface_effective_field(emb, shape, interval_modes(0.1))
    V = f.Vex.total
    gauge_zero = bool(np.all(f.A == 0.0))
    k = V.shape[-1]
    off = float(np.max(np.abs(V - V[..., :1, :1] * np.eye(k))))
    ok = gauge_zero and off == 0.0
    detail = f"{emb.name}: A == 0 {gauge_zero}"
    if expected is not None:
        dev = float(np.max(np.abs(V - expected)))
        ok = ok and dev < 1e-8
        detail += f", |V_ex - ({expected:g})| {dev:.1e}"
    acceptance(9, ok, detail)
    assert ok
