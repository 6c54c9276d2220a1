"""Intrinsic and extrinsic geometry of the constraint manifold.

Curves are handled through Frenet data (with a parallel-transport fallback
on straight stretches); general embeddings through the second fundamental
form and the ambient Riemann tensor, all stored in orthonormal frame
components.

Index conventions
-----------------
* ``T[mu, i, j] = <E_mu, nabla_{E_i} E_j>`` (normal index first).
* ``R[a, b, c, d] = <E_a, R(E_c, E_d) E_b>`` with
  ``R(X, Y) = [nabla_X, nabla_Y] - nabla_[X, Y]``; the round sphere has
  positive scalar curvature.
* Combined frames list the ``d`` normals first, then the ``m`` tangents.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (
    DegenerateFrame,
    FrameMismatch,
    NonUnitSpeed,
    SingularMetric,
    ZeroSpeed,
)
from .numerics import derivative, gram_schmidt, mixed_partial, orthonormal_complement, partial

log = logging.getLogger(__name__)

KAPPA_MIN = 1e-8
# higher derivatives use proportionally larger steps so roundoff stays
# below truncation error
_STEP_SCALE = {1: 1.0, 2: 50.0, 3: 500.0}


# ---------------------------------------------------------------------------
# ambient space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AmbientSpace:
    """Ambient Riemannian manifold given in a single coordinate chart.

    ``metric`` maps a point to the ``dim x dim`` metric matrix; ``None``
    means flat Euclidean space.
    """

    dim: int
    metric: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("ambient dimension must be positive")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")

    @classmethod
    def flat(cls, dim: int) -> "AmbientSpace":
        return cls(dim=dim)

    @property
    def is_flat(self) -> bool:
        return self.metric is None

    def g(self, x) -> np.ndarray:
        """Metric at ``x``; validates symmetry and positive definiteness."""
        if self.metric is None:
            return np.eye(self.dim)
        G = np.asarray(self.metric(np.asarray(x, dtype=float)), dtype=float)
        if G.shape != (self.dim, self.dim):
            raise SingularMetric(f"metric has shape {G.shape}, expected {(self.dim, self.dim)}")
        if np.max(np.abs(G - G.T)) > 1e-12 * max(1.0, np.max(np.abs(G))):
            raise SingularMetric("metric is not symmetric")
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError as exc:
            raise SingularMetric("metric is not positive definite") from exc
        return G

    def inner(self, x, v, w) -> float:
        return float(np.asarray(v) @ self.g(x) @ np.asarray(w))

    def christoffel(self, x) -> np.ndarray:
        """``Gamma[a, b, c]`` = Γ^a_{bc} from central differences of the metric."""
        if self.metric is None:
            return np.zeros((self.dim,) * 3)
        x = np.asarray(x, dtype=float)
        ginv = _inverse(self.g(x))
        dg = np.array([partial(self.g, x, k, self.fd_step) for k in range(self.dim)])  # dg[k,a,b]
        return _christoffel_from(ginv, dg)


def _inverse(G: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise SingularMetric("metric inversion failed") from exc


def _christoffel_from(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    # Γ^a_{bc} = ½ g^{ad}(∂_b g_{dc} + ∂_c g_{db} − ∂_d g_{bc})
    lower = 0.5 * (np.einsum("bdc->dbc", dg) + np.einsum("cdb->dbc", dg) - dg)
    return np.einsum("ad,dbc->abc", ginv, lower)


def ambient_riemann(space: AmbientSpace, x) -> np.ndarray:
    """Coordinate components ``R_abcd`` (first index lowered) at ``x``.

    Christoffel symbols and their derivatives come from central differences
    of the metric; second derivatives use a step ten times ``fd_step``.
    """
    n = space.dim
    if space.metric is None:
        return np.zeros((n,) * 4)
    x = np.asarray(x, dtype=float)
    h1 = space.fd_step
    h2 = 10.0 * space.fd_step
    G = space.g(x)
    ginv = _inverse(G)
    dg = np.array([partial(space.g, x, k, h1) for k in range(n)])
    ddg = np.empty((n, n, n, n))  # ddg[e, k, a, b] = ∂_e ∂_k g_ab
    for e in range(n):
        for k in range(e, n):
            val = mixed_partial(space.g, x, e, k, h2)
            ddg[e, k] = val
            ddg[k, e] = val
    gamma = _christoffel_from(ginv, dg)
    # ∂_e Γ^a_{bc} = (∂_e g^{ad}) L_dbc + g^{ad} ∂_e L_dbc
    lower = 0.5 * (np.einsum("bdc->dbc", dg) + np.einsum("cdb->dbc", dg) - dg)
    dginv = -np.einsum("ap,epq,qd->ead", ginv, dg, ginv)
    dlower = 0.5 * (
        np.einsum("ebdc->edbc", ddg) + np.einsum("ecdb->edbc", ddg) - ddg
    )
    dgamma = np.einsum("ead,dbc->eabc", dginv, lower) + np.einsum("ad,edbc->eabc", ginv, dlower)
    # R^a_{bcd} = ∂_c Γ^a_{db} − ∂_d Γ^a_{cb} + Γ^a_{ce} Γ^e_{db} − Γ^a_{de} Γ^e_{cb}
    Rup = (
        np.einsum("cadb->abcd", dgamma)
        - np.einsum("dacb->abcd", dgamma)
        + np.einsum("ace,edb->abcd", gamma, gamma)
        - np.einsum("ade,ecb->abcd", gamma, gamma)
    )
    return np.einsum("ae,ebcd->abcd", G, Rup)


def riemann_symmetry_residual(R: np.ndarray) -> float:
    """Max violation of the antisymmetries and pair symmetry of ``R``."""
    r1 = R + np.swapaxes(R, 0, 1)
    r2 = R + np.swapaxes(R, 2, 3)
    r3 = R - np.transpose(R, (2, 3, 0, 1))
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2)), np.max(np.abs(r3)))) if R.size else 0.0


def project_curvature_symmetries(R: np.ndarray) -> np.ndarray:
    """Project onto tensors with the algebraic symmetries of a Riemann tensor."""
    R = 0.5 * (R - np.swapaxes(R, 0, 1))
    R = 0.5 * (R - np.swapaxes(R, 2, 3))
    return 0.5 * (R + np.transpose(R, (2, 3, 0, 1)))


def scalar_curvature(space: AmbientSpace, x) -> float:
    """``g^{ac} g^{bd} R_abcd`` at ``x``."""
    R = ambient_riemann(space, x)
    ginv = _inverse(space.g(x))
    return float(np.einsum("ac,bd,abcd->", ginv, ginv, R))


def frame_riemann(R_coord: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Transform coordinate ``R_abcd`` to components in ``frame`` (rows = vectors)."""
    return np.einsum("ai,bj,ck,dl,ijkl->abcd", frame, frame, frame, frame, R_coord, optimize=True)


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrenetFrame:
    t: np.ndarray
    n: np.ndarray
    b: np.ndarray
    kappa: float
    tau: float  # nan where undefined (parallel-transport fallback)
    transported: bool = False


def _frenet_general(curve_map, s: float, h: float):
    """Frenet quantities for an arbitrary regular parameterization."""
    r1 = derivative(curve_map, s, 1, h * _STEP_SCALE[1])
    r2 = derivative(curve_map, s, 2, h * _STEP_SCALE[2])
    r3 = derivative(curve_map, s, 3, h * _STEP_SCALE[3])
    speed = float(np.linalg.norm(r1))
    if speed < 1e-12:
        raise ZeroSpeed(f"curve speed {speed:.3e} at parameter {s}")
    t = r1 / speed
    c = np.cross(r1, r2)
    cn = float(np.linalg.norm(c))
    kappa = cn / speed**3
    return t, c, cn, kappa, r3, speed


def _seed_normal(t: np.ndarray) -> np.ndarray:
    """Deterministic normal: the coordinate axis least aligned with ``t``."""
    axis = int(np.argmin(np.abs(t)))  # ties resolve to the lowest index
    e = np.zeros(3)
    e[axis] = 1.0
    n = e - (e @ t) * t
    return n / np.linalg.norm(n)


def _transport_normal(t: np.ndarray, n_prev: np.ndarray) -> np.ndarray:
    n = n_prev - (n_prev @ t) * t
    nrm = np.linalg.norm(n)
    if nrm < 1e-12:
        return _seed_normal(t)
    return n / nrm


def frenet_data(
    curve_map: Callable[[float], np.ndarray],
    alpha: float,
    h: float = 1e-4,
    prior: Optional[FrenetFrame] = None,
    kappa_min: float = KAPPA_MIN,
    seed: bool = True,
    check_speed: bool = True,
) -> FrenetFrame:
    """Frenet frame, curvature and torsion of a unit-speed curve at ``alpha``.

    Derivatives are 4th-order central differences; the k-th derivative uses
    step ``h * (1, 50, 500)[k-1]``. Below ``kappa_min`` the normal is carried
    over from ``prior`` by parallel transport (or seeded from the coordinate
    axis least aligned with the tangent) and ``tau`` is returned as nan.

    Raises
    ------
    NonUnitSpeed
        If ``|dx/dalpha|`` differs from 1 by more than 1e-6.
    DegenerateFrame
        If the curve is straight here, no prior frame exists and seeding is off.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    t, c, cn, kappa, r3, speed = _frenet_general(curve_map, alpha, h)
    if check_speed and abs(speed - 1.0) > 1e-6:
        raise NonUnitSpeed(f"|dx/dalpha| = {speed:.9f} at alpha={alpha}; reparameterize by arclength first")
    if kappa < kappa_min:
        if prior is not None:
            n = _transport_normal(t, prior.n)
        elif seed:
            n = _seed_normal(t)
        else:
            raise DegenerateFrame(f"kappa={kappa:.2e} below kappa_min at alpha={alpha} and no prior frame")
        return FrenetFrame(t, n, np.cross(t, n), 0.0, math.nan, True)
    b = c / cn
    n = np.cross(b, t)
    tau = float(c @ r3) / cn**2
    return FrenetFrame(t, n, b, float(kappa), tau, False)


@dataclass(frozen=True)
class CurveFamily:
    """A parameterized space curve ``s -> x(s)`` on ``[s0, s1]``.

    ``exact`` optionally supplies closed-form Frenet data as a function of
    arclength (used by composite curves whose curvature jumps).
    """

    name: str
    curve_map: Callable[[float], np.ndarray]
    s0: float
    s1: float
    closed: bool = False
    unit_speed: bool = False
    exact: Optional[Callable[[float], dict]] = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CurveGeometry:
    """Arclength-sampled curve with Frenet data.

    ``tau`` is nan where the Frenet frame is replaced by parallel transport.
    ``kappa_signed`` is the curvature signed relative to the left normal
    ``z x t`` for curves in the xy-plane (nan for non-planar curves).
    """

    alpha: np.ndarray
    points: np.ndarray
    t: np.ndarray
    n: np.ndarray
    b: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray
    closed: bool
    length: float
    kappa_signed: np.ndarray
    seam_flip: bool = False
    family: Optional[CurveFamily] = None

    @property
    def n_samples(self) -> int:
        return len(self.alpha)

    @property
    def planar(self) -> bool:
        return bool(np.all(np.isfinite(self.kappa_signed)))

    @property
    def spacing(self) -> float:
        return float(self.alpha[1] - self.alpha[0])

    def signed_curvature_at(self, alpha) -> np.ndarray:
        """Signed curvature at arbitrary arclength values.

        Uses the family's closed form when available, otherwise linear
        interpolation of the samples (periodic for closed curves).
        """
        alpha = np.asarray(alpha, dtype=float)
        if self.family is not None and self.family.exact is not None:
            f = np.vectorize(lambda a: self.family.exact(float(a))["kappa_signed"])
            return f(alpha).astype(float)
        if not self.planar:
            raise ValueError("signed curvature requested for a non-planar curve")
        if self.closed:
            return np.interp(alpha, self.alpha, self.kappa_signed, period=self.length)
        return np.interp(alpha, self.alpha, self.kappa_signed)

    def frame_check(self) -> float:
        """Max orthonormality defect of the stored frames."""
        F = np.stack([self.t, self.n, self.b], axis=1)
        gram = np.einsum("sai,sbi->sab", F, F)
        return float(np.max(np.abs(gram - np.eye(3))))


def _arclength_map(family: CurveFamily, n: int, h: float):
    """Sample arclength grid and the matching curve parameters."""
    def speed(s):
        return float(np.linalg.norm(derivative(family.curve_map, s, 1, h)))

    if family.unit_speed:
        length = family.s1 - family.s0
    else:
        s_grid = np.linspace(family.s0, family.s1, max(n, 16) * 4 + 1)
        speeds = np.array([speed(s) for s in s_grid])
        if np.min(speeds) < 1e-12:
            raise ZeroSpeed(f"|dx/ds| = {np.min(speeds):.2e} on the sampling grid")
        length, _ = quad(speed, family.s0, family.s1, epsabs=1e-13, epsrel=1e-13, limit=500)
    if family.closed:
        alpha = length * np.arange(n) / n
    else:
        alpha = np.linspace(0.0, length, n)
    if family.unit_speed:
        return alpha, family.s0 + alpha, length
    sol = solve_ivp(
        lambda a, s: [1.0 / speed(s[0])],
        (0.0, length),
        [family.s0],
        t_eval=alpha,
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
    )
    s_of_alpha = sol.y[0]
    # polish each sample with Newton steps on the cumulative length
    for j in range(1, len(alpha)):
        s = s_of_alpha[j]
        for _ in range(2):
            seg, _ = quad(speed, s_of_alpha[j - 1], s, epsabs=1e-13, epsrel=1e-12, limit=100)
            s = s - (seg - (alpha[j] - alpha[j - 1])) / speed(s)
        s_of_alpha[j] = s
    return alpha, s_of_alpha, length


def arclength_reparameterize(
    curve_map: Callable[[float], np.ndarray] | CurveFamily,
    s0: float | None = None,
    s1: float | None = None,
    n: int = 256,
    closed: bool = False,
    h: float = 1e-4,
    kappa_min: float = KAPPA_MIN,
) -> CurveGeometry:
    """Resample a curve at equal arclength spacing and attach Frenet data.

    The total length is an adaptive quadrature of ``|dx/ds|``; the map
    ``alpha -> s`` is integrated from ``ds/dalpha = 1/|dx/ds|`` and polished
    sample by sample so that consecutive samples are ``dalpha`` apart in
    arclength to quadrature accuracy.
    """
    if isinstance(curve_map, CurveFamily):
        family = curve_map
    else:
        if s0 is None or s1 is None:
            raise ValueError("s0 and s1 are required for a bare curve map")
        family = CurveFamily("custom", curve_map, float(s0), float(s1), closed=closed)
    if n < 16:
        raise ValueError("need at least 16 samples")
    alpha, s_vals, length = _arclength_map(family, n, h)

    pts = np.array([np.asarray(family.curve_map(s), dtype=float) for s in s_vals])
    T = np.empty((n, 3)); N = np.empty((n, 3)); B = np.empty((n, 3))
    kap = np.empty(n); tau = np.empty(n)
    prior: Optional[FrenetFrame] = None
    for j, (a, s) in enumerate(zip(alpha, s_vals)):
        if family.exact is not None:
            ex = family.exact(float(a))
            if ex["kappa"] >= kappa_min:
                fr = FrenetFrame(ex["t"], ex["n"], ex["b"], ex["kappa"], ex["tau"], False)
            else:
                t = np.asarray(ex["t"], dtype=float)
                nn = _transport_normal(t, prior.n) if prior is not None else _seed_normal(t)
                fr = FrenetFrame(t, nn, np.cross(t, nn), 0.0, math.nan, True)
        else:
            t, c, cn, k, r3, _ = _frenet_general(family.curve_map, s, h)
            if k < kappa_min:
                nn = _transport_normal(t, prior.n) if prior is not None else _seed_normal(t)
                fr = FrenetFrame(t, nn, np.cross(t, nn), 0.0, math.nan, True)
            else:
                b = c / cn
                # torsion formula is parameterization invariant
                fr = FrenetFrame(t, np.cross(b, t), b, float(k), float(c @ r3) / cn**2, False)
        T[j], N[j], B[j], kap[j], tau[j] = fr.t, fr.n, fr.b, fr.kappa, fr.tau
        prior = fr

    planar_z = np.max(np.abs(pts[:, 2])) < 1e-12 and np.all(np.abs(T[:, 2]) < 1e-12)
    if planar_z:
        left = np.stack([-T[:, 1], T[:, 0], np.zeros(n)], axis=1)
        if family.exact is not None:
            ks = np.array([family.exact(float(a))["kappa_signed"] for a in alpha])
        else:
            ks = kap * np.sign(np.einsum("ij,ij->i", N, left))
            ks[kap < kappa_min] = 0.0
    else:
        ks = np.full(n, np.nan)

    seam_flip = False
    if family.closed:
        nxt = _transport_normal(T[0], N[-1])
        seam_flip = bool(nxt @ N[0] < 0)
        if seam_flip:
            log.warning("closed curve %s: normal flips across the seam", family.name)

    return CurveGeometry(alpha, pts, T, N, B, kap, tau, family.closed, float(length), ks, seam_flip, family)


# named curve families -------------------------------------------------------


def circle(radius: float = 1.0) -> CurveFamily:
    if not radius > 0:
        raise ValueError("radius must be positive")
    L = 2 * math.pi * radius

    def x(s):
        return np.array([radius * math.cos(s / radius), radius * math.sin(s / radius), 0.0])

    def exact(a):
        c, s_ = math.cos(a / radius), math.sin(a / radius)
        t = np.array([-s_, c, 0.0])
        n = np.array([-c, -s_, 0.0])
        return dict(t=t, n=n, b=np.array([0.0, 0.0, 1.0]), kappa=1 / radius, tau=0.0, kappa_signed=1 / radius)

    return CurveFamily("circle", x, 0.0, L, closed=True, unit_speed=True, exact=exact, params={"radius": radius})


def helix(a: float = 3.0, b: float = 4.0, turns: float = 1.0, closed_form: bool = True) -> CurveFamily:
    """Helix ``(a cos(s/c), a sin(s/c), b s/c)`` with ``c = sqrt(a^2+b^2)``.

    ``closed_form=False`` forces numerical Frenet data.
    """
    c = math.hypot(a, b)

    def x(s):
        return np.array([a * math.cos(s / c), a * math.sin(s / c), b * s / c])

    def exact(s):
        cs, sn = math.cos(s / c), math.sin(s / c)
        return dict(t=np.array([-a * sn / c, a * cs / c, b / c]), n=np.array([-cs, -sn, 0.0]),
                    b=np.array([b * sn / c, -b * cs / c, a / c]), kappa=a / c**2, tau=b / c**2,
                    kappa_signed=math.nan)

    return CurveFamily("helix", x, 0.0, 2 * math.pi * c * turns, unit_speed=True,
                       exact=exact if closed_form else None, params={"a": a, "b": b, "turns": turns})


def ellipse(a: float = 2.0, b: float = 1.0) -> CurveFamily:
    def x(s):
        return np.array([a * math.cos(s), b * math.sin(s), 0.0])

    return CurveFamily("ellipse", x, 0.0, 2 * math.pi, closed=True, params={"a": a, "b": b})


def line(length: float = 1.0) -> CurveFamily:
    def x(s):
        return np.array([s, 0.0, 0.0])

    def exact(a):
        return dict(t=np.array([1.0, 0.0, 0.0]), n=None, b=None, kappa=0.0, tau=math.nan, kappa_signed=0.0)

    return CurveFamily("line", x, 0.0, float(length), unit_speed=True, exact=exact, params={"length": length})


def arc_line(radius: float = 1.0, angle: float = math.pi / 2, lead: float = 1.0) -> CurveFamily:
    """Planar guide: straight lead, circular arc turning left, straight lead."""
    rho = float(radius)
    arc = rho * angle
    L = 2 * lead + arc
    end = np.array([rho * math.sin(angle), rho * (1 - math.cos(angle)), 0.0])
    d_end = np.array([math.cos(angle), math.sin(angle), 0.0])

    def x(a):
        if a <= lead:
            return np.array([a - lead, 0.0, 0.0])
        if a <= lead + arc:
            phi = (a - lead) / rho
            return np.array([rho * math.sin(phi), rho * (1 - math.cos(phi)), 0.0])
        return end + (a - lead - arc) * d_end

    def exact(a):
        if lead <= a <= lead + arc:
            phi = (a - lead) / rho
            t = np.array([math.cos(phi), math.sin(phi), 0.0])
            n = np.array([-math.sin(phi), math.cos(phi), 0.0])
            return dict(t=t, n=n, b=np.array([0.0, 0.0, 1.0]), kappa=1 / rho, tau=0.0, kappa_signed=1 / rho)
        t = np.array([1.0, 0.0, 0.0]) if a < lead else d_end
        return dict(t=t, n=None, b=None, kappa=0.0, tau=math.nan, kappa_signed=0.0)

    return CurveFamily("arc_line", x, 0.0, L, unit_speed=True, exact=exact,
                       params={"radius": rho, "angle": angle, "lead": lead})


def curve_from_table(path: str | Path, closed: Optional[bool] = None) -> CurveFamily:
    """Curve from a CSV table with columns ``alpha,x,y,z`` (cubic spline)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"alpha", "x", "y", "z"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for r in reader:
            rows.append([float(r["alpha"]), float(r["x"]), float(r["y"]), float(r["z"])])
    data = np.array(rows)
    if len(data) < 4:
        raise ValueError(f"{path}: need at least 4 samples")
    if np.any(np.diff(data[:, 0]) <= 0):
        raise ValueError(f"{path}: alpha must be strictly increasing")
    if closed is None:
        closed = bool(np.allclose(data[0, 1:], data[-1, 1:], atol=1e-12))
    if closed and not np.allclose(data[0, 1:], data[-1, 1:], atol=1e-12):
        data = np.vstack([data, np.r_[2 * data[-1, 0] - data[-2, 0], data[0, 1:]]])
    spline = CubicSpline(data[:, 0], data[:, 1:], bc_type="periodic" if closed else "not-a-knot")
    return CurveFamily(f"table:{Path(path).name}", lambda s: spline(s), float(data[0, 0]), float(data[-1, 0]),
                       closed=closed, params={"file": str(path)})


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Embedding:
    """Coordinate patch ``params (m,) -> R^N`` of an m-dimensional submanifold."""

    name: str
    embed: Callable[[np.ndarray], np.ndarray]
    m: int
    N: int
    bounds: tuple
    periodic: tuple
    params: dict = field(default_factory=dict)
    normal_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None


def plane(size: float = 1.0) -> Embedding:
    return Embedding("plane", lambda p: np.array([p[0], p[1], 0.0]), 2, 3,
                     ((-size, size), (-size, size)), (False, False), {"size": size},
                     lambda p: np.array([[0.0, 0.0, 1.0]]))


def cylinder(radius: float = 1.0, length: float = 2.0) -> Embedding:
    """Parameters ``(phi, z)``; phi periodic."""
    return Embedding(
        "cylinder",
        lambda p: np.array([radius * math.cos(p[0]), radius * math.sin(p[0]), p[1]]),
        2, 3, ((0.0, 2 * math.pi), (0.0, length)), (True, False), {"radius": radius, "length": length},
        lambda p: np.array([[math.cos(p[0]), math.sin(p[0]), 0.0]]),
    )


def sphere(radius: float = 1.0) -> Embedding:
    """Parameters ``(theta, phi)``: polar angle then azimuth."""
    def x(p):
        st = math.sin(p[0])
        return radius * np.array([st * math.cos(p[1]), st * math.sin(p[1]), math.cos(p[0])])

    return Embedding("sphere", x, 2, 3, ((0.0, math.pi), (0.0, 2 * math.pi)), (False, True), {"radius": radius},
                     lambda p: x(p)[None, :] / radius)


def torus(R: float = 2.0, r: float = 1.0) -> Embedding:
    """Parameters ``(u, v)``: ``v`` is the tube angle, ``v = 0`` on the outer equator."""
    def x(p):
        u, v = p
        w = R + r * math.cos(v)
        return np.array([w * math.cos(u), w * math.sin(u), r * math.sin(v)])

    def normal(p):
        u, v = p
        return np.array([[math.cos(v) * math.cos(u), math.cos(v) * math.sin(u), math.sin(v)]])

    return Embedding("torus", x, 2, 3, ((0.0, 2 * math.pi), (0.0, 2 * math.pi)), (True, True), {"R": R, "r": r},
                     normal)


def graph(f: Callable[[float, float], float], size: float = 1.0, name: str = "graph") -> Embedding:
    return Embedding(name, lambda p: np.array([p[0], p[1], f(p[0], p[1])]), 2, 3,
                     ((-size, size), (-size, size)), (False, False), {"size": size})


def flat_torus_r4(r1: float = 1.0, r2: float = 1.0) -> Embedding:
    """Clifford-type flat torus ``(r1 cos u, r1 sin u, r2 cos v, r2 sin v)`` in R^4."""
    def x(p):
        u, v = p
        return np.array([r1 * math.cos(u), r1 * math.sin(u), r2 * math.cos(v), r2 * math.sin(v)])

    def normal(p):
        u, v = p
        return np.array([[math.cos(u), math.sin(u), 0.0, 0.0], [0.0, 0.0, math.cos(v), math.sin(v)]])

    return Embedding("flat_torus_r4", x, 2, 4, ((0.0, 2 * math.pi), (0.0, 2 * math.pi)), (True, True),
                     {"r1": r1, "r2": r2}, normal)


def graph_r4(f1: Callable, f2: Callable, size: float = 1.0) -> Embedding:
    """Two-dimensional graph ``(x, y, f1(x,y), f2(x,y))`` in R^4."""
    return Embedding("graph_r4", lambda p: np.array([p[0], p[1], f1(p[0], p[1]), f2(p[0], p[1])]), 2, 4,
                     ((-size, size), (-size, size)), (False, False), {"size": size})


@dataclass(frozen=True)
class EmbeddingGeometry:
    """Point data of an embedded submanifold in orthonormal frame components.

    ``R`` is indexed over the combined frame (normals first). ``coeffs``
    expresses the tangent frame in parameter directions:
    ``E_i = sum_k coeffs[i, k] d/dp_k``.
    """

    m: int
    d: int
    point: np.ndarray
    params: np.ndarray
    tangent_frame: np.ndarray
    normal_frame: np.ndarray
    T: np.ndarray
    R: np.ndarray
    coeffs: Optional[np.ndarray] = None
    R_hat_intrinsic: Optional[float] = None
    T_asymmetry: float = 0.0

    def __post_init__(self):
        if self.T.shape != (self.d, self.m, self.m):
            raise FrameMismatch(f"T has shape {self.T.shape}, expected {(self.d, self.m, self.m)}")
        n = self.m + self.d
        if self.R.shape != (n, n, n, n):
            raise FrameMismatch(f"R has shape {self.R.shape}, expected {(n,) * 4}")


def _coordinate_tangents(space: AmbientSpace, embed, p: np.ndarray, h: float) -> np.ndarray:
    return np.array([partial(embed, p, k, h) for k in range(len(p))])


def _tangent_frame_field(space: AmbientSpace, embed, p: np.ndarray, h: float):
    """Gram-Schmidt tangent frame at parameters ``p`` and its coefficient matrix."""
    J = _coordinate_tangents(space, embed, p, h)
    G = space.g(embed(p))
    E = gram_schmidt(J, G)
    # E = C J  =>  C = E J^+ (exact since rows of E lie in span J)
    C = E @ np.linalg.pinv(J)
    return E, C


def _check_orthonormal(space: AmbientSpace, x, vecs: np.ndarray, what: str, tol: float = 1e-10):
    G = space.g(x)
    gram = vecs @ G @ vecs.T
    err = np.max(np.abs(gram - np.eye(len(vecs)))) if len(vecs) else 0.0
    if err > tol:
        raise FrameMismatch(f"{what} frame not orthonormal (defect {err:.2e})")


def second_fundamental_form(
    space: AmbientSpace,
    embed: Callable[[np.ndarray], np.ndarray],
    frames: tuple[np.ndarray, np.ndarray],
    q,
    h: float = 1e-4,
    return_asymmetry: bool = False,
):
    """``T[mu, i, j] = <E_mu, nabla_{E_i} E_j>`` at parameters ``q``.

    The tangent frame field is Gram-Schmidt on coordinate tangents; its
    derivatives are central differences along parameter directions (step
    ``10 h`` over an inner step ``h``). The result is expressed in the
    supplied frames and symmetrized; the pre-symmetrization defect is
    returned when ``return_asymmetry`` is set.
    """
    q = np.asarray(q, dtype=float)
    tangent, normal = (np.atleast_2d(np.asarray(f, dtype=float)) for f in frames)
    m = len(q)
    x = np.asarray(embed(q), dtype=float)
    N = len(x)
    if tangent.shape != (m, N) or normal.shape[1] != N or len(normal) != N - m:
        raise FrameMismatch(f"frames have shapes {tangent.shape}, {normal.shape} for m={m}, N={N}")
    _check_orthonormal(space, x, tangent, "tangent")
    _check_orthonormal(space, x, normal, "normal")
    G = space.g(x)
    if np.max(np.abs(tangent @ G @ normal.T)) > 1e-10:
        raise FrameMismatch("normal frame not orthogonal to tangent frame")

    E0, C = _tangent_frame_field(space, embed, q, h)
    step = 10.0 * h
    dE = np.array([
        derivative(lambda s, k=k: _tangent_frame_field(space, embed, q + s * np.eye(m)[k], h)[0], 0.0, 1, step)
        for k in range(m)
    ])  # dE[k, j, :] = ∂_k E_j
    cov = np.einsum("ik,kja->ija", C, dE)
    if not space.is_flat:
        gamma = space.christoffel(x)
        cov = cov + np.einsum("abc,ib,jc->ija", gamma, E0, E0)
    T_gs = np.einsum("ma,ab,ijb->mij", normal, G, cov)
    Q = tangent @ G @ E0.T  # rotation from Gram-Schmidt frame to supplied frame
    T = np.einsum("ik,mkl,jl->mij", Q, T_gs, Q)
    asym = float(np.max(np.abs(T - np.swapaxes(T, 1, 2)))) if T.size else 0.0
    T = 0.5 * (T + np.swapaxes(T, 1, 2))
    if return_asymmetry:
        return T, asym
    return T


def induced_space(space: AmbientSpace, embed, h: float = 1e-4, fd_step: float = 1e-3, m: int = 2) -> AmbientSpace:
    """The submanifold as a Riemannian manifold in its own parameters."""
    def metric(p):
        J = _coordinate_tangents(space, embed, p, h)
        Gm = J @ space.g(embed(p)) @ J.T
        return 0.5 * (Gm + Gm.T)

    return AmbientSpace(dim=m, metric=metric, fd_step=fd_step)


def embedding_at(
    emb: Embedding,
    q,
    space: Optional[AmbientSpace] = None,
    normal_frame: Optional[np.ndarray] = None,
    tangent_frame: Optional[np.ndarray] = None,
    h: float = 1e-4,
    intrinsic: bool = True,
    intrinsic_step: float = 1e-3,
) -> EmbeddingGeometry:
    """Assemble :class:`EmbeddingGeometry` at parameters ``q`` of ``emb``."""
    space = space or AmbientSpace.flat(emb.N)
    if space.dim != emb.N:
        raise FrameMismatch(f"ambient dimension {space.dim} != embedding target {emb.N}")
    q = np.asarray(q, dtype=float)
    x = np.asarray(emb.embed(q), dtype=float)
    E0, C = _tangent_frame_field(space, emb.embed, q, h)
    G = space.g(x)
    if tangent_frame is None:
        tangent = E0
    else:
        tangent = np.atleast_2d(np.asarray(tangent_frame, dtype=float))
        C = (tangent @ G @ E0.T) @ C
    if normal_frame is None and emb.normal_fn is not None and space.is_flat:
        normal = np.atleast_2d(emb.normal_fn(q))
    elif normal_frame is None:
        normal = orthonormal_complement(tangent, emb.N, G)
    else:
        normal = np.atleast_2d(np.asarray(normal_frame, dtype=float))
    T, asym = second_fundamental_form(space, emb.embed, (tangent, normal), q, h, return_asymmetry=True)
    frame = np.vstack([normal, tangent])
    R = project_curvature_symmetries(frame_riemann(ambient_riemann(space, x), frame))
    R_hat = None
    if intrinsic:
        R_hat = 0.0 if emb.m == 1 else scalar_curvature(induced_space(space, emb.embed, h, intrinsic_step, emb.m), q)
    return EmbeddingGeometry(emb.m, emb.N - emb.m, x, q, tangent, normal, T, R, C, R_hat, asym)


def curve_embedding_geometry(curve: CurveGeometry, j: int, normal_frame: np.ndarray) -> EmbeddingGeometry:
    """Point data of a curve in flat R^3 at sample ``j`` in a given normal frame."""
    E = np.atleast_2d(np.asarray(normal_frame, dtype=float))
    d = E.shape[0]
    if E.shape[1] != curve.points.shape[1]:
        raise FrameMismatch("normal frame dimension does not match the curve")
    # nabla_t t = kappa n for a unit-speed curve
    T = (curve.kappa[j] * (E @ curve.n[j])).reshape(d, 1, 1)
    if curve.kappa[j] == 0.0:
        T = np.zeros((d, 1, 1))
    R = np.zeros((d + 1,) * 4)
    return EmbeddingGeometry(1, d, curve.points[j], np.array([curve.alpha[j]]), curve.t[j][None, :], E, T, R,
                             np.eye(1), 0.0, 0.0)


def planar_curve_geometry(kappa_signed: float) -> EmbeddingGeometry:
    """Point data of a curve in the flat plane (codimension one)."""
    T = np.array([[[kappa_signed]]])
    return EmbeddingGeometry(1, 1, np.zeros(2), np.zeros(1), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]),
                             T, np.zeros((2, 2, 2, 2)), np.eye(1), 0.0, 0.0)


# ---------------------------------------------------------------------------
# scalars
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvatureScalars:
    """Curvature contractions entering the extrapotential (units 1/length^2).

    ``R_hat`` follows from the Gauss equation; ``R_hat_intrinsic`` (when
    available) is computed from the induced metric alone and
    ``gauss_residual`` compares the two routes.
    """

    Tsq: float
    Msq: float
    R_full: float
    R_perp: float
    R_par: float
    R_hat: float
    R_hat_intrinsic: Optional[float] = None
    gauss_residual: Optional[float] = None


def curvature_scalars(geom: EmbeddingGeometry) -> CurvatureScalars:
    T, R, d, m = geom.T, geom.R, geom.d, geom.m
    Tsq = float(np.sum(T * T))
    H = np.einsum("mii->m", T)
    Msq = float(H @ H)
    R_full = float(np.einsum("abab->", R))
    R_perp = 0.0 if d == 1 else float(np.einsum("abab->", R[:d, :d, :d, :d]))
    R_par = float(np.einsum("abab->", R[d:, d:, d:, d:]))
    R_hat = Msq - Tsq + R_par
    residual = None
    if geom.R_hat_intrinsic is not None:
        residual = Tsq - Msq + geom.R_hat_intrinsic - R_par
    return CurvatureScalars(Tsq, Msq, R_full, R_perp, R_par, R_hat, geom.R_hat_intrinsic, residual)


def sample_grid(emb: Embedding, shape: Sequence[int]) -> list[np.ndarray]:
    """Uniform parameter grids per direction (periodic axes omit the endpoint)."""
    axes = []
    for (lo, hi), per, n in zip(emb.bounds, emb.periodic, shape):
        if per:
            axes.append(lo + (hi - lo) * np.arange(n) / n)
        else:
            hstep = (hi - lo) / n
            axes.append(lo + hstep * (np.arange(n) + 0.5))
    return axes
