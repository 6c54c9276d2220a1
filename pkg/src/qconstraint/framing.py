"""Potential frames, the twist tensor and normal-connection curvature.

The potential frame ``E_mu`` fixes the orientation of the transverse
potential along the constraint manifold. Its rotation rate relative to the
normal connection is the twist tensor

    S[mu, nu, i] = <E_mu, nabla_{E_i} E_nu>,

antisymmetric in ``(mu, nu)``. For a curve with Frenet-aligned reference
frame ``(n, b)`` and frame angle ``theta``,

    E_1 = cos(theta) n + sin(theta) b,   E_2 = -sin(theta) n + cos(theta) b,

so that ``n.E_1 = cos(theta)``, ``n.E_2 = -sin(theta)`` and
``-S = tau + dtheta/dalpha``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.linalg import logm

from .errors import DegenerateFrame, FrameMismatch, GridTooCoarse, ShapeMismatch
from .geometry import (
    AmbientSpace,
    CurveGeometry,
    Embedding,
    EmbeddingGeometry,
    _tangent_frame_field,
    embedding_at,
    sample_grid,
)
from .numerics import complement_references, gram_schmidt, grid_derivative

log = logging.getLogger(__name__)

ANTISYMMETRY_TOL = 1e-4
# stencil accuracy for derivatives of sampled frames
FD_ACCURACY = 6


@dataclass(frozen=True)
class PotentialFrame:
    """Sampled orthonormal normal frame over a parameter grid.

    Arrays carry the grid shape as leading axes:
    ``vectors (*grid, d, N)``, ``points (*grid, N)``, ``tangents (*grid, m, N)``
    and ``coeffs (*grid, m, m)`` with ``E_i = sum_k coeffs[i, k] d/dp_k``.
    """

    vectors: np.ndarray
    points: np.ndarray
    tangents: np.ndarray
    coeffs: np.ndarray
    spacing: tuple
    periodic: tuple
    space: AmbientSpace
    theta: Optional[np.ndarray] = None  # frame angle relative to the reference (d = 2 curves)
    label: str = "custom"
    closes: bool = True

    def __post_init__(self):
        grid = self.vectors.shape[:-2]
        m = len(grid)
        if self.tangents.shape[:-2] != grid or self.tangents.shape[-2] != m:
            raise ShapeMismatch("tangent frame does not match the parameter grid")
        if len(self.spacing) != m or len(self.periodic) != m:
            raise ShapeMismatch("spacing/periodic flags do not match the grid dimension")
        if self.space.is_flat:
            gram = np.einsum("...ai,...bi->...ab", self.vectors, self.vectors)
            err = np.max(np.abs(gram - np.eye(self.d)))
            cross = np.max(np.abs(np.einsum("...ai,...bi->...ab", self.vectors, self.tangents)))
            if err > 1e-10 or cross > 1e-10:
                raise FrameMismatch(f"potential frame not orthonormal/normal (defects {err:.2e}, {cross:.2e})")

    @property
    def d(self) -> int:
        return self.vectors.shape[-2]

    @property
    def m(self) -> int:
        return self.vectors.ndim - 2

    @property
    def grid_shape(self) -> tuple:
        return self.vectors.shape[:-2]

    # -- curve frames -------------------------------------------------------

    @classmethod
    def along_curve(
        cls,
        curve: CurveGeometry,
        profile: str = "frenet",
        rate: float = 0.0,
        theta: Callable[[np.ndarray], np.ndarray] | np.ndarray | None = None,
        offset: float = 0.0,
    ) -> "PotentialFrame":
        """Frame along a sampled curve.

        Profiles (angle ``theta`` relative to the stored reference frame):

        ``frenet``         theta = offset
        ``untwisted``      theta = offset - int tau (zero twist)
        ``constant_rate``  theta = offset + rate * alpha
        ``rotation``       theta = theta(alpha) (callable or sampled array)

        Planar curves in the plane (N = 2) have a single normal and ignore the
        profile.
        """
        a = curve.alpha
        n = len(a)
        if curve.points.shape[1] == 2:
            E = np.stack([-curve.t[:, 1], curve.t[:, 0]], axis=1)[:, None, :]
            return cls(E, curve.points, curve.t[:, None, :], np.ones((n, 1, 1)), (curve.spacing,),
                       (curve.closed,), AmbientSpace.flat(2), None, "planar")
        if profile == "frenet":
            th = np.full(n, float(offset))
        elif profile == "untwisted":
            tau = np.where(np.isfinite(curve.tau), curve.tau, 0.0)
            if n >= 3:
                integ = cumulative_simpson(tau, x=a, initial=0.0)
            else:
                integ = np.concatenate([[0.0], np.cumsum(0.5 * (tau[1:] + tau[:-1]) * np.diff(a))])
            th = offset - integ
        elif profile == "constant_rate":
            th = offset + rate * a
        elif profile == "rotation":
            if theta is None:
                raise ValueError("rotation profile needs theta")
            th = np.asarray(theta(a) if callable(theta) else theta, dtype=float)
            if th.shape != a.shape:
                raise ShapeMismatch("theta samples do not match the curve grid")
        else:
            raise ValueError(f"unknown frame profile {profile!r}")
        return cls._from_angles(curve, th, profile)

    @classmethod
    def _from_angles(cls, curve: CurveGeometry, th: np.ndarray, label: str) -> "PotentialFrame":
        c, s = np.cos(th)[:, None], np.sin(th)[:, None]
        E1 = c * curve.n + s * curve.b
        E2 = -s * curve.n + c * curve.b
        E = np.stack([E1, E2], axis=1)
        closes = True
        if curve.closed:
            d = np.diff(th)
            if len(th) >= 5:
                # seam increment from a cubic through the two steps on either side
                step = (-d[-2] + 4 * d[-1] + 4 * d[0] - d[1]) / 6
            else:
                step = d[-1]
            winding = (th[-1] + step - th[0]) / (2 * math.pi)
            closes = abs(winding - round(winding)) < 1e-3 and not curve.seam_flip
            if not closes:
                log.warning("frame %s does not close across the seam (winding %.4f)", label, winding)
        n = len(th)
        return cls(E, curve.points, curve.t[:, None, :], np.ones((n, 1, 1)), (curve.spacing,),
                   (curve.closed and closes,), AmbientSpace.flat(3), th, label, closes)

    @classmethod
    def from_table(cls, curve: CurveGeometry, path: str | Path) -> "PotentialFrame":
        """Frame sampled in a CSV table (``alpha`` plus ``E{mu}_{a}`` columns).

        Samples are reduced to an angle in each normal plane and
        interpolated linearly in that angle, i.e. spherical-linear
        interpolation per plane.
        """
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            names = reader.fieldnames or []
        if "alpha" not in names:
            raise ValueError(f"{path}: missing alpha column")
        need = [f"E{mu}_{ax}" for mu in (1, 2) for ax in "xyz"]
        missing = [c for c in need if c not in names]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        at = np.array([float(r["alpha"]) for r in rows])
        E1 = np.array([[float(r[f"E1_{ax}"]) for ax in "xyz"] for r in rows])
        E2 = np.array([[float(r[f"E2_{ax}"]) for ax in "xyz"] for r in rows])
        return cls.from_samples(curve, at, np.stack([E1, E2], axis=1))

    @classmethod
    def from_samples(cls, curve: CurveGeometry, alpha_tab: np.ndarray, vectors: np.ndarray) -> "PotentialFrame":
        alpha_tab = np.asarray(alpha_tab, dtype=float)
        # reference frame at the table positions (nearest curve samples are
        # not good enough; interpolate the reference angle-wise as well)
        n_ref = _interp_vectors(curve, alpha_tab, curve.n)
        b_ref = _interp_vectors(curve, alpha_tab, curve.b)
        th = np.arctan2(np.einsum("ij,ij->i", vectors[:, 0], b_ref), np.einsum("ij,ij->i", vectors[:, 0], n_ref))
        th = np.unwrap(th)
        if curve.closed:
            th_s = np.interp(curve.alpha, alpha_tab, th, period=None)
        else:
            th_s = np.interp(curve.alpha, alpha_tab, th)
        return cls._from_angles(curve, th_s, "table")

    # -- patch frames -------------------------------------------------------

    @classmethod
    def on_patch(
        cls,
        emb: Embedding,
        shape: Sequence[int],
        space: Optional[AmbientSpace] = None,
        rotation: Callable[[np.ndarray], np.ndarray] | None = None,
        h: float = 1e-4,
    ) -> "PotentialFrame":
        """Frame over a uniform parameter grid of an embedded patch.

        The base normal frame is the family's normal field (or a
        deterministic orthonormal completion); ``rotation(p)`` optionally
        rotates it by a ``d x d`` orthogonal matrix (or angle when d = 2).
        """
        space = space or AmbientSpace.flat(emb.N)
        axes = sample_grid(emb, shape)
        grid = tuple(len(a) for a in axes)
        m, N = emb.m, emb.N
        d = N - m
        centre = np.array([a[len(a) // 2] for a in axes])
        E_c, _ = _tangent_frame_field(space, emb.embed, centre, h)
        refs = complement_references(E_c, N, space.g(emb.embed(centre)))
        V = np.empty(grid + (d, N)); P = np.empty(grid + (N,))
        Tg = np.empty(grid + (m, N)); C = np.empty(grid + (m, m))
        for idx in np.ndindex(*grid):
            p = np.array([axes[k][idx[k]] for k in range(m)])
            x = np.asarray(emb.embed(p), dtype=float)
            E, c = _tangent_frame_field(space, emb.embed, p, h)
            if emb.normal_fn is not None and space.is_flat:
                nv = np.atleast_2d(emb.normal_fn(p))
            else:
                # fixed reference axes keep the completed frame continuous
                nv = _project_references(refs, E, space.g(x))
            if rotation is not None:
                Q = np.asarray(rotation(p), dtype=float)
                if Q.ndim == 0:
                    cq, sq = math.cos(float(Q)), math.sin(float(Q))
                    Q = np.array([[cq, sq], [-sq, cq]])
                nv = Q @ nv
            V[idx], P[idx], Tg[idx], C[idx] = nv, x, E, c
        spacing = tuple(float(a[1] - a[0]) for a in axes)
        return cls(V, P, Tg, C, spacing, tuple(emb.periodic), space, None, f"patch:{emb.name}")

    def rotated(self, Q: np.ndarray) -> "PotentialFrame":
        """Frame ``E'_mu = Q_{mu nu} E_nu`` for a constant orthogonal ``Q``."""
        V = np.einsum("ab,...bi->...ai", Q, self.vectors)
        return PotentialFrame(V, self.points, self.tangents, self.coeffs, self.spacing, self.periodic,
                              self.space, None, self.label + "+rot", self.closes)


def _project_references(refs: np.ndarray, tangents: np.ndarray, G: np.ndarray) -> np.ndarray:
    r = refs - (refs @ G @ tangents.T) @ tangents
    return gram_schmidt(r, G)


def _interp_vectors(curve: CurveGeometry, alpha: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    out = np.stack([
        np.interp(alpha, curve.alpha, vecs[:, k], period=curve.length if curve.closed else None)
        for k in range(vecs.shape[1])
    ], axis=1)
    t = np.stack([
        np.interp(alpha, curve.alpha, curve.t[:, k], period=curve.length if curve.closed else None)
        for k in range(3)
    ], axis=1)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    out -= np.einsum("ij,ij->i", out, t)[:, None] * t
    return out / np.linalg.norm(out, axis=1, keepdims=True)


@dataclass(frozen=True)
class TwistTensor:
    """``S[*grid, mu, nu, i]`` stored antisymmetrized (units 1/length)."""

    S: np.ndarray
    antisymmetry_residual: float

    @property
    def d(self) -> int:
        return self.S.shape[-3]


def _grid_derivatives(values: np.ndarray, frame: PotentialFrame) -> list[np.ndarray]:
    """Parameter derivatives of per-sample data along each grid axis."""
    out = []
    for k in range(frame.m):
        per = frame.periodic[k]
        out.append(grid_derivative(values, frame.spacing[k], axis=k, periodic=per, accuracy=FD_ACCURACY))
    return out


def potential_twist(frame: PotentialFrame) -> TwistTensor:
    """Twist tensor ``S[mu, nu, i] = <E_mu, nabla_{E_i} E_nu>`` on the frame grid.

    Raises
    ------
    GridTooCoarse
        If the raw tensor violates antisymmetry by more than 1e-4.
    """
    d, m = frame.d, frame.m
    if d == 1:
        return TwistTensor(np.zeros(frame.grid_shape + (1, 1, m)), 0.0)
    dV = _grid_derivatives(frame.vectors, frame)  # each (*grid, d, N)
    if not frame.space.is_flat:
        dX = _grid_derivatives(frame.points, frame)
        for k in range(m):
            for idx in np.ndindex(*frame.grid_shape):
                gam = frame.space.christoffel(frame.points[idx])
                dV[k][idx] = dV[k][idx] + np.einsum("abc,b,nc->na", gam, dX[k][idx], frame.vectors[idx])
        G = np.array([frame.space.g(frame.points[idx]) for idx in np.ndindex(*frame.grid_shape)])
        G = G.reshape(frame.grid_shape + G.shape[-2:])
    else:
        G = None
    raw = np.empty(frame.grid_shape + (d, d, m))
    for k in range(m):
        if G is None:
            Sk = np.einsum("...ma,...na->...mn", frame.vectors, dV[k])
        else:
            Sk = np.einsum("...ma,...ab,...nb->...mn", frame.vectors, G, dV[k])
        raw[..., k] = Sk
    # parameter directions -> frame directions
    raw = np.einsum("...ik,...mnk->...mni", frame.coeffs, raw)
    resid = float(np.max(np.abs(raw + np.swapaxes(raw, -3, -2))))
    if resid > ANTISYMMETRY_TOL:
        raise GridTooCoarse(f"twist antisymmetry residual {resid:.2e} exceeds {ANTISYMMETRY_TOL:g}")
    return TwistTensor(0.5 * (raw - np.swapaxes(raw, -3, -2)), resid)


def twist_links(frame: PotentialFrame) -> np.ndarray:
    """Integrated twist over each grid link of a curve frame.

    Returns ``G[j, mu, nu]``, the generator of the rotation carrying the
    parallel-transported frame at sample ``j`` onto the frame at ``j + 1``
    (``n`` links when periodic, ``n - 1`` otherwise). To leading order
    ``G[j] = h S[j + 1/2]``; unlike a midpoint rule it makes discrete gauge
    transformations exact.
    """
    if frame.m != 1:
        raise ShapeMismatch("twist links are defined for curve frames only")
    V, Tt = frame.vectors, frame.tangents[:, 0, :]
    n, d = V.shape[0], V.shape[1]
    n_links = n if frame.periodic[0] else n - 1
    G = np.zeros((n_links, d, d))
    if d == 1:
        return G
    for j in range(n_links):
        jn = (j + 1) % n
        P = _minimal_rotation(Tt[j], Tt[jn])
        O = (V[j] @ P.T) @ V[jn].T
        if d == 2:
            phi = math.atan2(O[0, 1], O[0, 0])
            G[j] = np.array([[0.0, phi], [-phi, 0.0]])
        else:
            L = np.real(logm(O))
            G[j] = 0.5 * (L - L.T)
    return G


def _minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation matrix taking unit vector ``a`` to ``b`` about ``a x b``."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    if len(a) == 2:
        c, s = a @ b, a[0] * b[1] - a[1] * b[0]
        return np.array([[c, -s], [s, c]])
    v = np.cross(a, b)
    c = float(a @ b)
    if c < -1 + 1e-12:
        raise GridTooCoarse("tangent reverses between consecutive samples")
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K / (1 + c)


@dataclass(frozen=True)
class TwistDecomposition:
    tau: np.ndarray
    omega: np.ndarray
    S: np.ndarray
    theta: np.ndarray
    residual: float


def curve_twist_decomposition(curve: CurveGeometry, frame: PotentialFrame) -> TwistDecomposition:
    """Split the twist of a d = 2 curve frame into torsion and frame rotation.

    ``theta`` is read off from ``n.E_1 = cos(theta)``, ``n.E_2 = -sin(theta)``
    and unwrapped by nearest-branch continuity; ``omega = dtheta/dalpha``.
    """
    if frame.d != 2 or curve.points.shape[1] != 3:
        raise ShapeMismatch("decomposition needs a curve in R^3 with d = 2")
    if np.any(~np.isfinite(curve.tau)):
        raise DegenerateFrame("Frenet frame undefined (kappa < kappa_min) on part of the curve")
    c = np.einsum("ij,ij->i", curve.n, frame.vectors[:, 0])
    s = -np.einsum("ij,ij->i", curve.n, frame.vectors[:, 1])
    raw = np.arctan2(s, c)
    steps = np.diff(raw)
    wrapped = (steps + math.pi) % (2 * math.pi) - math.pi
    if np.any(np.abs(wrapped) > math.pi / 2):
        raise GridTooCoarse("frame angle jumps by more than pi/2 between samples")
    theta = np.concatenate([[raw[0]], raw[0] + np.cumsum(wrapped)])
    h = curve.spacing
    if curve.closed and frame.closes:
        last = (raw[0] - theta[-1] + math.pi) % (2 * math.pi) - math.pi + theta[-1]
        winding = (last - theta[0]) / (2 * math.pi)
        slope = 2 * math.pi * round(winding) / curve.length
        omega = grid_derivative(theta - slope * curve.alpha, h, periodic=True, accuracy=FD_ACCURACY) + slope
    else:
        omega = grid_derivative(theta, h, periodic=False, accuracy=FD_ACCURACY)
    S = potential_twist(frame).S[:, 0, 1, 0]
    residual = float(np.max(np.abs(-S - curve.tau - omega)))
    return TwistDecomposition(curve.tau.copy(), omega, S, theta, residual)


def normal_curvature(geom: EmbeddingGeometry) -> np.ndarray:
    """``B[i, j, mu, nu]`` of the normal connection from T and R.

    ``B^N_{xy} = P_perp (R_{xy} - T_x T_y + T_y T_x) P_perp`` evaluated on
    frame tangents; zero for curves.
    """
    d, m = geom.d, geom.m
    T = geom.T
    R = geom.R
    Rn = R[:d, :d, d:, d:]  # R[mu, nu, i, j]
    TT = np.einsum("mki,nkj->mnij", T, T)
    B = Rn + TT - np.swapaxes(TT, 2, 3)
    return np.transpose(B, (2, 3, 0, 1))


@dataclass(frozen=True)
class ConnectionCurvature:
    """``B[*grid, mu, nu]`` for the single tangent pair of a 2D grid."""

    B: np.ndarray
    from_connection: bool


def curvature_from_twist(frame: PotentialFrame, twist: Optional[TwistTensor] = None) -> ConnectionCurvature:
    """Normal-connection curvature from derivatives of the twist one-form.

    ``B(E_1, E_2) = dS(E_1, E_2) + S_1 S_2 - S_2 S_1`` with
    ``dS(x, y) = x(S(y)) - y(S(x)) - S([x, y])``.
    """
    if frame.m != 2:
        raise ShapeMismatch("curvature needs a two-dimensional parameter grid")
    twist = twist or potential_twist(frame)
    S = twist.S  # (*grid, d, d, 2), frame components
    C = frame.coeffs
    dS = _grid_derivatives(S, frame)  # dS[k][..., mu, nu, i] = ∂_k S_i
    dC = _grid_derivatives(C, frame)  # dC[k][..., i, l] = ∂_k c_il
    # E_i(S(E_j)) = c_ik ∂_k S_j
    ES = [sum(C[..., i, k][..., None, None] * dS[k][..., j] for k in range(2)) for i, j in ((0, 1), (1, 0))]
    # [E_1, E_2] = b_l ∂_l with b_l = c_1k ∂_k c_2l - c_2k ∂_k c_1l
    b = np.stack([
        sum(C[..., 0, k] * dC[k][..., 1, l] - C[..., 1, k] * dC[k][..., 0, l] for k in range(2))
        for l in range(2)
    ], axis=-1)
    Cinv = np.linalg.inv(C)
    w = np.einsum("...l,...li->...i", b, Cinv)  # [E_1, E_2] = w_i E_i
    S_br = np.einsum("...i,...mni->...mn", w, S)
    S1, S2 = S[..., 0], S[..., 1]
    dS12 = ES[0] - ES[1] - S_br
    B = dS12 + S1 @ S2 - S2 @ S1
    return ConnectionCurvature(B, True)


@dataclass(frozen=True)
class DSIdentityReport:
    max_residual: float
    residual: np.ndarray  # (*interior, d, d)
    dS: np.ndarray
    rhs: np.ndarray


def patch_geometries(emb: Embedding, frame: PotentialFrame, h: float = 1e-4) -> np.ndarray:
    """EmbeddingGeometry at every grid point, in the frame's own normals."""
    shape = frame.grid_shape
    axes = sample_grid(emb, shape)
    out = np.empty(shape, dtype=object)
    for idx in np.ndindex(*shape):
        p = np.array([axes[k][idx[k]] for k in range(len(shape))])
        out[idx] = embedding_at(emb, p, frame.space, normal_frame=frame.vectors[idx],
                                tangent_frame=frame.tangents[idx], h=h, intrinsic=False)
    return out


def ds_identity_residual(frame: PotentialFrame, geoms: np.ndarray) -> DSIdentityReport:
    """Compare the exterior derivative of S with curvature terms.

    Checks ``dS(x, y) = B^N(x, y) - (S_x S_y - S_y S_x)`` at every grid
    point away from non-periodic edges, where ``B^N`` comes from T and R.
    """
    if frame.m < 2:
        raise ShapeMismatch("dS identity needs m >= 2")
    if geoms.shape != frame.grid_shape:
        raise ShapeMismatch("geometry samples do not match the frame grid")
    twist = potential_twist(frame)
    S = twist.S
    Bconn = curvature_from_twist(frame, twist).B
    S1, S2 = S[..., 0], S[..., 1]
    dS = Bconn - (S1 @ S2 - S2 @ S1)
    rhs = np.empty_like(dS)
    for idx in np.ndindex(*frame.grid_shape):
        BN = normal_curvature(geoms[idx])[0, 1]
        rhs[idx] = BN - (S1[idx] @ S2[idx] - S2[idx] @ S1[idx])
    res = dS - rhs
    sl = tuple(slice(None) if per else slice(2, -2) for per in frame.periodic)
    interior = res[sl]
    return DSIdentityReport(float(np.max(np.abs(interior))) if interior.size else 0.0, interior, dS[sl], rhs[sl])
