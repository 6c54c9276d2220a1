"""Assembly of the constrained k x k Hamiltonian ``H = K + V_ex``.

Kinetic part (per tangent direction i, frame components)::

    K = 1/2 sum_i (pi_i + A_i)^dagger (pi_i + A_i),   A_i = sum_{mu nu} S[mu, nu, i] Lambda[mu, nu]

Extrapotential::

    V_ex = V_p I + 1/2 sum_i S[mu,nu,i] S[s,t,i] (Lambda2[mu,nu,s,t] - Lambda[mu,nu] Lambda[s,t])
               + 1/6 R[mu,nu,s,t] Lambda2[mu,nu,s,t]

with the scalar part ``V_p = -(hbar^2/8)(2 T^2 - M^2 + R - R_par - R_perp/3)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FormMismatch, NonHermitianResidual, ShapeMismatch
from .framing import PotentialFrame, TwistTensor, potential_twist, twist_links
from .geometry import (
    AmbientSpace,
    CurvatureScalars,
    CurveGeometry,
    Embedding,
    EmbeddingGeometry,
    curvature_scalars,
    curve_embedding_geometry,
    planar_curve_geometry,
    sample_grid,
)
from .transverse import ModeSet

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10
FORM_TOL = 1e-12

CONVENTIONS = {
    "Lambda": "Lambda_{mu nu} = (u_mu pi_nu - u_nu pi_mu)/2; Lambda_12 = L_z/2",
    "twist": "S[mu,nu,i] = <E_mu, nabla_{E_i} E_nu>; curves: S = E1.dE2/dalpha, -S = tau + omega",
    "frame_angle": "E1 = cos(theta) n + sin(theta) b, E2 = -sin(theta) n + cos(theta) b",
    "gauge": "A_i = S[mu,nu,i] Lambda[mu,nu]; kinetic (pi_i + A_i)^2/2; curves A = 2 S Lambda_12",
    "mass": "unit mass",
}


def extrapotential_forms(scalars: CurvatureScalars, hbar: float = 1.0) -> tuple[float, float, float]:
    """The three equivalent expressions for the scalar extrapotential.

    Returns the ``T^2, M^2`` form, the ``T^2, R_hat`` form and the
    ``M^2, R_hat`` form, in that order.
    """
    c = -(hbar**2) / 8.0
    s = scalars
    f1 = c * (2 * s.Tsq - s.Msq + s.R_full - s.R_par - s.R_perp / 3)
    f2 = c * (s.Tsq - s.R_hat + s.R_full - s.R_perp / 3)
    f3 = c * (s.Msq - 2 * s.R_hat + s.R_full + s.R_par - s.R_perp / 3)
    return f1, f2, f3


def extrapotential_preliminary(scalars: CurvatureScalars, hbar: float = 1.0, tol: float = FORM_TOL) -> float:
    """Scalar extrapotential ``-(hbar^2/8)(2 T^2 - M^2 + R - R_par - R_perp/3)``.

    All three equivalent forms are evaluated; they differ only through the
    Gauss equation, so a disagreement above ``tol`` (relative to the size of
    the terms) signals inconsistent scalars.
    """
    f1, f2, f3 = extrapotential_forms(scalars, hbar)
    s = scalars
    scale = (hbar**2 / 8.0) * max(1.0, abs(s.Tsq), abs(s.Msq), abs(s.R_full), abs(s.R_par), abs(s.R_perp), abs(s.R_hat))
    spread = max(abs(f1 - f2), abs(f1 - f3), abs(f2 - f3))
    if spread > tol * scale:
        raise FormMismatch(f"extrapotential forms disagree by {spread:.3e} ({f1}, {f2}, {f3})")
    return f1


@dataclass(frozen=True)
class ExtrapotentialBreakdown:
    """Per-sample extrapotential pieces (energy units).

    ``dacosta`` and ``ambient`` are scalars multiplying the identity;
    ``twist``, ``riemann_lambda`` and ``total`` are ``k x k`` blocks.
    """

    dacosta: np.ndarray
    ambient: np.ndarray
    twist: np.ndarray
    riemann_lambda: np.ndarray
    total: np.ndarray
    hermiticity_residual: float = 0.0

    def bookkeeping_residual(self) -> float:
        k = self.total.shape[-1]
        recon = (self.dacosta + self.ambient)[..., None, None] * np.eye(k) + self.twist + self.riemann_lambda
        return float(np.max(np.abs(recon - self.total)))


@dataclass(frozen=True)
class TangentGrid:
    """Sampling of the constraint manifold used by the tangential solver.

    ``axes`` are coordinate samples per direction, ``bc`` entries are
    ``periodic``, ``dirichlet`` or ``neumann`` (zero flux, used at
    coordinate poles). ``scale`` holds the orthogonal-patch scale factors
    ``|d x / d p_i|`` with shape ``(*grid, m)``; arclength grids use 1.
    """

    axes: tuple
    spacing: tuple
    bc: tuple
    scale: Optional[np.ndarray] = None
    bounds: Optional[tuple] = None

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @property
    def m(self) -> int:
        return len(self.axes)


@dataclass(frozen=True)
class EffectiveField:
    """Gauge matrices and extrapotential sampled over the constraint manifold.

    ``A[*grid, i]`` is the Hermitian ``k x k`` matrix entering
    ``(pi_i + A_i)``; ``links[j]`` (curves only) is the same potential
    integrated over the grid link from sample ``j`` to ``j + 1``.
    """

    grid: TangentGrid
    k: int
    d: int
    hbar: float
    A: np.ndarray
    Vex: ExtrapotentialBreakdown
    links: Optional[np.ndarray] = None
    Vef_extra: Optional[np.ndarray] = None
    scalars: Optional[list] = None
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))
    notes: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.grid.m

    def potential(self) -> np.ndarray:
        """``V_ex + V_ef`` as ``(*grid, k, k)``."""
        V = self.Vex.total
        if self.Vef_extra is not None:
            V = V + self.Vef_extra[..., None, None] * np.eye(self.k)
        return V


def _hermitize(M: np.ndarray, tol: float, what: str) -> tuple[np.ndarray, float]:
    H = np.conj(np.swapaxes(M, -1, -2))
    resid = float(np.max(np.abs(M - H))) if M.size else 0.0
    if resid > tol:
        raise NonHermitianResidual(f"{what} departs from Hermiticity by {resid:.3e}")
    return 0.5 * (M + H), resid


def assemble_effective(
    geoms: Sequence[EmbeddingGeometry] | np.ndarray,
    twist: TwistTensor,
    modes: ModeSet,
    grid: TangentGrid,
    hbar: Optional[float] = None,
    links: Optional[np.ndarray] = None,
    tol: float = HERMITIAN_TOL,
) -> EffectiveField:
    """Assemble gauge matrices and extrapotential from sampled geometry.

    ``geoms`` holds one :class:`EmbeddingGeometry` per grid point (same
    normal frame as the twist); ``links`` are per-link twist generators
    ``G[j, mu, nu]`` (see :func:`framing.twist_links`).

    Raises
    ------
    ShapeMismatch
        If sample counts, codimension or mode count disagree.
    NonHermitianResidual
        If an assembled block departs from Hermiticity beyond ``tol``.
    """
    hbar = modes.hbar if hbar is None else hbar
    if modes.Lambda is None or modes.Lambda2 is None:
        raise ShapeMismatch("mode set has no Lambda matrices")
    G = np.asarray(geoms, dtype=object).reshape(grid.shape)
    S = twist.S
    if S.shape[:-3] != grid.shape:
        raise ShapeMismatch(f"twist grid {S.shape[:-3]} != tangent grid {grid.shape}")
    d, m, k = modes.d, grid.m, modes.k
    if S.shape[-3] != d or S.shape[-1] != m:
        raise ShapeMismatch(f"twist has d={S.shape[-3]}, m={S.shape[-1]}; modes d={d}, grid m={m}")
    L, L2 = modes.Lambda, modes.Lambda2
    LL = np.einsum("mnab,stbc->mnstac", L, L)
    var = L2 - LL

    dac = np.empty(grid.shape); amb = np.empty(grid.shape)
    tw = np.empty(grid.shape + (k, k), dtype=complex)
    rl = np.empty(grid.shape + (k, k), dtype=complex)
    A = np.empty(grid.shape + (m, k, k), dtype=complex)
    scal = []
    c = -(hbar**2) / 8.0
    for idx in np.ndindex(*grid.shape):
        g = G[idx]
        if g.d != d or g.m != m:
            raise ShapeMismatch(f"geometry at {idx} has (m, d) = ({g.m}, {g.d})")
        sc = curvature_scalars(g)
        extrapotential_preliminary(sc, hbar)
        scal.append(sc)
        dac[idx] = c * (2 * sc.Tsq - sc.Msq)
        amb[idx] = c * (sc.R_full - sc.R_par - sc.R_perp / 3)
        Si = S[idx]  # (d, d, m)
        A[idx] = np.einsum("mni,mnab->iab", Si, L)
        tw[idx] = 0.5 * np.einsum("mni,sti,mnstab->ab", Si, Si, var)
        rl[idx] = np.einsum("mnst,mnstab->ab", g.R[:d, :d, :d, :d], L2) / 6.0
    eye = np.eye(k)
    total = (dac + amb)[..., None, None] * eye + tw + rl
    total, r_tot = _hermitize(total, tol, "extrapotential")
    tw, _ = _hermitize(tw, tol, "twist block")
    rl, _ = _hermitize(rl, tol, "curvature block")
    A, r_A = _hermitize(A, tol, "gauge matrix")
    link_mats = None
    if links is not None:
        link_mats = np.einsum("jmn,mnab->jab", links, L)
        link_mats, _ = _hermitize(link_mats, tol, "gauge link")
    bd = ExtrapotentialBreakdown(dac, amb, tw, rl, total, max(r_tot, r_A))
    return EffectiveField(grid, k, d, hbar, A, bd, link_mats, None, scal,
                          notes={"hermiticity_residual": max(r_tot, r_A), "mode_kind": modes.kind})


def codim2_reduction(twist: TwistTensor, modes: ModeSet):
    """Scalar reduction for codimension two: ``S_i``, ``Lambda`` and ``Lambda2``.

    With ``S[mu, nu, i] = S_i eps_{mu nu}`` and ``Lambda_{mu nu} = Lambda eps_{mu nu}``
    the gauge term is ``2 S_i Lambda`` and the twist block ``2 S^2 (Lambda2 - Lambda^2)``.
    """
    if modes.d != 2:
        raise ShapeMismatch("codimension-two reduction needs d = 2")
    return twist.S[..., 0, 1, :], modes.Lambda[0, 1], modes.Lambda2[0, 1, 0, 1]


def effective_potential_nonconstant(field: EffectiveField, E2: Callable | np.ndarray) -> EffectiveField:
    """Copy of ``field`` with the adiabatic correction ``E2(q)`` added to the potential."""
    if callable(E2):
        if field.m == 1:
            vals = np.asarray(E2(field.grid.axes[0]), dtype=float)
        else:
            P = np.meshgrid(*field.grid.axes, indexing="ij")
            vals = np.asarray(E2(*P), dtype=float)
    else:
        vals = np.asarray(E2, dtype=float)
    vals = np.broadcast_to(vals, field.grid.shape).copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError("E2 must be finite on the grid")
    return replace(field, Vef_extra=vals)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def curve_grid(curve: CurveGeometry, frame: Optional[PotentialFrame] = None, bc: Optional[str] = None) -> TangentGrid:
    if bc is None:
        bc = "periodic" if (curve.closed and (frame is None or frame.closes)) else "dirichlet"
    return TangentGrid((curve.alpha.copy(),), (curve.spacing,), (bc,), None, ((0.0, curve.length),))


def curve_effective_field(
    curve: CurveGeometry,
    frame: PotentialFrame,
    modes: ModeSet,
    bc: Optional[str] = None,
    hbar: Optional[float] = None,
) -> EffectiveField:
    """Effective field of a curve in flat R^3 (d = 2) with the given potential frame."""
    if modes.d != frame.d:
        raise ShapeMismatch(f"modes have d={modes.d}, frame has d={frame.d}")
    geoms = [curve_embedding_geometry(curve, j, frame.vectors[j]) for j in range(curve.n_samples)]
    twist = potential_twist(frame)
    grid = curve_grid(curve, frame, bc)
    links = twist_links(frame)
    if grid.bc[0] != "periodic" and len(links) == curve.n_samples:
        links = links[:-1]
    out = assemble_effective(geoms, twist, modes, grid, hbar, links)
    return replace(out, notes={**out.notes, "frame": frame.label, "twist_antisymmetry": twist.antisymmetry_residual})


def planar_effective_field(curve: CurveGeometry, modes: ModeSet, bc: Optional[str] = None,
                           hbar: Optional[float] = None) -> EffectiveField:
    """Effective field of a curve in the flat plane (codimension one)."""
    if modes.d != 1:
        raise ShapeMismatch("planar curves need a one-dimensional cross-section")
    if not curve.planar:
        raise ShapeMismatch("curve is not planar")
    geoms = [planar_curve_geometry(k) for k in curve.kappa_signed]
    twist = TwistTensor(np.zeros((curve.n_samples, 1, 1, 1)), 0.0)
    grid = curve_grid(curve, None, bc)
    n_links = curve.n_samples if grid.bc[0] == "periodic" else curve.n_samples - 1
    return assemble_effective(geoms, twist, modes, grid, hbar, np.zeros((n_links, 1, 1)))


def surface_effective_field(
    emb: Embedding,
    shape: Sequence[int],
    modes: ModeSet,
    space: Optional[AmbientSpace] = None,
    hbar: Optional[float] = None,
    bc: Optional[Sequence[str]] = None,
    h: float = 1e-4,
) -> EffectiveField:
    """Effective field of an orthogonally parameterized surface (any codimension)."""
    from .framing import patch_geometries

    frame = PotentialFrame.on_patch(emb, shape, space)
    if modes.d != frame.d:
        raise ShapeMismatch(f"modes have d={modes.d}, patch codimension is {frame.d}")
    geoms = patch_geometries(emb, frame, h)
    twist = potential_twist(frame)
    axes = tuple(sample_grid(emb, shape))
    # scale factors of an orthogonal patch: coeffs = diag(1/h_i) up to roundoff
    C = frame.coeffs
    off = np.max(np.abs(C[..., 0, 1])) + np.max(np.abs(C[..., 1, 0]))
    diag = np.stack([C[..., 0, 0], C[..., 1, 1]], axis=-1)
    if off > 1e-8 * np.max(np.abs(diag)):
        raise ShapeMismatch("surface patch is not orthogonally parameterized")
    scale = 1.0 / diag
    if bc is None:
        bc = tuple("periodic" if p else e for p, e in zip(emb.periodic, _edge_bc(emb)))
    grid = TangentGrid(axes, frame.spacing, tuple(bc), scale, tuple(emb.bounds))
    return assemble_effective(geoms, twist, modes, grid, hbar)


def _edge_bc(emb: Embedding) -> tuple:
    # coordinate poles (sphere theta) are not boundaries: zero-flux closure
    if emb.name == "sphere":
        return ("neumann", "periodic")
    return ("dirichlet",) * emb.m


# ---------------------------------------------------------------------------
# invariance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RotationalInvarianceReport:
    max_difference: float
    casimir_residual: float
    eigenvalues_a: np.ndarray
    eigenvalues_b: np.ndarray


def rotational_invariance_check(
    curve: CurveGeometry,
    frame_a: PotentialFrame,
    frame_b: PotentialFrame,
    modes: ModeSet,
    n_eigs: int = 10,
    casimir_tol: float = 1e-8,
) -> RotationalInvarianceReport:
    """Spectra of the constrained operator under two potential frames.

    For a rotationally invariant cross-section with modes in the Casimir
    eigenbasis, ``Lambda2 = Lambda Lambda`` on the cluster and the two
    operators are gauge equivalent; the returned difference measures that.
    """
    from .solver import discretize_tangential, eigensolve

    LL = np.einsum("mnab,stbc->mnstac", modes.Lambda, modes.Lambda)
    cas = float(np.max(np.abs(modes.Lambda2 - LL)))
    if cas > casimir_tol * modes.hbar**2:
        raise ValueError(f"modes are not Casimir eigenstates (Lambda2 - Lambda Lambda = {cas:.2e})")
    fa = curve_effective_field(curve, frame_a, modes)
    fb = curve_effective_field(curve, frame_b, modes)
    ea = eigensolve(discretize_tangential(fa), n_eigs).values
    eb = eigensolve(discretize_tangential(fb), n_eigs).values
    return RotationalInvarianceReport(float(np.max(np.abs(ea - eb))), cas, ea, eb)


def uniform_curve_field(length: float, n: int, A: float | np.ndarray = 0.0, V: float | np.ndarray = 0.0,
                        hbar: float = 1.0, bc: str = "periodic") -> EffectiveField:
    """Field on an abstract arclength interval with constant gauge ``A`` and potential ``V``.

    ``A`` and ``V`` are scalars or ``k x k`` Hermitian matrices. Periodic
    grids use ``alpha_j = j L / n``; otherwise ``n`` nodes span ``[0, L]``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    V = np.atleast_2d(np.asarray(V, dtype=complex))
    k = max(A.shape[0], V.shape[0])
    if A.shape == (1, 1) and k > 1:
        A = A[0, 0] * np.eye(k)
    if V.shape == (1, 1) and k > 1:
        V = V[0, 0] * np.eye(k)
    if bc == "periodic":
        alpha = length * np.arange(n) / n
        n_links = n
    else:
        alpha = np.linspace(0.0, length, n)
        n_links = n - 1
    h = float(alpha[1] - alpha[0])
    grid = TangentGrid((alpha,), (h,), (bc,), None, ((0.0, length),))
    Ag = np.broadcast_to(A, (n, 1, k, k)).copy()
    Vt = np.broadcast_to(V, (n, k, k)).copy()
    zero = np.zeros(n)
    bd = ExtrapotentialBreakdown(zero, zero, np.zeros((n, k, k), complex), np.zeros((n, k, k), complex), Vt)
    links = np.broadcast_to(h * A, (n_links, k, k)).copy()
    return EffectiveField(grid, k, 0, hbar, Ag, bd, links)
