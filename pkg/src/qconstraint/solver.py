"""Discretization and diagonalization of the constrained Hamiltonian, plus full-dimensional oracles.

Tangential operators are assembled from covariant link differences
``(D psi)_j = (U_j psi_{j+1} - psi_j) / h`` with ``U_j = exp(i A_j / hbar)``
the gauge matrix integrated over the link, so ``(hbar^2/2) D^dagger D`` is
Hermitian by construction and discrete gauge transformations are exact.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla_dense
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.spatial import cKDTree

from .effective import EffectiveField
from .errors import (
    NoConvergence,
    ResolutionInsufficient,
    SelfIntersection,
    TruncationInsufficient,
    UnsupportedDimension,
)
from .geometry import CurveGeometry
from .transverse import TransversePotential, fock_lambda_matrix

log = logging.getLogger(__name__)

DENSE_MAX = 4096
BANDED_MIN = 512
BANDED_MAX = 16
RESIDUAL_TOL = 1e-9
HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class DiscretizedOperator:
    """Hermitian matrix over (grid point) x (mode index), node-major ordering."""

    H: sp.csr_matrix
    dim: int
    k: int
    grid_shape: tuple
    bc: tuple
    nodes: tuple  # retained coordinate samples per direction
    hermiticity_residual: float = 0.0
    weights: Optional[np.ndarray] = None  # quadrature weight per node (m = 2)
    lower_bound: Optional[float] = None

    def dense(self) -> np.ndarray:
        return self.H.toarray()


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    vectors: Optional[np.ndarray] = None
    method: str = "dense"
    iterations: Optional[int] = None
    residuals: Optional[np.ndarray] = None
    operator_norm: float = 0.0
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConvergenceRow:
    epsilon: float
    E_full: float
    E_perp: float
    E_residual: float
    E_effective: float
    abs_error: float


@dataclass(frozen=True)
class ConvergenceReport:
    rows: list
    order: float
    monotonic: bool
    relative_error_last: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        eps = [r.epsilon for r in self.rows]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilon values must be strictly decreasing")
        if not all(math.isfinite(r.abs_error) for r in self.rows):
            raise ValueError("non-finite error in convergence report")


# ---------------------------------------------------------------------------
# tangential discretization
# ---------------------------------------------------------------------------


def _expi(G: np.ndarray, hbar: float) -> np.ndarray:
    """``exp(i G / hbar)`` for a Hermitian matrix via its eigendecomposition."""
    w, V = np.linalg.eigh(G)
    return (V * np.exp(1j * w / hbar)) @ V.conj().T


class _Blocks:
    """Accumulates k x k blocks into COO triplets."""

    def __init__(self, k: int):
        self.k = k
        self.r, self.c, self.v = [], [], []
        ii, jj = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
        self._ii, self._jj = ii.ravel(), jj.ravel()

    def add(self, p: int, q: int, B: np.ndarray):
        self.r.append(p * self.k + self._ii)
        self.c.append(q * self.k + self._jj)
        self.v.append(np.asarray(B, dtype=complex).ravel())

    def matrix(self, n_nodes: int) -> sp.csr_matrix:
        dim = n_nodes * self.k
        if not self.r:
            return sp.csr_matrix((dim, dim), dtype=complex)
        return sp.csr_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
                             shape=(dim, dim))


def _finish(H: sp.csr_matrix) -> tuple[sp.csr_matrix, float]:
    Hh = H.conj().T
    diff = (H - Hh)
    resid = float(abs(diff).max()) if diff.nnz else 0.0
    H = ((H + Hh) * 0.5).tocsr()
    H.eliminate_zeros()
    return H, resid


def _link_matrices_1d(field: EffectiveField, n_links: int) -> np.ndarray:
    if field.links is not None:
        if len(field.links) != n_links:
            raise ValueError(f"field has {len(field.links)} links, grid needs {n_links}")
        return field.links
    A = field.A[:, 0]
    h = field.grid.spacing[0]
    n = A.shape[0]
    return np.array([0.5 * h * (A[j] + A[(j + 1) % n]) for j in range(n_links)])


def discretize_tangential(field: EffectiveField, bc: Optional[str | Sequence[str]] = None) -> DiscretizedOperator:
    """Hermitian matrix of ``sum_i (pi_i + A_i)^2 / 2 + V`` on the field's grid.

    One-dimensional grids use the link form above; ``dirichlet`` keeps the
    interior nodes (end nodes are the wall), ``neumann`` keeps all nodes
    with natural (zero-flux) ends and half-cell end weights. Two-dimensional orthogonal patches use
    scale-factor-weighted fluxes at cell midpoints and the symmetric
    ``M^{-1/2} K M^{-1/2}`` form with the node area ``M``.

    Raises
    ------
    UnsupportedDimension
        For grids of dimension other than one or two.
    """
    m = field.m
    if bc is None:
        bc = field.grid.bc
    elif isinstance(bc, str):
        bc = (bc,) * m
    bc = tuple(b.lower() for b in bc)
    for b in bc:
        if b not in ("periodic", "dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {b!r}")
    if m == 1:
        return _discretize_curve(field, bc[0])
    if m == 2:
        return _discretize_patch(field, bc)
    raise UnsupportedDimension(f"tangential discretization supports m = 1, 2 (got m = {m})")


def _discretize_curve(field: EffectiveField, bc: str) -> DiscretizedOperator:
    k, hb = field.k, field.hbar
    h = field.grid.spacing[0]
    V = field.potential()
    n = V.shape[0]
    alpha = field.grid.axes[0]
    if bc == "periodic":
        keep = np.arange(n); n_links = n
    elif bc == "dirichlet":
        keep = np.arange(1, n - 1); n_links = n - 1
    else:
        keep = np.arange(n); n_links = n - 1
    links = _link_matrices_1d(field, n_links) if field.links is None or len(field.links) == n_links else None
    if links is None:
        # periodic links supplied for a non-periodic solve: drop the seam link
        links = field.links[:n_links]
    pos = {int(j): i for i, j in enumerate(keep)}
    # trapezoid node weights: natural ends own half a cell
    wt = np.ones(n)
    if bc == "neumann":
        wt[0] = wt[-1] = 0.5
    blk = _Blocks(k)
    c = 0.5 * hb**2 / h**2
    eye = np.eye(k)
    for j in range(n_links):
        jn = (j + 1) % n
        U = _expi(links[j], hb)
        a, b = pos.get(j), pos.get(jn)
        if a is not None:
            blk.add(a, a, c / wt[j] * eye)
        if b is not None:
            blk.add(b, b, c / wt[jn] * eye)
        if a is not None and b is not None:
            cab = c / math.sqrt(wt[j] * wt[jn])
            blk.add(a, b, -cab * U)
            blk.add(b, a, -cab * U.conj().T)
    for i, j in enumerate(keep):
        blk.add(i, i, V[j])
    H, resid = _finish(blk.matrix(len(keep)))
    lb = float(min(np.linalg.eigvalsh(V[j])[0] for j in keep))
    return DiscretizedOperator(H, H.shape[0], k, (len(keep),), (bc,), (alpha[keep],), resid, None, lb)


def _discretize_patch(field: EffectiveField, bc: tuple) -> DiscretizedOperator:
    g = field.grid
    k, hb = field.k, field.hbar
    shape = g.shape
    n1, n2 = shape
    sc = g.scale if g.scale is not None else np.ones(shape + (2,))
    d1, d2 = g.spacing
    V = field.potential()
    A = field.A
    area = sc[..., 0] * sc[..., 1] * d1 * d2
    idx = np.arange(n1 * n2).reshape(shape)
    blk = _Blocks(k)
    eye = np.eye(k)
    deltas = (d1, d2)
    for ax in range(2):
        other = 1 - ax
        n_ax = shape[ax]
        per = bc[ax] == "periodic"
        n_links = n_ax if per else n_ax - 1
        for lin in range(n_links):
            for t in range(shape[other]):
                p = [0, 0]; q = [0, 0]
                p[ax], p[other] = lin, t
                q[ax], q[other] = (lin + 1) % n_ax, t
                p, q = tuple(p), tuple(q)
                s_mid = 0.5 * (sc[p] + sc[q])
                # flux weight h_other / h_ax, with the cell face measure
                w = s_mid[other] / s_mid[ax] * (d1 * d2) / deltas[ax] ** 2
                Amid = 0.5 * (A[p][ax] + A[q][ax])
                U = _expi(s_mid[ax] * deltas[ax] * Amid, hb)
                c = 0.5 * hb**2 * w
                blk.add(idx[p], idx[p], c * eye)
                blk.add(idx[q], idx[q], c * eye)
                blk.add(idx[p], idx[q], -c * U)
                blk.add(idx[q], idx[p], -c * U.conj().T)
        if bc[ax] == "dirichlet":
            # cell-centred nodes: wall half a cell outside the first/last node
            for t in range(shape[other]):
                for lin in (0, n_ax - 1):
                    p = [0, 0]; p[ax], p[other] = lin, t
                    p = tuple(p)
                    w = sc[p][other] / sc[p][ax] * (d1 * d2) / deltas[ax] ** 2
                    blk.add(idx[p], idx[p], hb**2 * w * eye)
    K = blk.matrix(n1 * n2)
    winv = np.repeat(1.0 / np.sqrt(area.ravel()), k)
    Dw = sp.diags(winv)
    H = Dw @ K @ Dw
    vb = _Blocks(k)
    for p in np.ndindex(*shape):
        vb.add(idx[p], idx[p], V[p])
    H, resid = _finish((H + vb.matrix(n1 * n2)).tocsr())
    lb = float(min(np.linalg.eigvalsh(V[p])[0] for p in np.ndindex(*shape)))
    return DiscretizedOperator(H, H.shape[0], k, shape, bc, tuple(g.axes), resid, area.ravel(), lb)


# ---------------------------------------------------------------------------
# eigensolver
# ---------------------------------------------------------------------------


def _inf_norm(H) -> float:
    if sp.issparse(H):
        return float(abs(H).sum(axis=1).max())
    return float(np.max(np.sum(np.abs(H), axis=1)))


def _certify(H, vals, vecs, tol, norm):
    R = H @ vecs - vecs * vals
    res = np.linalg.norm(R, axis=0)
    return res, bool(np.all(res < tol * max(norm, 1e-300)))


def _bandwidth(H: sp.spmatrix) -> int:
    C = sp.coo_matrix(H)
    return int(np.max(np.abs(C.row - C.col))) if C.nnz else 0


def _banded(H, k_eigs, bw, tol, norm, vectors):
    """Direct band reduction for narrow-band operators (Dirichlet/Neumann curves)."""
    n = H.shape[0]
    C = sp.coo_matrix(H)
    real = not np.iscomplexobj(C.data) or float(np.max(np.abs(C.data.imag))) == 0.0
    ab = np.zeros((bw + 1, n), dtype=float if real else complex)
    low = C.row >= C.col
    r, c, v = C.row[low], C.col[low], C.data[low]
    ab[r - c, c] = v.real if real else v
    vals, vecs = sla_dense.eig_banded(ab, lower=True, select="i", select_range=(0, k_eigs - 1))
    res, ok = _certify(H, vals, vecs, tol, norm)
    if not ok:
        raise NoConvergence("banded eigensolver residual above tolerance", 0, float(res.max()))
    return Spectrum(vals, vecs if vectors else None, "banded", 0, res, norm, {"bandwidth": bw})


def eigensolve(
    op: DiscretizedOperator | np.ndarray | sp.spmatrix,
    k_eigs: int,
    seed: int = 0,
    dense_max: int = DENSE_MAX,
    sigma: Optional[float] = None,
    vectors: bool = False,
    tol: float = RESIDUAL_TOL,
) -> Spectrum:
    """Lowest ``k_eigs`` eigenpairs with certified residuals.

    Dense symmetric path up to ``dense_max`` (narrow-band sparse matrices
    above ``BANDED_MIN`` use a direct band reduction instead); otherwise shift-invert Lanczos
    about ``sigma`` (default: just below the smallest potential eigenvalue,
    a lower bound of the spectrum), started from a seeded random vector.

    Raises
    ------
    NoConvergence
        If residuals ``|H v - lambda v|`` exceed ``tol * |H|_inf``.
    """
    if isinstance(op, DiscretizedOperator):
        H, lb = op.H, op.lower_bound
    else:
        H, lb = op, None
    n = H.shape[0]
    if not 1 <= k_eigs <= n:
        raise ValueError(f"k_eigs must lie in [1, {n}]")
    norm = _inf_norm(H)
    if n <= dense_max and sp.issparse(H) and n > BANDED_MIN:
        bw = _bandwidth(H)
        if bw <= BANDED_MAX:
            return _banded(H, k_eigs, bw, tol, norm, vectors)
    if n <= dense_max:
        M = H.toarray() if sp.issparse(H) else np.asarray(H)
        vals, vecs = sla_dense.eigh(M, subset_by_index=[0, k_eigs - 1])
        res, ok = _certify(M, vals, vecs, tol, norm)
        if not ok:
            raise NoConvergence("dense eigensolver residual above tolerance", 0, float(res.max()))
        return Spectrum(vals, vecs if vectors else None, "dense", 0, res, norm)
    Hs = sp.csr_matrix(H)
    if sigma is None:
        base = lb if lb is not None else -norm
        sigma = base - 1e-3 * max(1.0, abs(base))
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    if np.iscomplexobj(Hs.data):
        v0 = v0 + 1j * rng.standard_normal(n)
    last = math.inf
    for attempt, maxiter in enumerate((None, 20 * n)):
        try:
            vals, vecs = sla.eigsh(Hs, k=k_eigs, sigma=sigma, which="LM", v0=v0, tol=0, maxiter=maxiter)
        except sla.ArpackNoConvergence as exc:
            last = math.inf
            log.warning("ARPACK did not converge (attempt %d): %s", attempt, exc)
            continue
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        res, ok = _certify(Hs, vals, vecs, tol, norm)
        last = float(res.max())
        if ok:
            return Spectrum(vals, vecs if vectors else None, "shift-invert", attempt, res, norm,
                            {"sigma": float(sigma)})
    raise NoConvergence(f"sparse eigensolver failed to certify {k_eigs} pairs", 2, last)


# ---------------------------------------------------------------------------
# 2D strip oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StripSpectrum:
    """Full strip eigenvalues and their offset from the transverse threshold.

    ``offset = values - E_perp_discrete`` removes the transverse
    discretization error to leading order; ``offset_extrapolated`` is the
    Richardson estimate from a grid and its 2x refinement.
    """

    values: np.ndarray
    offset: np.ndarray
    offset_extrapolated: np.ndarray
    E_perp: float
    E_perp_discrete: float
    grid: tuple
    seconds: float

    @property
    def E_full(self) -> np.ndarray:
        """Continuum estimate of the full eigenvalues."""
        return self.E_perp + self.offset_extrapolated


def check_tubular(curve: CurveGeometry, epsilon: float) -> None:
    """Raise SelfIntersection if normal segments of half-length eps/2 can collide."""
    kmax = float(np.max(np.abs(curve.kappa)))
    if kmax * epsilon / 2 >= 1.0:
        raise SelfIntersection(f"curvature {kmax:.3g} too large for width {epsilon:g}")
    pts = curve.points[:, :2] if curve.points.shape[1] > 2 else curve.points
    tree = cKDTree(pts)
    pairs = tree.query_pairs(r=epsilon * (1 - 1e-9), output_type="ndarray")
    if len(pairs) == 0:
        return
    sep = np.abs(curve.alpha[pairs[:, 0]] - curve.alpha[pairs[:, 1]])
    if curve.closed:
        sep = np.minimum(sep, curve.length - sep)
    # neighbours on the same branch are at most pi eps / 2 apart in arclength
    bad = sep > 0.5 * math.pi * epsilon + 2 * curve.spacing
    if np.any(bad):
        i, j = pairs[np.argmax(bad)]
        raise SelfIntersection(f"strip of width {epsilon:g} overlaps itself near alpha = "
                               f"{curve.alpha[i]:.4g} and {curve.alpha[j]:.4g}")


def strip_hamiltonian(kappa: Callable, length: float, epsilon: float, n_a: int, n_u: int,
                      closed: bool = False, hbar: float = 1.0) -> tuple[sp.csr_matrix, float]:
    """Hard-wall strip Hamiltonian in curve-adapted coordinates.

    Coordinates ``(alpha, u)``, ``|u| < eps/2``, area element
    ``J = 1 - kappa(alpha) u``. The quadratic form
    ``(hbar^2/2) int (|d_alpha psi|^2 / J + J |d_u psi|^2)`` is discretized
    with ``1/J`` on alpha midpoints and ``J`` on u midpoints, then
    symmetrized as ``J^{-1/2} K J^{-1/2}``. Returns ``(H, E_perp_discrete)``.
    """
    if closed:
        ha = length / n_a
        a = ha * np.arange(n_a)
        am = a + 0.5 * ha
    else:
        ha = length / (n_a + 1)
        a = ha * np.arange(1, n_a + 1)
        am = ha * (np.arange(n_a + 1) + 0.5)
    hu = epsilon / (n_u + 1)
    u = -epsilon / 2 + hu * np.arange(1, n_u + 1)
    um = -epsilon / 2 + hu * (np.arange(n_u + 1) + 0.5)
    ka, kam = np.asarray(kappa(a), float), np.asarray(kappa(am), float)
    J = 1 - ka[:, None] * u[None, :]
    ca = 1 / (1 - kam[:, None] * u[None, :]) / ha**2  # closed: n_a links, open: n_a + 1 half-grid faces
    cu = (1 - ka[:, None] * um[None, :]) / hu**2
    idx = np.arange(n_a * n_u).reshape(n_a, n_u)
    if closed:
        left = np.roll(ca, 1, axis=0)
        diag = left + ca + cu[:, :-1] + cu[:, 1:]
        rows = [idx.ravel(), idx.ravel(), np.roll(idx, -1, axis=0).ravel()]
        cols = [idx.ravel(), np.roll(idx, -1, axis=0).ravel(), idx.ravel()]
        vals = [diag.ravel(), -ca.ravel(), -ca.ravel()]
    else:
        diag = ca[:-1] + ca[1:] + cu[:, :-1] + cu[:, 1:]
        rows = [idx.ravel(), idx[:-1].ravel(), idx[1:].ravel()]
        cols = [idx.ravel(), idx[1:].ravel(), idx[:-1].ravel()]
        vals = [diag.ravel(), -ca[1:-1].ravel(), -ca[1:-1].ravel()]
    rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    vals += [-cu[:, 1:-1].ravel(), -cu[:, 1:-1].ravel()]
    K = sp.csr_matrix((0.5 * hbar**2 * np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_a * n_u,) * 2)
    w = sp.diags(1 / np.sqrt(J.ravel()))
    H = (w @ K @ w).tocsr()
    H = ((H + H.T) * 0.5).tocsr()
    e_disc = 0.5 * hbar**2 * (2 / hu**2) * (1 - math.cos(math.pi * hu / epsilon))
    return H, e_disc


def _strip_eigs(kappa, length, epsilon, n_a, n_u, closed, hbar, k_eigs, seed, below):
    H, e_disc = strip_hamiltonian(kappa, length, epsilon, n_a, n_u, closed, hbar)
    sigma = e_disc - below
    spec = eigensolve(H, k_eigs, seed=seed, sigma=sigma, dense_max=0)
    return spec.values, e_disc


def ambient_oracle_2d(
    curve: CurveGeometry,
    epsilon: float,
    n_a: int = 400,
    n_u: int = 40,
    k_eigs: int = 3,
    hbar: float = 1.0,
    richardson: bool = True,
    refine_tol: float = 0.05,
    seed: int = 0,
    below: Optional[float] = None,
) -> StripSpectrum:
    """Lowest eigenvalues of the hard-wall strip of full width ``eps`` around a planar curve.

    Open curves get Dirichlet ends; closed curves are periodic in alpha.
    With ``richardson`` the solve is repeated on the ``(2 n_a, 2 n_u)``
    grid and the offsets from the discrete threshold are extrapolated
    assuming second-order convergence.

    Raises
    ------
    SelfIntersection
        If the strip is not embedded.
    ResolutionInsufficient
        If the refinement moves the offsets by more than ``refine_tol``
        relative to their scale.
    """
    if not curve.planar:
        raise ValueError("strip oracle needs a planar curve")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n_u < 8 or n_a < 16:
        raise ResolutionInsufficient("strip grid too coarse (need n_a >= 16, n_u >= 8)")
    check_tubular(curve, epsilon)
    t0 = time.perf_counter()
    kap = curve.signed_curvature_at
    E_perp = hbar**2 * math.pi**2 / (2 * epsilon**2)
    if below is None:
        kmax = float(np.max(np.abs(curve.kappa_signed)))
        below = max(hbar**2 * kmax**2 / 8, hbar**2 / curve.length**2) * 2.0 + 1e-3
    vals, e_disc = _strip_eigs(kap, curve.length, epsilon, n_a, n_u, curve.closed, hbar, k_eigs, seed, below)
    off = vals - e_disc
    ext = off.copy()
    grid = (n_a, n_u)
    if richardson:
        vf, ef = _strip_eigs(kap, curve.length, epsilon, 2 * n_a, 2 * n_u, curve.closed, hbar, k_eigs, seed, below)
        offf = vf - ef
        scale = max(float(np.max(np.abs(offf))), hbar**2 / curve.length**2)
        if float(np.max(np.abs(offf - off))) > refine_tol * scale * 10:
            raise ResolutionInsufficient(f"strip offsets move by {np.max(np.abs(offf - off)):.3e} under refinement")
        ext = offf + (offf - off) / 3.0
        vals, off, e_disc, grid = vf, offf, ef, (2 * n_a, 2 * n_u)
    return StripSpectrum(vals, off, ext, E_perp, e_disc, grid, time.perf_counter() - t0)


def annulus_bessel_oracle(radius: float, epsilon: float, m: int, hbar: float = 1.0) -> float:
    """Lowest radial eigenvalue of the annulus ``|r - radius| < eps/2`` with angular number ``m``."""
    from scipy.optimize import brentq
    from scipy.special import jv, yv

    a, b = radius - epsilon / 2, radius + epsilon / 2

    def f(k):
        return jv(m, k * a) * yv(m, k * b) - jv(m, k * b) * yv(m, k * a)

    k0 = math.pi / epsilon
    lo, hi = 0.5 * k0, 1.5 * k0
    ks = np.linspace(lo, hi, 4001)
    fs = np.array([f(k) for k in ks])
    i = int(np.nonzero(np.sign(fs[:-1]) != np.sign(fs[1:]))[0][0])
    k = brentq(f, ks[i], ks[i + 1], xtol=1e-14, rtol=1e-15)
    return 0.5 * hbar**2 * k**2


# ---------------------------------------------------------------------------
# 3D twisted harmonic oracle
# ---------------------------------------------------------------------------


def _fock_basis(d: int, n_max: int) -> list[tuple]:
    return [o for o in product(range(n_max + 1), repeat=d) if sum(o) <= n_max]


def twisted_block(S0: float, omegas: Sequence[float], kval: float, n_basis: int, hbar: float = 1.0,
                  epsilon: float = 1.0) -> np.ndarray:
    """Eigenvalues of ``(hbar k + S0 L_z)^2 / 2 + H_perp`` in a truncated Fock basis.

    ``L_z = 2 Lambda_12``; ``L_z^2`` is formed on a basis two quanta larger
    before truncation so its matrix elements are exact.
    """
    om = tuple(float(w) / epsilon**2 for w in omegas)
    big = _fock_basis(2, n_basis + 2)
    small = _fock_basis(2, n_basis)
    Lz = 2 * fock_lambda_matrix(big, 0, 1, om, hbar)
    pos = [big.index(o) for o in small]
    Lz2 = (Lz @ Lz)[np.ix_(pos, pos)]
    Lzs = Lz[np.ix_(pos, pos)]
    Hperp = np.diag([sum(hbar * w * (o[i] + 0.5) for i, w in enumerate(om)) for o in small])
    H = Hperp + 0.5 * ((hbar * kval) ** 2 * np.eye(len(small)) + 2 * hbar * kval * S0 * Lzs + S0**2 * Lz2)
    H = 0.5 * (H + H.conj().T)
    return np.linalg.eigvalsh(H)


def ambient_oracle_3d_twisted(
    S0: float,
    pot: TransversePotential,
    L: float,
    epsilon: float = 1.0,
    n_basis: int = 16,
    k_eigs: int = 6,
    j_max: int = 3,
    hbar: float = 1.0,
    check: bool = True,
) -> Spectrum:
    """Full spectrum of a straight periodic tube whose harmonic cross-section rotates at rate ``S0``.

    In the co-rotating frame the problem separates into plane waves
    ``k = 2 pi j / L``; each block is diagonalized exactly in the Fock
    basis with total quanta ``<= n_basis``. ``meta['blocks']`` holds the
    per-j eigenvalues.

    Raises
    ------
    TruncationInsufficient
        If the reported eigenvalues move by more than 1e-8 when the basis
        grows by two quanta.
    """
    if pot.kind != "harmonic" or pot.d != 2:
        raise ValueError("twisted oracle needs a two-dimensional harmonic cross-section")
    omegas = pot.omegas
    blocks = {}
    allv = []
    worst = 0.0
    for j in range(-j_max, j_max + 1):
        kval = 2 * math.pi * j / L
        ev = twisted_block(S0, omegas, kval, n_basis, hbar, epsilon)
        if check:
            ev2 = twisted_block(S0, omegas, kval, n_basis + 2, hbar, epsilon)
            nk = min(k_eigs, len(ev))
            worst = max(worst, float(np.max(np.abs(ev[:nk] - ev2[:nk]))))
        blocks[j] = ev[:k_eigs]
        allv.extend((float(v), j) for v in ev[:k_eigs])
    if check and worst > 1e-8:
        raise TruncationInsufficient(f"Fock truncation n_basis={n_basis} moves eigenvalues by {worst:.2e}")
    allv.sort()
    vals = np.array([v for v, _ in allv[:k_eigs]])
    return Spectrum(vals, None, "fock", None, None, 0.0,
                    {"blocks": blocks, "labels": [j for _, j in allv[:k_eigs]], "truncation_shift": worst,
                     "n_basis": n_basis})


# ---------------------------------------------------------------------------
# epsilon convergence
# ---------------------------------------------------------------------------


def fit_order(eps: Sequence[float], err: Sequence[float]) -> float:
    e = np.asarray(eps, float); r = np.abs(np.asarray(err, float))
    r = np.maximum(r, 1e-300)
    return float(np.polyfit(np.log(e), np.log(r), 1)[0])


def epsilon_convergence(
    eps_list: Sequence[float],
    full: Callable[[float], float],
    perp: Callable[[float], float],
    E_effective: float,
) -> ConvergenceReport:
    """Deviation of ``E_full(eps) - E_perp(eps)`` from the effective eigenvalue.

    ``full`` and ``perp`` return the full and transverse ground energies at
    a given width. The order is the slope of log deviation vs log eps.
    """
    eps = [float(e) for e in eps_list]
    if len(eps) < 3:
        raise ValueError("need at least three epsilon values")
    rows = []
    for e in eps:
        Ef, Ep = float(full(e)), float(perp(e))
        res = Ef - Ep
        rows.append(ConvergenceRow(e, Ef, Ep, res, float(E_effective), abs(res - E_effective)))
    errs = [r.abs_error for r in rows]
    tiny = max(abs(E_effective), 1.0) * 1e-13
    if max(errs) <= tiny:
        order, mono = math.inf, True
    else:
        order = fit_order(eps, errs)
        mono = all(b < a for a, b in zip(errs, errs[1:]))
    rel = errs[-1] / abs(E_effective) if E_effective != 0 else errs[-1]
    return ConvergenceReport(rows, order, mono, rel)


def strip_convergence(curve: CurveGeometry, eps_list: Sequence[float], E_effective: float,
                      n_a: int = 400, n_u: int = 40, hbar: float = 1.0, seed: int = 0) -> ConvergenceReport:
    """Epsilon study of the hard-wall strip against an effective ground energy."""
    cache = {}

    def full(e):
        sp_ = ambient_oracle_2d(curve, e, n_a, n_u, k_eigs=1, hbar=hbar, seed=seed)
        cache[e] = sp_
        return float(sp_.E_full[0])

    def perp(e):
        return hbar**2 * math.pi**2 / (2 * e**2)

    rep = epsilon_convergence(eps_list, full, perp, E_effective)
    rep.meta.update({"grid": [list(cache[e].grid) for e in eps_list],
                     "seconds": [cache[e].seconds for e in eps_list]})
    return rep


# ---------------------------------------------------------------------------
# vielbein-scaled kinetic energy
# ---------------------------------------------------------------------------


def fourier_derivative_matrix(n: int, length: float) -> np.ndarray:
    """Spectral first-derivative matrix on ``n`` (odd) periodic points."""
    if n % 2 == 0:
        raise ValueError("use an odd point count (no Nyquist mode)")
    j = np.arange(n)
    diff = j[:, None] - j[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        D = 0.5 * (-1.0) ** diff / np.sin(math.pi * diff / n)
    np.fill_diagonal(D, 0.0)
    return D * (2 * math.pi / length)


@dataclass(frozen=True)
class VielbeinReport:
    max_residual: float
    laplacian: np.ndarray
    scaled: np.ndarray
    V_s: np.ndarray


def vielbein_kinetic_check(metric: Callable[[np.ndarray], np.ndarray], n: int = 1025, length: float = 2 * math.pi,
                           n_compare: int = 64, hbar: float = 1.0) -> VielbeinReport:
    """Compare ``-hbar^2 Laplacian / 2`` with the scaled form ``pi G^-1 pi / 2 + V_s``.

    For a periodic 1D metric ``G`` the Laplacian route is the generalized
    problem ``(hbar^2/2) D^T G^{-1/2} D psi = E sqrt(G) psi``; the scaled
    route acts on ``phi = G^{1/4} psi`` with
    ``V_s = (hbar^2/2)[G^-1 l'^2 / 16 + (G^-1 l')' / 4]``, ``l = ln G``.
    Both are spectral in space; the lowest ``n_compare`` eigenvalues are compared.
    """
    x = length * np.arange(n) / n
    G = np.asarray(metric(x), dtype=float) * np.ones(n)
    if np.any(G <= 0):
        raise ValueError("metric must be positive")
    D = fourier_derivative_matrix(n, length)
    Ka = 0.5 * hbar**2 * D.T @ np.diag(G**-0.5) @ D
    ea = sla_dense.eigh(0.5 * (Ka + Ka.T), np.diag(np.sqrt(G)), eigvals_only=True)
    ell = np.log(G)
    dl = D @ ell
    Vs = 0.5 * hbar**2 * (dl**2 / (16 * G) + (D @ (dl / G)) / 4)
    Kb = 0.5 * hbar**2 * D.T @ np.diag(1 / G) @ D + np.diag(Vs)
    eb = np.linalg.eigvalsh(0.5 * (Kb + Kb.T))
    nc = min(n_compare, n)
    diff = float(np.max(np.abs(ea[:nc] - eb[:nc])))
    return VielbeinReport(diff, ea[:nc], eb[:nc], Vs)
