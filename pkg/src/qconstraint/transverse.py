"""Transverse eigenproblem and generalized angular-momentum matrices.

The transverse Hamiltonian is ``H_perp = -(hbar^2/2) Laplacian + V_perp(u)``
on the normal space (unit mass). Degenerate eigenspaces of dimension ``k``
enter the constrained Hamiltonian through the ``k x k`` matrices

    Lambda[mu, nu][n, n']          = <chi_n | Lambda_{mu nu} | chi_n'>
    Lambda2[mu, nu, s, t][n, n']   = <chi_n | Lambda_{mu nu} Lambda_{s t} | chi_n'>

with ``Lambda_{mu nu} = (u_mu pi_nu - u_nu pi_mu) / 2``. Note the factor
one half: in two dimensions ``Lambda_12 = L_z / 2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.special import jn_zeros

from .errors import DegeneracySplit, NotDegenerate, ResolutionInsufficient

log = logging.getLogger(__name__)

DEG_TOL = 1e-6
CONVENTION = "Lambda_{mu nu} = (u_mu pi_nu - u_nu pi_mu)/2, so Lambda_12 = L_z/2"
PHASE_CONVENTION = "largest-magnitude component of each mode real and positive"


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransversePotential:
    """Cross-section potential in normal coordinates.

    ``kind`` is one of ``harmonic``, ``polygon``, ``disk``, ``square``,
    ``interval`` (hard walls) or ``sampled`` (values on a grid).
    """

    kind: str
    d: int
    omegas: tuple = ()
    vertices: Optional[np.ndarray] = None
    radius: float = 0.0
    side: float = 0.0
    width: float = 0.0
    samples: Optional[tuple] = None  # (u1, u2, V) for sampled potentials
    hbar: float = 1.0

    def __post_init__(self):
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        if self.kind == "harmonic":
            if len(self.omegas) != self.d or any(not w > 0 for w in self.omegas):
                raise ValueError("harmonic frequencies must be positive, one per normal direction")
        elif self.kind == "polygon":
            from shapely.geometry import Point, Polygon

            poly = Polygon(self.vertices)
            if not poly.is_valid or not poly.is_simple:
                raise ValueError("polygon must be simple (non-self-intersecting)")
            if not poly.contains(Point(0.0, 0.0)):
                raise ValueError("polygon must contain the origin")
        elif self.kind in ("disk", "square", "interval", "sampled"):
            pass
        else:
            raise ValueError(f"unknown potential kind {self.kind!r}")

    # constructors
    @classmethod
    def harmonic(cls, omegas: Sequence[float], hbar: float = 1.0) -> "TransversePotential":
        om = tuple(float(w) for w in omegas)
        return cls("harmonic", len(om), omegas=om, hbar=hbar)

    @classmethod
    def polygon(cls, vertices, hbar: float = 1.0) -> "TransversePotential":
        v = np.asarray(vertices, dtype=float)
        v.flags.writeable = False
        return cls("polygon", 2, vertices=v, hbar=hbar)

    @classmethod
    def disk(cls, radius: float, hbar: float = 1.0) -> "TransversePotential":
        if not radius > 0:
            raise ValueError("radius must be positive")
        return cls("disk", 2, radius=float(radius), hbar=hbar)

    @classmethod
    def square(cls, side: float, hbar: float = 1.0) -> "TransversePotential":
        if not side > 0:
            raise ValueError("side must be positive")
        return cls("square", 2, side=float(side), hbar=hbar)

    @classmethod
    def interval(cls, width: float, hbar: float = 1.0) -> "TransversePotential":
        if not width > 0:
            raise ValueError("width must be positive")
        return cls("interval", 1, width=float(width), hbar=hbar)

    @classmethod
    def sampled(cls, u1, u2, V, hbar: float = 1.0) -> "TransversePotential":
        return cls("sampled", 2, samples=(np.asarray(u1), np.asarray(u2), np.asarray(V)), hbar=hbar)

    @property
    def hard_wall(self) -> bool:
        return self.kind in ("polygon", "disk", "square", "interval")

    @property
    def rotationally_invariant(self) -> bool:
        if self.kind == "disk":
            return True
        return self.kind == "harmonic" and len(set(self.omegas)) == 1

    def extent(self) -> float:
        """Half-width of a box containing the well (or its classical region)."""
        if self.kind == "disk":
            return self.radius
        if self.kind == "square":
            return self.side / 2
        if self.kind == "interval":
            return self.width / 2
        if self.kind == "polygon":
            return float(np.max(np.abs(self.vertices)))
        if self.kind == "harmonic":
            return 7.0 * math.sqrt(self.hbar / min(self.omegas))
        u1, u2, _ = self.samples
        return float(max(np.max(np.abs(u1)), np.max(np.abs(u2))))

    def inside(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Mask of points strictly inside a hard-wall region."""
        if self.kind == "disk":
            return X**2 + Y**2 < self.radius**2
        if self.kind == "square":
            a = self.side / 2
            return (np.abs(X) < a) & (np.abs(Y) < a)
        if self.kind == "polygon":
            import shapely

            poly = shapely.Polygon(self.vertices)
            return shapely.contains_xy(poly, X, Y)
        return np.ones(np.shape(X), dtype=bool)

    def value(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Potential on a grid (``inf`` outside hard walls)."""
        if self.kind == "harmonic":
            w1, w2 = self.omegas
            return 0.5 * (w1**2 * X**2 + w2**2 * Y**2)
        if self.kind == "sampled":
            from scipy.interpolate import RegularGridInterpolator

            u1, u2, V = self.samples
            f = RegularGridInterpolator((u1, u2), V, bounds_error=False, fill_value=np.inf)
            return f(np.stack([X, Y], axis=-1))
        out = np.zeros(np.shape(X))
        out[~self.inside(X, Y)] = np.inf
        return out

    def wall_distance(self, x: np.ndarray, y: np.ndarray, dx: int, dy: int) -> np.ndarray:
        """Distance from interior points to the wall along the unit direction (dx, dy)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "disk":
            b = x * dx + y * dy
            c = x**2 + y**2 - self.radius**2
            return -b + np.sqrt(np.maximum(b * b - c, 0.0))
        if self.kind == "square":
            a = self.side / 2
            if dx:
                return a - dx * x
            return a - dy * y
        if self.kind == "polygon":
            V = self.vertices
            best = np.full(x.shape, np.inf)
            for k in range(len(V)):
                p, q = V[k], V[(k + 1) % len(V)]
                e = q - p
                det = -dx * e[1] + dy * e[0]
                if abs(det) < 1e-14:
                    continue
                rx, ry = p[0] - x, p[1] - y
                t = (-rx * e[1] + ry * e[0]) / det
                s = (dx * ry - dy * rx) / det
                ok = (t >= -1e-12) & (s >= -1e-12) & (s <= 1 + 1e-12)
                best = np.where(ok & (t < best), t, best)
            return best
        return np.full(x.shape, np.inf)

    def reflect_invariant(self, axis: int, n_samples: int = 4001, seed: int = 0) -> bool:
        """Whether ``V(Q_axis u) == V(u)`` on random sample points."""
        rng = np.random.default_rng(seed)
        R = self.extent() * 1.2
        pts = rng.uniform(-R, R, size=(n_samples, 2))
        ref = pts.copy()
        ref[:, axis] *= -1
        if self.hard_wall:
            return bool(np.all(self.inside(pts[:, 0], pts[:, 1]) == self.inside(ref[:, 0], ref[:, 1])))
        a = self.value(pts[:, 0], pts[:, 1])
        b = self.value(ref[:, 0], ref[:, 1])
        fin = np.isfinite(a) | np.isfinite(b)
        return bool(np.allclose(a[fin], b[fin], rtol=1e-10, atol=1e-12))


# ---------------------------------------------------------------------------
# mode sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Square transverse grid ``x = -box + i h``; ``mask`` marks unknowns."""

    x: np.ndarray
    h: float
    mask: np.ndarray
    stencil: int = 5

    @property
    def n(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class ModeSet:
    """A degenerate cluster of ``k`` transverse modes.

    ``Lambda`` has shape ``(d, d, k, k)`` and ``Lambda2`` shape
    ``(d, d, d, d, k, k)``; both are ``None`` until computed. Grid modes are
    stored as ``(k, n, n)`` arrays normalized on the grid measure.
    """

    d: int
    k: int
    energy: float
    energies: np.ndarray
    hbar: float = 1.0
    labels: Optional[tuple] = None
    omegas: Optional[tuple] = None
    modes: Optional[np.ndarray] = None
    grid: Optional[GridSpec] = None
    Lambda: Optional[np.ndarray] = None
    Lambda2: Optional[np.ndarray] = None
    kind: str = "harmonic"
    cluster_start: int = 0
    notes: dict = field(default_factory=dict)

    def orthonormality_defect(self) -> float:
        if self.modes is None:
            return 0.0
        F = self.modes.reshape(self.k, -1)
        gram = (F.conj() @ F.T) * self.grid.h**2
        return float(np.max(np.abs(gram - np.eye(self.k))))

    def expectation_lambda(self) -> np.ndarray:
        """Diagonal ``<chi_n|Lambda_{mu nu}|chi_n>``, shape (k, d, d)."""
        return np.einsum("mnaa->amn", self.Lambda)

    def variance_12(self) -> np.ndarray:
        """``<Lambda_12^2> - <Lambda_12>^2`` per mode (d = 2)."""
        L = np.real(np.diagonal(self.Lambda[0, 1]))
        L2 = np.real(np.diagonal(self.Lambda2[0, 1, 0, 1]))
        return L2 - L**2


def harmonic_energy(omegas: Sequence[float], occ: Sequence[int], hbar: float = 1.0) -> float:
    return float(sum(hbar * w * (n + 0.5) for w, n in zip(omegas, occ)))


def harmonic_modes(
    freqs: Sequence[float],
    occupations: Iterable[Sequence[int]],
    hbar: float = 1.0,
    deg_tol: float = DEG_TOL,
) -> ModeSet:
    """Harmonic-oscillator modes labelled by occupation numbers.

    Raises
    ------
    NotDegenerate
        If the requested occupations do not share one energy within
        ``deg_tol * E``.
    """
    om = tuple(float(w) for w in freqs)
    if any(not w > 0 for w in om):
        raise ValueError("frequencies must be positive")
    occ = tuple(tuple(int(n) for n in o) for o in occupations)
    if not occ:
        raise ValueError("need at least one occupation tuple")
    for o in occ:
        if len(o) != len(om) or any(n < 0 for n in o):
            raise ValueError(f"occupation {o} does not match {len(om)} frequencies")
    if len(set(occ)) != len(occ):
        raise ValueError("duplicate occupation tuples")
    E = np.array([harmonic_energy(om, o, hbar) for o in occ])
    if np.max(E) - np.min(E) > deg_tol * np.max(np.abs(E)):
        raise NotDegenerate(f"occupations {occ} have energies {E.tolist()}")
    return ModeSet(len(om), len(occ), float(np.mean(E)), E, hbar, occ, om, kind="harmonic")


# -- ladder algebra -----------------------------------------------------------


def _lambda_apply(state: dict, mu: int, nu: int, omegas, hbar: float) -> dict:
    """Apply Lambda_{mu nu} to a Fock-space vector stored as {occupation: amplitude}.

    Uses the ladder-operator form
    ``i hbar / (4 sqrt(w_mu w_nu)) [(w_mu - w_nu)(a_mu a_nu - a_mu^+ a_nu^+)
    + (w_mu + w_nu)(a_nu^+ a_mu - a_mu^+ a_nu)]``.
    """
    out: dict = {}
    if mu == nu:
        return out
    wm, wn = omegas[mu], omegas[nu]
    pref = 1j * hbar / (4.0 * math.sqrt(wm * wn))
    cm, cp = wm - wn, wm + wn

    def add(occ, amp):
        out[occ] = out.get(occ, 0.0) + amp

    for occ, amp in state.items():
        n = list(occ)
        nm, nn = n[mu], n[nu]
        if cm != 0.0:
            if nm > 0 and nn > 0:  # a_mu a_nu
                o = n.copy(); o[mu] -= 1; o[nu] -= 1
                add(tuple(o), amp * pref * cm * math.sqrt(nm * nn))
            o = n.copy(); o[mu] += 1; o[nu] += 1  # -a_mu^+ a_nu^+
            add(tuple(o), -amp * pref * cm * math.sqrt((nm + 1) * (nn + 1)))
        if nm > 0:  # a_nu^+ a_mu
            o = n.copy(); o[mu] -= 1; o[nu] += 1
            add(tuple(o), amp * pref * cp * math.sqrt(nm * (nn + 1)))
        if nn > 0:  # -a_mu^+ a_nu
            o = n.copy(); o[mu] += 1; o[nu] -= 1
            add(tuple(o), -amp * pref * cp * math.sqrt((nm + 1) * nn))
    return out


def fock_lambda_matrix(basis: Sequence[tuple], mu: int, nu: int, omegas, hbar: float = 1.0) -> np.ndarray:
    """Matrix of Lambda_{mu nu} on a list of occupation states (truncated)."""
    index = {o: i for i, o in enumerate(basis)}
    M = np.zeros((len(basis), len(basis)), dtype=complex)
    for j, o in enumerate(basis):
        for occ, amp in _lambda_apply({tuple(o): 1.0}, mu, nu, omegas, hbar).items():
            i = index.get(occ)
            if i is not None:
                M[i, j] += amp
    return M


def harmonic_lambda_matrices(modes: ModeSet) -> ModeSet:
    """Fill ``Lambda`` and ``Lambda2`` from the ladder expansion (exact, no truncation)."""
    if modes.labels is None or modes.omegas is None:
        raise ValueError("harmonic ModeSet required")
    d, k = modes.d, modes.k
    om, hb = modes.omegas, modes.hbar
    index = {o: i for i, o in enumerate(modes.labels)}
    L = np.zeros((d, d, k, k), dtype=complex)
    L2 = np.zeros((d, d, d, d, k, k), dtype=complex)
    for b, ob in enumerate(modes.labels):
        once = {}
        for s, t in product(range(d), repeat=2):
            v = _lambda_apply({ob: 1.0}, s, t, om, hb)
            once[(s, t)] = v
            for occ, amp in v.items():
                if occ in index:
                    L[s, t, index[occ], b] += amp
        for m, n, s, t in product(range(d), repeat=4):
            for occ, amp in _lambda_apply(once[(s, t)], m, n, om, hb).items():
                if occ in index:
                    L2[m, n, s, t, index[occ], b] += amp
    return replace(modes, Lambda=L, Lambda2=L2)


def harmonic_lambda2_closed_form(occ: Sequence[int], omegas: Sequence[float], hbar: float = 1.0) -> np.ndarray:
    """Diagonal ``<Lambda_{mu nu} Lambda_{s t}>`` for one Fock state, shape (d, d, d, d).

    ``-(hbar^2/8)[2(n_mu+1/2)(n_nu+1/2)(w_mu^2+w_nu^2)/(w_mu w_nu) - 1]
    (delta_{mu t} delta_{nu s} - delta_{mu s} delta_{nu t})``, zero for mu = nu.
    """
    d = len(omegas)
    out = np.zeros((d, d, d, d))
    for m, n in product(range(d), repeat=2):
        if m == n:
            continue
        wm, wn = omegas[m], omegas[n]
        br = 2 * (occ[m] + 0.5) * (occ[n] + 0.5) * (wm**2 + wn**2) / (wm * wn) - 1
        val = -(hbar**2 / 8) * br
        out[m, n, n, m] += val  # delta_{mu t} delta_{nu s}
        out[m, n, m, n] -= val  # delta_{mu s} delta_{nu t}
    return out


def omega_commutator_check(d: int, n_max: int, omegas: Optional[Sequence[float]] = None, hbar: float = 1.0) -> float:
    """Max interior residual of the commutation relations of ``Omega = Lambda/(-i hbar)``.

    Checks ``[O_mn, O_st] = 1/2 (d_ms O_tn + d_nt O_sm + d_mt O_ns + d_ns O_mt)``
    on a box-truncated occupation basis, keeping only columns whose states
    lie at least two quanta inside the truncation in every direction.
    """
    om = tuple(omegas) if omegas is not None else tuple(1.0 + 0.37 * i for i in range(d))
    basis = list(product(range(n_max + 1), repeat=d))
    interior = [i for i, o in enumerate(basis) if max(o) <= n_max - 2]
    O = {}
    for m, n in product(range(d), repeat=2):
        O[(m, n)] = fock_lambda_matrix(basis, m, n, om, hbar) / (-1j * hbar)
    dl = np.eye(d)
    worst = 0.0
    for m, n, s, t in product(range(d), repeat=4):
        lhs = O[(m, n)] @ O[(s, t)] - O[(s, t)] @ O[(m, n)]
        rhs = 0.5 * (dl[m, s] * O[(t, n)] + dl[n, t] * O[(s, m)] + dl[m, t] * O[(n, s)] + dl[n, s] * O[(m, t)])
        worst = max(worst, float(np.max(np.abs((lhs - rhs)[:, interior]))) if interior else 0.0)
    return worst


# -- grid solver ----------------------------------------------------------------


def _build_grid(pot: TransversePotential, n: int, box: Optional[float], stencil: int):
    if pot.d != 2:
        raise ValueError("grid solver supports d = 2 cross-sections")
    if stencil not in (5, 9):
        raise ValueError("stencil must be 5 or 9")
    if stencil == 9 and pot.hard_wall:
        raise ValueError("the wide 9-point stencil is only available for unmasked potentials")
    B = box if box is not None else pot.extent() * (1.02 if pot.hard_wall else 1.0)
    x = np.linspace(-B, B, n)
    h = float(x[1] - x[0])
    X, Y = np.meshgrid(x, x, indexing="ij")
    if pot.hard_wall:
        mask = pot.inside(X, Y)
        V = np.zeros_like(X)
    else:
        mask = np.ones_like(X, dtype=bool)
        mask[[0, -1], :] = False
        mask[:, [0, -1]] = False
        V = pot.value(X, Y)
        mask &= np.isfinite(V)
    return x, h, X, Y, mask, V


def grid_hamiltonian(pot: TransversePotential, n: int = 129, box: Optional[float] = None, stencil: int = 5,
                     boundary_correction: bool = True):
    """Sparse transverse Hamiltonian on the masked grid and its GridSpec.

    Hard walls are Dirichlet conditions on the mask. With
    ``boundary_correction`` a node next to the wall gets the diagonal
    weight ``1/(theta h^2)`` instead of ``1/h^2``, ``theta h`` being the
    distance to the wall along that stencil arm; this keeps the matrix
    symmetric and restores second-order accuracy on curved or slanted walls.
    """
    x, h, X, Y, mask, V = _build_grid(pot, n, box, stencil)
    idx = -np.ones(mask.shape, dtype=np.int64)
    idx[mask] = np.arange(int(mask.sum()))
    N = int(mask.sum())
    hb2 = 0.5 * pot.hbar**2
    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    if stencil == 5:
        arms = [((1, 0), 1.0), ((-1, 0), 1.0), ((0, 1), 1.0), ((0, -1), 1.0)]
        centre = 1.0
    else:
        # fourth-order wide cross: (-1, 16, -30, 16, -1)/12 per axis
        arms = [((s * r, 0), w) for r, w in ((1, 16 / 12), (2, -1 / 12)) for s in (1, -1)]
        arms += [((0, s * r), w) for r, w in ((1, 16 / 12), (2, -1 / 12)) for s in (1, -1)]
        centre = 30 / 12
    for (dx, dy), w in arms:
        nb = _shift(mask, dx, dy, False)
        nb_idx = _shift(idx, dx, dy, -1)
        both = mask & nb
        rows.append(idx[both]); cols.append(nb_idx[both]); vals.append(-w * hb2 / h**2 * np.ones(int(both.sum())))
        if stencil == 5:
            diag[idx[both]] += hb2 / h**2
            wall = mask & ~nb
            if boundary_correction and pot.hard_wall:
                theta = np.clip(pot.wall_distance(X[wall], Y[wall], dx, dy) / h, 1e-3, 1.0)
                diag[idx[wall]] += hb2 / (theta * h**2)
            else:
                diag[idx[wall]] += hb2 / h**2
    if stencil == 9:
        diag[:] += 2 * centre * hb2 / h**2  # two axes
    diag += V[mask]
    rows.append(np.arange(N)); cols.append(np.arange(N)); vals.append(diag)
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return H, GridSpec(x, h, mask, stencil)


def _shift(arr: np.ndarray, dx: int, dy: int, fill):
    """``out[i, j] = arr[i + dx, j + dy]`` with ``fill`` outside the array."""
    out = np.full_like(arr, fill)
    n0, n1 = arr.shape
    out[max(0, -dx):n0 - max(0, dx), max(0, -dy):n1 - max(0, dy)] = \
        arr[max(0, dx):n0 - max(0, -dx), max(0, dy):n1 - max(0, -dy)]
    return out


def _lowest(H: sp.csr_matrix, count: int, sigma: float, seed: int = 0):
    N = H.shape[0]
    v0 = np.random.default_rng(seed).standard_normal(N)
    vals, vecs = sla.eigsh(H, k=count, sigma=sigma, which="LM", v0=v0)
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def _clusters(vals: np.ndarray, deg_tol: float) -> list[list[int]]:
    groups = [[0]]
    for i in range(1, len(vals)):
        if abs(vals[i] - vals[groups[-1][0]]) <= deg_tol * max(abs(vals[i]), 1e-300):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _fix_phase(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    ph = v[i] / abs(v[i])
    return v / ph


def grid_modes(
    pot: TransversePotential,
    n: int = 129,
    k_request: int = 1,
    index: int = 0,
    stencil: int = 5,
    box: Optional[float] = None,
    deg_tol: float = DEG_TOL,
    check_resolution: bool = True,
    boundary_correction: bool = True,
    seed: int = 0,
) -> ModeSet:
    """Degenerate cluster of grid eigenmodes starting at eigen-index ``index``.

    Raises
    ------
    DegeneracySplit
        If ``index .. index + k_request - 1`` is not exactly one cluster.
    ResolutionInsufficient
        If fewer than 64 nodes span the well, or the cluster energy moves by
        more than 1% when the grid is coarsened once.
    """
    H, grid = grid_hamiltonian(pot, n, box, stencil, boundary_correction)
    span = int(np.max(np.sum(grid.mask, axis=0)))
    if span < 64:
        raise ResolutionInsufficient(f"only {span} grid points across the well (need >= 64)")
    want = index + k_request + 2
    # shift below the spectrum: hard walls are >= 0, otherwise below min V
    sigma = 0.0 if pot.hard_wall else float(np.min(H.diagonal()) - np.max(np.abs(H.diagonal())))
    vals, vecs = _lowest(H, min(want, H.shape[0] - 2), sigma, seed)
    groups = _clusters(vals, deg_tol)
    sel = list(range(index, index + k_request))
    group = next((g for g in groups if index in g), None)
    if group is None or group != sel:
        raise DegeneracySplit(
            f"modes {sel} do not form one degenerate cluster; clusters near the request: "
            f"{[[round(float(vals[i]), 10) for i in g] for g in groups]}"
        )
    if check_resolution:
        coarse = (n + 1) // 2
        Hc, gc = grid_hamiltonian(pot, coarse, box, stencil, boundary_correction)
        vc, _ = _lowest(Hc, min(want, Hc.shape[0] - 2), sigma, seed)
        shift = abs(vc[index] - vals[index]) / abs(vals[index])
        if shift > 0.01:
            raise ResolutionInsufficient(f"cluster energy moves by {100 * shift:.2f}% under one refinement")
    fields = np.zeros((k_request, n, n))
    for a, i in enumerate(sel):
        v = _fix_phase(vecs[:, i]).real / grid.h
        fields[a][grid.mask] = v
    E = vals[sel]
    return ModeSet(2, k_request, float(np.mean(E)), E, pot.hbar, modes=fields, grid=grid, kind=f"grid:{pot.kind}",
                   cluster_start=index, notes={"phase": PHASE_CONVENTION})


def _grid_derivative_ops(grid: GridSpec):
    """Central-difference d/du1 and d/du2 on masked unknowns (zero outside)."""
    mask = grid.mask
    idx = -np.ones(mask.shape, dtype=np.int64)
    idx[mask] = np.arange(int(mask.sum()))
    N = int(mask.sum())
    if grid.stencil == 9:
        taps = ((1, 8 / 12), (2, -1 / 12))
    else:
        taps = ((1, 0.5),)
    ops = []
    for axis in (0, 1):
        rows, cols, vals = [], [], []
        for r, w in taps:
            for s in (1, -1):
                shift = [0, 0]
                shift[axis] = s * r
                nb_idx = _shift(idx, shift[0], shift[1], -1)
                ok = mask & (nb_idx >= 0)
                rows.append(idx[ok]); cols.append(nb_idx[ok]); vals.append(s * w / grid.h * np.ones(int(ok.sum())))
        ops.append(sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)))
    return ops


def lambda_matrices(modes: ModeSet) -> ModeSet:
    """Fill ``Lambda`` and ``Lambda2`` for grid modes by quadrature.

    ``Lambda_12 = -(i hbar / 2)(u1 d/du2 - u2 d/du1)`` with central
    differences (zero outside the mask); ``Lambda2`` is the inner product
    ``<Lambda_{mu nu} chi | Lambda_{s t} chi'>``, i.e. Lambda applied twice.
    """
    if modes.grid is None or modes.modes is None:
        raise ValueError("grid ModeSet required")
    g = modes.grid
    X, Y = np.meshgrid(g.x, g.x, indexing="ij")
    D1, D2 = _grid_derivative_ops(g)
    u1 = sp.diags(X[g.mask]); u2 = sp.diags(Y[g.mask])
    L12 = (-0.5j * modes.hbar) * (u1 @ D2 - u2 @ D1)
    F = modes.modes.reshape(modes.k, -1)[:, g.mask.ravel()].T * g.h  # orthonormal columns
    LF = L12 @ F
    m12 = F.conj().T @ LF
    m1212 = LF.conj().T @ LF
    k = modes.k
    L = np.zeros((2, 2, k, k), dtype=complex)
    L[0, 1] = m12
    L[1, 0] = -m12
    L2 = np.zeros((2, 2, 2, 2, k, k), dtype=complex)
    for (a, b, sa), (c, e, sc) in product(((0, 1, 1), (1, 0, -1)), repeat=2):
        L2[a, b, c, e] = sa * sc * m1212
    herm = float(np.max(np.abs(m12 - m12.conj().T)))
    notes = dict(modes.notes)
    notes["lambda_hermiticity_residual"] = herm
    return replace(modes, Lambda=L, Lambda2=L2, notes=notes)


def casimir_basis(modes: ModeSet) -> ModeSet:
    """Rotate a d = 2 cluster to eigenvectors of ``Lambda_12`` (angular-momentum basis)."""
    if modes.Lambda is None:
        raise ValueError("Lambda matrices required")
    w, U = np.linalg.eigh(modes.Lambda[0, 1])
    for j in range(U.shape[1]):
        U[:, j] = _fix_phase(U[:, j])
    L = np.einsum("ai,mnab,bj->mnij", U.conj(), modes.Lambda, U)
    L2 = np.einsum("ai,mnstab,bj->mnstij", U.conj(), modes.Lambda2, U)
    fields = None
    if modes.modes is not None:
        fields = np.einsum("ai,axy->ixy", U, modes.modes.astype(complex))
    return replace(modes, Lambda=L, Lambda2=L2, modes=fields)


def rotational_modes(radius: float, m_values: Sequence[int], radial_index: int = 1, hbar: float = 1.0) -> ModeSet:
    """Hard-wall disk modes in the angular-momentum basis, in closed form.

    ``chi ~ J_|m|(j r / a) exp(i m phi)`` with energy ``hbar^2 j^2 / (2 a^2)``;
    ``Lambda_12 = hbar m / 2`` exactly and ``Lambda2 = Lambda Lambda``.
    """
    ms = [int(m) for m in m_values]
    if len({abs(m) for m in ms}) != 1:
        raise NotDegenerate("angular quantum numbers must share |m|")
    j = float(jn_zeros(abs(ms[0]), radial_index)[-1])
    E = hbar**2 * j**2 / (2 * radius**2)
    k = len(ms)
    L12 = np.diag([0.5 * hbar * m for m in ms]).astype(complex)
    L = np.zeros((2, 2, k, k), dtype=complex)
    L[0, 1], L[1, 0] = L12, -L12
    L2 = np.einsum("mnab,stbc->mnstac", L, L)
    return ModeSet(2, k, E, np.full(k, E), hbar, labels=tuple((m, radial_index) for m in ms), Lambda=L, Lambda2=L2,
                   kind="disk:angular", notes={"radius": radius})


def interval_modes(width: float, index: int = 0, hbar: float = 1.0) -> ModeSet:
    """Single hard-wall interval mode (codimension one): ``E = hbar^2 pi^2 (j+1)^2 / (2 w^2)``."""
    E = hbar**2 * math.pi**2 * (index + 1) ** 2 / (2 * width**2)
    return ModeSet(1, 1, E, np.array([E]), hbar, labels=((index,),), Lambda=np.zeros((1, 1, 1, 1), complex),
                   Lambda2=np.zeros((1, 1, 1, 1, 1, 1), complex), kind="interval")


# -- symmetry -----------------------------------------------------------------------


@dataclass(frozen=True)
class AxisVerdict:
    axis: int
    symmetric: bool
    max_diagonal_lambda: float
    vanishes: Optional[bool]


def reflection_symmetry_report(pot: TransversePotential, modes: ModeSet, tol: float = 1e-8) -> list[AxisVerdict]:
    """Per coordinate reflection: is ``V`` invariant, and do diagonal ``<Lambda>`` vanish?

    For a symmetric axis ``s`` the diagonal elements ``<Lambda_{s mu}>``
    are checked against ``tol * hbar``; for asymmetric axes nothing is
    asserted (``vanishes`` is None).
    """
    if modes.Lambda is None:
        raise ValueError("Lambda matrices required")
    out = []
    if pot.kind == "harmonic":
        sym = [True] * pot.d
    else:
        sym = [pot.reflect_invariant(ax) for ax in range(pot.d)]
    for ax in range(pot.d):
        diag = np.abs(np.einsum("mii->mi", modes.Lambda[ax]))
        worst = float(np.max(diag)) if diag.size else 0.0
        out.append(AxisVerdict(ax, sym[ax], worst, (worst <= tol * modes.hbar) if sym[ax] else None))
    return out
