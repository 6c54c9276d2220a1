"""Identity suite run by ``qconstraint check``.

Each item evaluates one geometric or algebraic identity numerically and
compares the residual with a fixed threshold.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import geometry as geo
from .effective import extrapotential_forms
from .framing import PotentialFrame, ds_identity_residual, patch_geometries
from .solver import vielbein_kinetic_check
from .transverse import (
    TransversePotential,
    grid_modes,
    harmonic_lambda_matrices,
    harmonic_modes,
    lambda_matrices,
    omega_commutator_check,
    reflection_symmetry_report,
)

log = logging.getLogger(__name__)

SCALENE = np.array([[-0.45, -0.3], [0.62, -0.22], [-0.05, 0.55]])


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    relation: str = "<"  # value < threshold, or ">" for lower bounds
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} {self.relation} {self.threshold:.1e} {self.note}".rstrip()

    def as_dict(self) -> dict:
        return asdict(self)


def _below(name, value, thr, note=""):
    value = float(value)
    return CheckResult(name, value, thr, bool(value < thr), "<", note)


def _above(name, value, thr, note=""):
    value = float(value)
    return CheckResult(name, value, thr, bool(value > thr), ">", note)


def gauss_residual(emb: geo.Embedding, shape=(3, 3)) -> float:
    """Max ``|T^2 - M^2 + R_hat_intrinsic - R_par|`` over a small parameter grid."""
    axes = geo.sample_grid(emb, shape)
    worst = 0.0
    for p in np.array(np.meshgrid(*axes, indexing="ij")).reshape(2, -1).T:
        sc = geo.curvature_scalars(geo.embedding_at(emb, p))
        worst = max(worst, abs(sc.gauss_residual))
    return worst


def twisted_torus_ds(n: int = 48) -> float:
    """dS identity residual on the flat torus in R^4 with a winding frame rotation."""
    emb = geo.flat_torus_r4(1.0, 0.7)
    frame = PotentialFrame.on_patch(emb, (n, n), rotation=lambda p: p[0] + 2 * p[1])
    return ds_identity_residual(frame, patch_geometries(emb, frame)).max_residual


def form_spread() -> float:
    """Largest disagreement among the three extrapotential forms on sample surfaces."""
    worst = 0.0
    cases = [(geo.sphere(1.3), (0.7, 0.4)), (geo.cylinder(0.8), (1.0, 0.3)), (geo.torus(2.0, 0.6), (0.3, 1.1)),
             (geo.graph_r4(lambda x, y: 0.3 * x * y, lambda x, y: 0.2 * x * x - 0.1 * y * y), (0.2, -0.1))]
    for emb, q in cases:
        sc = geo.curvature_scalars(geo.embedding_at(emb, np.array(q)))
        f = extrapotential_forms(sc)
        worst = max(worst, max(f) - min(f))
    return worst


def _diag_lambda(pot: TransversePotential, modes) -> float:
    rep = reflection_symmetry_report(pot, modes)
    return max(v.max_diagonal_lambda for v in rep)


def reflection_items(n: int = 129) -> list[CheckResult]:
    out = []
    sq = TransversePotential.square(1.0)
    m = lambda_matrices(grid_modes(sq, n=n))
    out.append(_below("reflection_square_lambda_vanishes", _diag_lambda(sq, m), 1e-8))
    ho = TransversePotential.harmonic([1.0, 5 / 3])
    m = harmonic_lambda_matrices(harmonic_modes([1.0, 5 / 3], [(1, 2)]))
    out.append(_below("reflection_harmonic_lambda_vanishes", _diag_lambda(ho, m), 1e-12))
    tri = TransversePotential.polygon(SCALENE)
    m = lambda_matrices(grid_modes(tri, n=n))
    out.append(_above("scalene_triangle_lambda_nonvanishing", _diag_lambda(tri, m), 1e-6,
                      "real nondegenerate modes carry zero <Lambda> (time reversal)"))
    return out


def run_identity_suite(quick: bool = False) -> list[CheckResult]:
    """All identity checks; ``quick`` uses coarser grids (same thresholds)."""
    res: list[CheckResult] = []
    for emb in (geo.plane(1.0), geo.cylinder(1.0), geo.sphere(1.0), geo.torus(2.0, 1.0)):
        res.append(_below(f"gauss_{emb.name}", gauss_residual(emb, (2, 2) if quick else (3, 3)), 1e-6))
    res.append(_below("ds_identity_flat_torus_r4", twisted_torus_ds(48), 1e-6))
    res.append(_below("omega_commutators_d2", omega_commutator_check(2, 8), 1e-12))
    res.append(_below("omega_commutators_d3", omega_commutator_check(3, 4 if quick else 5), 1e-12))
    metrics: list[tuple[str, Callable]] = [
        ("flat", lambda x: np.ones_like(x)),
        ("sine", lambda x: (1 + 0.3 * np.sin(x)) ** 2),
        ("exp_cos", lambda x: np.exp(0.2 * np.cos(x))),
    ]
    for name, g in metrics:
        r = vielbein_kinetic_check(g, n=255 if quick else 1025)
        res.append(_below(f"vielbein_{name}", r.max_residual, 1e-8))
    res.append(_below("extrapotential_forms", form_spread(), 1e-12))
    res.extend(reflection_items(81 if quick else 129))
    return res
