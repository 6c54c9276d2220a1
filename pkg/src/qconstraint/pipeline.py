"""Scenario execution: geometry -> frame -> transverse modes -> effective field -> spectrum."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import geometry as geo
from .effective import (
    EffectiveField,
    curve_effective_field,
    effective_potential_nonconstant,
    planar_effective_field,
    surface_effective_field,
)
from .errors import ConstraintError
from .framing import PotentialFrame
from .io import write_csv, write_json
from .scenario import Scenario, effective_settings
from .solver import (
    ConvergenceReport,
    Spectrum,
    ambient_oracle_3d_twisted,
    discretize_tangential,
    eigensolve,
    epsilon_convergence,
    strip_convergence,
)
from .transverse import (
    PHASE_CONVENTION,
    ModeSet,
    TransversePotential,
    casimir_basis,
    grid_modes,
    harmonic_lambda_matrices,
    harmonic_modes,
    interval_modes,
    lambda_matrices,
    rotational_modes,
)

log = logging.getLogger(__name__)


class ScenarioError(ConstraintError):
    """A module error annotated with the scenario and stage it came from."""


@dataclass
class RunResult:
    scenario: Scenario
    curve: Optional[geo.CurveGeometry] = None
    frame: Optional[PotentialFrame] = None
    potential: Optional[TransversePotential] = None
    modes: Optional[ModeSet] = None
    effective: Optional[EffectiveField] = None
    spectrum: Optional[Spectrum] = None
    convergence: Optional[ConvergenceReport] = None
    timings: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


# -- builders ---------------------------------------------------------------------


def build_curve(sc: Scenario) -> geo.CurveGeometry:
    g = sc.geometry
    p = dict(g.params)
    n = sc.solver.n_grid
    if g.family == "circle":
        fam = geo.circle(p.get("radius", 1.0))
    elif g.family == "helix":
        fam = geo.helix(p.get("a", 3.0), p.get("b", 4.0), p.get("turns", 1.0))
    elif g.family == "ellipse":
        fam = geo.ellipse(p.get("a", 2.0), p.get("b", 1.0))
    elif g.family == "line":
        fam = geo.line(p.get("length", 1.0))
    elif g.family == "arc_line":
        fam = geo.arc_line(p.get("radius", 1.0), p.get("angle", math.pi / 2), p.get("lead", 1.0))
    elif g.family == "table":
        fam = geo.curve_from_table(sc.resolve(g.path), g.closed)
    else:
        raise ValueError(f"{g.family} is not a curve family")
    if g.family == "line" and sc.solver.bc == "periodic":
        # periodic straight guide: drop the duplicated end sample
        c = geo.arclength_reparameterize(fam, n=n + 1)
        return replace(c, alpha=c.alpha[:-1], points=c.points[:-1], t=c.t[:-1], n=c.n[:-1], b=c.b[:-1],
                       kappa=c.kappa[:-1], tau=c.tau[:-1], kappa_signed=c.kappa_signed[:-1], closed=True)
    return geo.arclength_reparameterize(fam, n=n)


def build_surface(sc: Scenario) -> geo.Embedding:
    g = sc.geometry
    p = dict(g.params)
    if g.family == "plane":
        return geo.plane(p.get("size", 1.0))
    if g.family == "cylinder":
        return geo.cylinder(p.get("radius", 1.0), p.get("length", 2.0))
    if g.family == "sphere":
        return geo.sphere(p.get("radius", 1.0))
    if g.family == "torus":
        return geo.torus(p.get("R", 2.0), p.get("r", 1.0))
    if g.family == "flat_torus_r4":
        return geo.flat_torus_r4(p.get("r1", 1.0), p.get("r2", 1.0))
    raise ValueError(f"{g.family} is not a surface family")


def build_modes(sc: Scenario) -> tuple[TransversePotential, ModeSet]:
    t, m, hb = sc.transverse, sc.modes, sc.hbar
    if t.kind == "harmonic":
        pot = TransversePotential.harmonic(t.omegas, hb)
        occ = m.occupations or [[0] * pot.d]
        modes = harmonic_lambda_matrices(harmonic_modes(t.omegas, [tuple(o) for o in occ], hb))
        return pot, modes
    if t.kind == "interval":
        return TransversePotential.interval(t.width, hb), interval_modes(t.width, m.index, hb)
    if t.kind == "disk":
        pot = TransversePotential.disk(t.radius, hb)
        if m.angular:
            return pot, rotational_modes(t.radius, m.angular, m.index + 1, hb)
    elif t.kind == "square":
        pot = TransversePotential.square(t.side, hb)
    else:
        pot = TransversePotential.polygon(np.array(t.vertices, dtype=float), hb)
    modes = lambda_matrices(grid_modes(pot, n=t.grid, k_request=m.k, index=m.index, stencil=t.stencil,
                                       seed=sc.seed % (2**32)))
    if m.casimir:
        modes = casimir_basis(modes)
    return pot, modes


def build_frame(sc: Scenario, curve: geo.CurveGeometry) -> PotentialFrame:
    f = sc.frame
    if f.profile == "table":
        return PotentialFrame.from_table(curve, sc.resolve(f.path))
    if f.profile == "constant_rate":
        return PotentialFrame.along_curve(curve, "constant_rate", rate=f.twist)
    if f.profile == "rotation":
        L = curve.length
        terms = list(f.rotation_terms)

        def theta(a):
            return sum(amp * np.sin(2 * math.pi * k * a / L) for amp, k in terms) + f.twist * a

        return PotentialFrame.along_curve(curve, "rotation", theta=theta)
    return PotentialFrame.along_curve(curve, f.profile)


def _adiabatic(sc: Scenario, fld: EffectiveField) -> EffectiveField:
    ad = sc.solver.adiabatic
    if ad is None:
        return fld
    lo, hi = fld.grid.bounds[0] if fld.grid.bounds else (0.0, 1.0)
    L = hi - lo
    if ad.kind == "sin":
        return effective_potential_nonconstant(
            fld, lambda a, *rest: ad.amplitude * np.sin(2 * math.pi * ad.harmonic * (a - lo) / L))
    return effective_potential_nonconstant(
        fld, lambda a, *rest: ad.amplitude * np.exp(-0.5 * ((a - ad.centre) / ad.width) ** 2))


def _bc(sc: Scenario) -> Optional[str]:
    return None if sc.solver.bc == "auto" else sc.solver.bc


# -- stages -----------------------------------------------------------------------


def _stage(name: str, timings: dict):
    class _T:
        def __enter__(self):
            self.t0 = time.perf_counter()
            return self

        def __exit__(self, et, ev, tb):
            timings[name] = time.perf_counter() - self.t0
            if isinstance(ev, (ConstraintError, ValueError)) and not isinstance(ev, ScenarioError):
                raise ScenarioError(f"stage {name!r}: {type(ev).__name__}: {ev}") from ev
            return False

    return _T()


def compute(sc: Scenario, upto: str = "converge") -> RunResult:
    """Run the pipeline up to ``upto`` (curve, modes, effective, spectrum, converge)."""
    order = ["curve", "modes", "effective", "spectrum", "converge"]
    stop = order.index(upto)
    res = RunResult(sc)
    tm = res.timings
    surface = sc.geometry.is_surface
    with _stage("geometry", tm):
        if surface:
            emb = build_surface(sc)
        else:
            res.curve = build_curve(sc)
    if stop == 0:
        return res
    with _stage("transverse", tm):
        res.potential, res.modes = build_modes(sc)
    if stop == 1:
        return res
    with _stage("effective", tm):
        if surface:
            shape = sc.solver.surface_grid or _default_surface_grid(emb)
            fld = surface_effective_field(emb, shape, res.modes, hbar=sc.hbar)
        elif res.modes.d == 1:
            fld = planar_effective_field(res.curve, res.modes, _bc(sc), sc.hbar)
        else:
            res.frame = build_frame(sc, res.curve)
            fld = curve_effective_field(res.curve, res.frame, res.modes, _bc(sc), sc.hbar)
        res.effective = _adiabatic(sc, fld)
    if stop == 2:
        return res
    with _stage("spectrum", tm):
        op = discretize_tangential(res.effective)
        k = min(sc.solver.k_eigs, op.dim)
        res.spectrum = eigensolve(op, k, seed=sc.seed % (2**32))
    if stop == 3 or not sc.solver.eps_list:
        return res
    with _stage("convergence", tm):
        res.convergence = run_convergence(sc, res)
    return res


def _default_surface_grid(emb: geo.Embedding) -> tuple[int, int]:
    return (24, 48) if emb.name == "sphere" else (32, 32)


def run_convergence(sc: Scenario, res: RunResult) -> ConvergenceReport:
    E_eff = float(res.spectrum.values[0])
    eps = sc.solver.eps_list
    if sc.transverse.kind == "interval":
        if res.curve is None or not res.curve.planar:
            raise ValueError("strip oracle needs a planar curve")
        na, nu = sc.solver.oracle_grid
        return strip_convergence(res.curve, eps, E_eff, na, nu, sc.hbar, sc.seed % (2**32))
    # harmonic: co-rotating Fock oracle on a straight periodic guide
    if sc.geometry.family != "line" or res.effective.grid.bc[0] != "periodic":
        raise ValueError("harmonic convergence needs a periodic straight guide (family line, bc periodic)")
    occ = res.modes.labels[0]
    if any(o != 0 for o in occ) or res.modes.k != 1:
        raise ValueError("harmonic convergence compares ground states only")
    S0 = float(np.mean(_twist_scalar(res)))
    L = res.curve.length
    pot = res.potential
    nb = sc.solver.fock_basis

    def full(e):
        return float(ambient_oracle_3d_twisted(S0, pot, L, e, nb, k_eigs=1, j_max=2, hbar=sc.hbar).values[0])

    def perp(e):
        return sc.hbar * sum(w / e**2 * 0.5 for w in pot.omegas)

    rep = epsilon_convergence(eps, full, perp, E_eff)
    rep.meta.update({"S0": S0, "oracle": "fock", "n_basis": nb})
    return rep


def _twist_scalar(res: RunResult) -> np.ndarray:
    from .framing import potential_twist

    return potential_twist(res.frame).S[:, 0, 1, 0]


# -- output -----------------------------------------------------------------------


def _versions() -> dict:
    try:
        pkg = importlib_metadata.version("artifact")
    except importlib_metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"artifact": pkg, "numpy": np.__version__, "scipy": scipy.__version__}


def _conventions(res: RunResult) -> dict:
    if res.effective is not None:
        conv = dict(res.effective.conventions)
    else:
        from .effective import CONVENTIONS
        conv = dict(CONVENTIONS)
    conv["mode_phase"] = PHASE_CONVENTION
    return conv


def _mat_columns(prefix: str, k: int) -> list[str]:
    cols = []
    for a in range(k):
        for b in range(k):
            cols += [f"{prefix}_{a}{b}_re", f"{prefix}_{a}{b}_im"]
    return cols


def _mat_values(M: np.ndarray) -> list[float]:
    out = []
    for v in np.asarray(M).ravel():
        out += [float(np.real(v)), float(np.imag(v))]
    return out


def write_curve(res: RunResult, out: Path) -> Path:
    c = res.curve
    rows = [[c.alpha[j], *c.points[j], c.kappa[j], c.tau[j], c.kappa_signed[j]] for j in range(c.n_samples)]
    return write_csv(out / "curve.csv", ["alpha", "x", "y", "z", "kappa", "tau", "kappa_signed"], rows,
                     _conventions(res), res.scenario.hbar)


def write_modes(res: RunResult, out: Path) -> list[Path]:
    m = res.modes
    conv = _conventions(res)
    files = [write_csv(out / "modes.csv", ["n", "energy"], [[i, e] for i, e in enumerate(m.energies)], conv,
                       res.scenario.hbar)]
    rows = []
    for mu in range(m.d):
        for nu in range(m.d):
            for a in range(m.k):
                for b in range(m.k):
                    v = m.Lambda[mu, nu, a, b]
                    rows.append([mu, nu, a, b, float(v.real), float(v.imag)])
    files.append(write_csv(out / "lambda.csv", ["mu", "nu", "n", "n_prime", "re", "im"], rows, conv,
                           res.scenario.hbar))
    return files


def write_field(res: RunResult, out: Path) -> Path:
    f = res.effective
    k, m = f.k, f.m
    coords = ["alpha"] if m == 1 else [f"p{i}" for i in range(m)]
    header = coords + ["dacosta", "ambient", "Vef_extra"] + _mat_columns("Vex", k)
    for i in range(m):
        header += _mat_columns(f"A{i}", k)
    rows = []
    for idx in np.ndindex(*f.grid.shape):
        r = [f.grid.axes[a][idx[a]] for a in range(m)]
        r += [f.Vex.dacosta[idx], f.Vex.ambient[idx], 0.0 if f.Vef_extra is None else f.Vef_extra[idx]]
        r += _mat_values(f.Vex.total[idx])
        for i in range(m):
            r += _mat_values(f.A[idx][i])
        rows.append(r)
    return write_csv(out / "effective_field.csv", header, rows, _conventions(res), f.hbar)


def write_spectrum(res: RunResult, out: Path) -> Path:
    s = res.spectrum
    rows = [[i, v, r] for i, (v, r) in enumerate(zip(s.values, s.residuals))]
    return write_csv(out / "spectrum.csv", ["index", "E_parallel", "residual"], rows, _conventions(res),
                     res.scenario.hbar)


def write_convergence(res: RunResult, out: Path) -> Path:
    rows = [[r.epsilon, r.E_full, r.E_perp, r.E_residual, r.E_effective, r.abs_error] for r in res.convergence.rows]
    return write_csv(out / "convergence.csv", ["epsilon", "E_full", "E_perp", "E_residual", "E_effective",
                                               "abs_error"], rows, _conventions(res), res.scenario.hbar)


def summary(res: RunResult) -> dict:
    sc = res.scenario
    meta = {
        "scenario": effective_settings(sc),
        "versions": _versions(),
        "conventions": _conventions(res),
        "hbar": sc.hbar,
        "seed": sc.seed,
        "timings_s": res.timings,
        "residuals": {},
    }
    if res.curve is not None:
        meta["curve"] = {"length": res.curve.length, "n_samples": res.curve.n_samples,
                         "frame_defect": res.curve.frame_check()}
    if res.modes is not None:
        m = res.modes
        lam = m.expectation_lambda()
        meta["modes"] = {"kind": m.kind, "k": m.k, "d": m.d, "E_perp": m.energy, "labels": m.labels,
                         "lambda_expectation": np.real(lam).tolist(),
                         "orthonormality_defect": m.orthonormality_defect()}
        if m.d == 2:
            meta["modes"]["lambda12_variance"] = m.variance_12().tolist()
        if "lambda_hermiticity_residual" in m.notes:
            meta["residuals"]["lambda_hermiticity"] = m.notes["lambda_hermiticity_residual"]
    if res.effective is not None:
        f = res.effective
        meta["effective"] = {
            "k": f.k, "d": f.d, "m": f.m, "grid": list(f.grid.shape), "bc": list(f.grid.bc),
            "max_gauge": float(np.max(np.abs(f.A))) if f.A.size else 0.0,
            "vex_min": float(np.min(np.real(np.einsum("...ii->...i", f.Vex.total)))),
            "vex_max": float(np.max(np.real(np.einsum("...ii->...i", f.Vex.total)))),
        }
        meta["residuals"]["hermiticity"] = f.Vex.hermiticity_residual
        meta["residuals"]["bookkeeping"] = f.Vex.bookkeeping_residual()
        if "twist_antisymmetry" in f.notes:
            meta["residuals"]["twist_antisymmetry"] = f.notes["twist_antisymmetry"]
        if res.frame is not None and f.d == 2 and f.m == 1:
            S = _twist_scalar(res)
            lam = np.real(np.diagonal(res.modes.Lambda[0, 1]))
            meta["effective"]["twist_mean"] = float(np.mean(S))
            meta["effective"]["gauge_coefficient"] = (2 * float(np.mean(S)) * lam).tolist()
    if res.spectrum is not None:
        s = res.spectrum
        meta["spectrum"] = {"method": s.method, "max_residual": float(np.max(s.residuals)),
                            "operator_norm": s.operator_norm, "values": s.values.tolist()}
    if res.convergence is not None:
        c = res.convergence
        meta["convergence"] = {"order": c.order, "monotonic": c.monotonic,
                               "relative_error_last": c.relative_error_last, **c.meta}
    return meta


def run_scenario(sc: Scenario, out: str | Path | None = None, upto: str = "converge") -> RunResult:
    """Execute a scenario and write its artifacts into ``out``."""
    out = Path(out or sc.output or f"out/{sc.name}")
    res = compute(sc, upto)
    out.mkdir(parents=True, exist_ok=True)
    if res.curve is not None:
        res.files.append(write_curve(res, out))
    if res.modes is not None:
        res.files.extend(write_modes(res, out))
    if res.effective is not None:
        res.files.append(write_field(res, out))
    if res.spectrum is not None:
        res.files.append(write_spectrum(res, out))
    if res.convergence is not None:
        res.files.append(write_convergence(res, out))
    res.files.append(write_json(out / "metadata.json", summary(res)))
    return res
