"""Scenario files: strict YAML schema for batch runs.

A scenario names a geometry, a potential frame, a transverse potential
with a mode selection and solver settings. Unknown keys are rejected with
a spelling suggestion; every violation is reported at once.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from rapidfuzz.distance import Levenshtein

from .errors import ScenarioParseError, ScenarioValidationError

SCHEMA_VERSION = 1

CURVE_FAMILIES = ("circle", "helix", "ellipse", "line", "arc_line", "table")
SURFACE_FAMILIES = ("plane", "cylinder", "sphere", "torus", "flat_torus_r4")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometrySpec(_Strict):
    family: Literal["circle", "helix", "ellipse", "line", "arc_line", "table",
                    "plane", "cylinder", "sphere", "torus", "flat_torus_r4"]
    params: dict[str, float] = Field(default_factory=dict)
    path: Optional[str] = None
    closed: Optional[bool] = None

    @property
    def is_surface(self) -> bool:
        return self.family in SURFACE_FAMILIES

    @model_validator(mode="after")
    def _table_needs_path(self):
        if self.family == "table" and not self.path:
            raise ValueError("family 'table' requires 'path'")
        for key, val in self.params.items():
            if key in ("radius", "a", "b", "length", "r", "R", "r1", "r2", "size") and not val > 0:
                raise ValueError(f"params.{key} must be positive")
        return self


class FrameSpec(_Strict):
    profile: Literal["frenet", "untwisted", "constant_rate", "rotation", "table"] = "untwisted"
    twist: float = 0.0  # rotation rate of the frame relative to the untwisted one
    rotation_terms: list[tuple[float, int]] = Field(default_factory=list)  # theta = sum a sin(2 pi n alpha / L)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _table_needs_path(self):
        if self.profile == "table" and not self.path:
            raise ValueError("profile 'table' requires 'path'")
        return self


class TransverseSpec(_Strict):
    kind: Literal["harmonic", "disk", "square", "polygon", "interval"]
    omegas: Optional[list[float]] = None
    radius: Optional[float] = Field(default=None, gt=0)
    side: Optional[float] = Field(default=None, gt=0)
    width: Optional[float] = Field(default=None, gt=0)
    vertices: Optional[list[tuple[float, float]]] = None
    grid: int = Field(default=129, ge=33, le=513)
    stencil: Literal[5, 9] = 5

    @model_validator(mode="after")
    def _required(self):
        need = {"harmonic": "omegas", "disk": "radius", "square": "side", "polygon": "vertices", "interval": "width"}
        key = need[self.kind]
        if getattr(self, key) is None:
            raise ValueError(f"transverse kind {self.kind!r} requires {key!r}")
        if self.omegas is not None and any(not w > 0 for w in self.omegas):
            raise ValueError("omegas must be positive")
        return self


class ModeSpec(_Strict):
    occupations: Optional[list[list[int]]] = None
    index: int = Field(default=0, ge=0)
    k: int = Field(default=1, ge=1, le=16)
    angular: Optional[list[int]] = None  # disk: closed-form angular-momentum basis
    casimir: bool = False


class AdiabaticSpec(_Strict):
    kind: Literal["sin", "gaussian"] = "sin"
    amplitude: float = 0.0
    harmonic: int = 1
    centre: float = 0.0
    width: float = Field(default=1.0, gt=0)


class SolverSpec(_Strict):
    n_grid: int = Field(default=256, ge=16, le=200000)
    surface_grid: Optional[tuple[int, int]] = None
    bc: Literal["auto", "periodic", "dirichlet", "neumann"] = "auto"
    k_eigs: int = Field(default=6, ge=1, le=500)
    eps_list: Optional[list[float]] = None
    oracle_grid: tuple[int, int] = (400, 40)
    fock_basis: int = Field(default=16, ge=2, le=60)
    adiabatic: Optional[AdiabaticSpec] = None

    @field_validator("eps_list")
    @classmethod
    def _eps(cls, v):
        if v is None:
            return v
        bad = [e for e in v if not e > 0]
        if bad:
            raise ValueError(f"epsilon values must be positive (got {bad})")
        if len(v) < 3:
            raise ValueError("eps_list needs at least three values")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        return v


class Scenario(_Strict):
    schema_version: int
    name: str = Field(min_length=1)
    hbar: float = Field(default=1.0, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    geometry: GeometrySpec
    frame: FrameSpec = Field(default_factory=FrameSpec)
    transverse: TransverseSpec
    modes: ModeSpec = Field(default_factory=ModeSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    output: Optional[str] = None
    base_dir: str = "."

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v} (this build reads {SCHEMA_VERSION})")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        probs = []
        if self.geometry.is_surface and self.transverse.kind != "interval" and self.geometry.family != "flat_torus_r4":
            probs.append("surfaces in R^3 need an 'interval' cross-section")
        if self.solver.eps_list and self.transverse.kind not in ("interval", "harmonic"):
            probs.append("eps_list requires an interval (strip oracle) or harmonic (Fock oracle) cross-section")
        if probs:
            raise ValueError("; ".join(probs))
        return self

    def resolve(self, rel: Optional[str]) -> Optional[Path]:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _key_lines(node, path=(), out=None) -> dict:
    """Map key paths to 1-based line numbers from a composed YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _key_lines(v, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[path + (i,)] = v.start_mark.line + 1
            _key_lines(v, path + (i,), out)
    return out


def _allowed_keys(loc: tuple) -> list[str]:
    model: Any = Scenario
    for part in loc[:-1]:
        if isinstance(part, int):
            continue
        fld = model.model_fields.get(part)
        if fld is None:
            return []
        ann = fld.annotation
        args = getattr(ann, "__args__", ()) or (ann,)
        model = next((a for a in args if isinstance(a, type) and issubclass(a, BaseModel)), None)
        if model is None:
            return []
    return [k for k in model.model_fields if k != "base_dir"]


def _all_keys(model=Scenario, prefix="") -> list[str]:
    out = []
    for name, fld in model.model_fields.items():
        if name == "base_dir":
            continue
        out.append(prefix + name)
        args = getattr(fld.annotation, "__args__", ()) or (fld.annotation,)
        for a in args:
            if isinstance(a, type) and issubclass(a, BaseModel):
                out.extend(_all_keys(a, prefix + name + "."))
    return out


def _closest(bad: str, keys) -> Optional[str]:
    keys = sorted(keys)
    if not keys:
        return None
    dist = [Levenshtein.distance(bad, k) for k in keys]
    best = min(dist)
    if best > max(1, round(0.4 * len(bad))):
        return None
    return keys[dist.index(best)]


def suggest_key(bad: str, allowed: list[str]) -> Optional[str]:
    """Closest allowed key (edit distance) at the same level, else the closest key anywhere in the schema."""
    hit = _closest(bad, allowed)
    if hit:
        return hit
    everywhere = _all_keys()
    leaves = {k.rsplit(".", 1)[-1]: k for k in reversed(everywhere)}
    hit = _closest(bad, leaves)
    return leaves[hit] if hit else None


def _describe(errors: list, lines: dict) -> list[str]:
    probs = []
    for e in errors:
        loc = tuple(e["loc"])
        dotted = ".".join(str(p) for p in loc) or "<root>"
        line = None
        for cut in range(len(loc), 0, -1):
            if loc[:cut] in lines:
                line = lines[loc[:cut]]
                break
        where = f" (line {line})" if line else ""
        if e["type"] == "extra_forbidden":
            hint = suggest_key(str(loc[-1]), _allowed_keys(loc))
            msg = f"unknown key {dotted!r}{where}"
            if hint:
                msg += f"; did you mean {hint!r}?"
        else:
            msg = f"{dotted}: {e['msg']}{where}"
        probs.append(msg)
    return probs


def parse_scenario_text(text: str, base_dir: str | Path = ".") -> Scenario:
    """Parse and validate scenario text.

    Raises
    ------
    ScenarioParseError
        For malformed YAML (with line number) or a non-mapping document.
    ScenarioValidationError
        Listing every schema violation.
    """
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioParseError(f"malformed scenario: {getattr(exc, 'problem', exc)}",
                                 line=mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ScenarioParseError("scenario must be a mapping of keys to values", line=1)
    if "base_dir" in data:
        raise ScenarioValidationError([f"unknown key 'base_dir' (line {_key_lines(node).get(('base_dir',))})"])
    lines = _key_lines(node)
    problems = []
    sc = None
    try:
        sc = Scenario.model_validate({**data, "base_dir": str(base_dir)})
    except ValidationError as exc:
        problems.extend(_describe(exc.errors(), lines))
    for section in ("geometry", "frame"):
        sub = data.get(section)
        rel = sub.get("path") if isinstance(sub, dict) else None
        if isinstance(rel, str):
            p = Path(rel) if Path(rel).is_absolute() else Path(base_dir) / rel
            if not p.is_file():
                problems.append(f"{section}.path: file not found: {p} (line {lines.get((section, 'path'))})")
    if problems:
        raise ScenarioValidationError(problems)
    return sc


def parse_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario {path}: {exc.strerror}") from None
    return parse_scenario_text(text, path.parent)


def effective_settings(sc: Scenario) -> dict:
    """Scenario with defaults applied, for echoing into output metadata."""
    d = sc.model_dump(mode="json")
    d.pop("base_dir", None)
    return d
