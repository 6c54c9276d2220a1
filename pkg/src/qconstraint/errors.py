"""Exception hierarchy.

Every failure raised by the package derives from ``ConstraintError`` so
callers (the CLI in particular) can map them to a nonzero exit status
with one handler.
"""

from __future__ import annotations


class ConstraintError(Exception):
    """Base class for all package errors."""


# geometry
class NonUnitSpeed(ConstraintError):
    """Curve map is not parameterized by arclength."""


class DegenerateFrame(ConstraintError):
    """Frenet normal undefined and no frame is available to transport."""


class ZeroSpeed(ConstraintError):
    """Curve map has (numerically) vanishing speed."""


class SingularMetric(ConstraintError):
    """Metric tensor is singular, asymmetric or not positive definite."""


class FrameMismatch(ConstraintError):
    """Frame count or orthonormality does not match the embedding."""


# framing
class GridTooCoarse(ConstraintError):
    """Finite differences on the supplied grid are not converged."""


# transverse
class NotDegenerate(ConstraintError):
    """Requested modes do not share a common transverse energy."""


class DegeneracySplit(ConstraintError):
    """Requested mode count cuts through a degenerate cluster."""


class ResolutionInsufficient(ConstraintError):
    """Eigenvalues move too much under one grid refinement."""


# effective
class FormMismatch(ConstraintError):
    """Equivalent extrapotential forms disagree (inconsistent scalars)."""


class ShapeMismatch(ConstraintError):
    """Input arrays are not sampled on a common grid or mode count."""


class NonHermitianResidual(ConstraintError):
    """Assembled matrix departs from Hermiticity beyond tolerance."""


# solver
class UnsupportedDimension(ConstraintError):
    """Tangential discretization requested for m > 2."""


class NoConvergence(ConstraintError):
    """Iterative eigensolver did not certify its residuals."""

    def __init__(self, message: str, iterations: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SelfIntersection(ConstraintError):
    """Tubular neighbourhood of the requested width overlaps itself."""


class TruncationInsufficient(ConstraintError):
    """Fock-basis truncation has not converged the requested levels."""


# cli
class ScenarioParseError(ConstraintError):
    """Scenario file is not well-formed structured text."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ScenarioValidationError(ConstraintError):
    """Scenario violates the schema; carries every violation found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        lines = "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(f"scenario has {len(self.problems)} problem(s):\n{lines}")
