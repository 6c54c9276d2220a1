"""Effective Hamiltonians for quantum systems confined to submanifolds by stiff transverse potentials.

Modules: ``geometry`` (curves, embeddings, curvature), ``framing``
(potential frames and twist), ``transverse`` (cross-section modes and
Lambda matrices), ``effective`` (assembly of the constrained Hamiltonian),
``solver`` (discretization, eigensolves, full-dimensional oracles) and
``cli`` (scenario-driven batch runs).
"""

from .errors import ConstraintError

__version__ = "0.1.0"

__all__ = ["ConstraintError", "__version__"]
