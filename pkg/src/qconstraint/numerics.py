"""Small numerical helpers shared across modules.

Central finite-difference weights of arbitrary order, applied either to
callables (``derivative``) or to uniformly sampled arrays (``grid_derivative``).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def central_weights(order: int, accuracy: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the central stencil for ``d^order/dx^order``.

    Weights are for unit spacing; divide by ``h**order``.
    """
    half = (order - 1) // 2 + accuracy // 2
    offsets = np.arange(-half, half + 1)
    return offsets, _solve_weights(offsets, order)


@lru_cache(maxsize=None)
def one_sided_weights(order: int, offsets: tuple[int, ...]) -> np.ndarray:
    """Weights on an arbitrary offset set (used for edge closures)."""
    return _solve_weights(np.asarray(offsets), order)


def _solve_weights(offsets: np.ndarray, order: int) -> np.ndarray:
    n = len(offsets)
    # Taylor conditions sum_j w_j s_j^p / p! = delta_{p,order}
    A = np.vander(offsets.astype(float), n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    w = np.linalg.solve(A, rhs)
    w[np.abs(w) < 1e-14] = 0.0
    w.flags.writeable = False
    return w


def derivative(f, x: float, order: int = 1, h: float = 1e-4, accuracy: int = 4):
    """Central finite-difference derivative of ``f`` (scalar or array valued) at ``x``."""
    offsets, w = central_weights(order, accuracy)
    acc = None
    for s, c in zip(offsets, w):
        if c == 0.0:
            continue
        term = c * np.asarray(f(x + s * h), dtype=float)
        acc = term if acc is None else acc + term
    return acc / h**order


def partial(f, x: np.ndarray, axis: int, h: float, order: int = 1, accuracy: int = 4):
    """Partial derivative of ``f`` along coordinate ``axis`` at point ``x``."""
    x = np.asarray(x, dtype=float)
    e = np.zeros_like(x)
    e[axis] = 1.0
    return derivative(lambda t: f(x + t * e), 0.0, order=order, h=h, accuracy=accuracy)


def mixed_partial(f, x: np.ndarray, a: int, b: int, h: float, accuracy: int = 4):
    """Second partial ``d^2 f / dx_a dx_b`` (nested first derivatives when a != b)."""
    if a == b:
        return partial(f, x, a, h, order=2, accuracy=accuracy)
    x = np.asarray(x, dtype=float)
    e = np.zeros_like(x)
    e[b] = 1.0
    return derivative(lambda t: partial(f, x + t * e, a, h, accuracy=accuracy), 0.0, h=h, accuracy=accuracy)


def grid_derivative(values: np.ndarray, h: float, axis: int = 0, periodic: bool = False,
                    accuracy: int = 4) -> np.ndarray:
    """First derivative of uniformly sampled data along ``axis``.

    Interior points use the central stencil of the given (even) accuracy
    order. Periodic data wraps; otherwise edge layers use one-sided
    closures of the same width.
    """
    v = np.moveaxis(np.asarray(values), axis, 0)
    n = v.shape[0]
    offsets, w = central_weights(1, accuracy)
    half = int(offsets[-1])
    width = 2 * half + 1
    if n < width:
        raise ValueError(f"need at least {width} samples for accuracy {accuracy}")
    if periodic:
        out = sum(c * np.roll(v, -s, axis=0) for s, c in zip(offsets, w) if c != 0.0)
    else:
        out = np.empty_like(v, dtype=np.result_type(v, float))
        out[half:n - half] = sum(c * v[half + s: n - half + s] for s, c in zip(offsets, w) if c != 0.0)
        for i in list(range(half)) + list(range(n - half, n)):
            base = min(max(i - half, 0), n - width)
            offs = tuple(range(base - i, base - i + width))
            ww = one_sided_weights(1, offs)
            out[i] = sum(c * v[i + s] for s, c in zip(offs, ww))
    return np.moveaxis(out / h, 0, axis)


def orthonormal_complement(vectors: np.ndarray, dim: int, metric: np.ndarray | None = None,
                           references: np.ndarray | None = None) -> np.ndarray:
    """Complete ``vectors`` (rows) to an orthonormal basis; return the new rows.

    Candidates are ``references`` (default: the coordinate axes). Each step
    takes the candidate with the largest component orthogonal to the basis
    so far, ties going to the earlier candidate, so the completion is
    deterministic and well conditioned.
    """
    g = np.eye(dim) if metric is None else metric
    basis = [np.asarray(v, dtype=float) for v in vectors]
    cands = np.eye(dim) if references is None else np.atleast_2d(np.asarray(references, dtype=float))
    out = []
    while len(basis) < dim:
        best, best_norm = None, 1e-6
        for c in cands:
            r = c.copy()
            for _ in range(2):
                for b in basis:
                    r = r - (b @ g @ r) * b
            nrm = np.sqrt(r @ g @ r)
            if nrm > best_norm * (1 + 1e-12):
                best, best_norm = r / nrm, nrm
        if best is None:
            raise np.linalg.LinAlgError("candidates do not span the complement")
        basis.append(best)
        out.append(best)
    return np.array(out).reshape(len(out), dim)


def complement_references(vectors: np.ndarray, dim: int, metric: np.ndarray | None = None) -> np.ndarray:
    """Coordinate axes chosen greedily to complete ``vectors``; reusable nearby."""
    g = np.eye(dim) if metric is None else metric
    basis = [np.asarray(v, dtype=float) for v in vectors]
    chosen = []
    while len(basis) < dim:
        best, best_norm, best_axis = None, 1e-6, None
        for axis in range(dim):
            if axis in chosen:
                continue
            r = np.eye(dim)[axis]
            for b in basis:
                r = r - (b @ g @ r) * b
            nrm = np.sqrt(r @ g @ r)
            if nrm > best_norm * (1 + 1e-12):
                best, best_norm, best_axis = r / nrm, nrm, axis
        if best is None:
            raise np.linalg.LinAlgError("axes do not span the complement")
        basis.append(best)
        chosen.append(best_axis)
    return np.eye(dim)[chosen]


def gram_schmidt(vectors: np.ndarray, metric: np.ndarray | None = None) -> np.ndarray:
    """Modified Gram-Schmidt on rows of ``vectors`` w.r.t. ``metric``."""
    vecs = np.array(vectors, dtype=float)
    g = np.eye(vecs.shape[1]) if metric is None else metric
    out = []
    for v in vecs:
        for _ in range(2):
            for b in out:
                v = v - (b @ g @ v) * b
        nrm = np.sqrt(v @ g @ v)
        if nrm < 1e-12:
            raise np.linalg.LinAlgError("linearly dependent vectors in Gram-Schmidt")
        out.append(v / nrm)
    return np.array(out)
