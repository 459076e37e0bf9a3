"""Linear maps between the staggered and centered grids.

Scale factors are the interval counts ``N`` (``M``) and ``P`` themselves,
so ``divergence`` of a staggered field is
``N (mbar[i] - mbar[i-1]) + P (fbar[j] - fbar[j-1])`` at every centered node.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DimensionError
from .grid import (
    BoundaryValues,
    CenteredField,
    GridDims,
    StaggeredField,
    extract_boundary,
    write_boundary,
)

logger = logging.getLogger(__name__)


def _sl(ndim: int, axis: int, s: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def _avg(x: np.ndarray, axis: int) -> np.ndarray:
    return 0.5 * (x[_sl(x.ndim, axis, slice(None, -1))] + x[_sl(x.ndim, axis, slice(1, None))])


def _avg_adjoint(y: np.ndarray, axis: int) -> np.ndarray:
    shape = list(y.shape)
    shape[axis] += 1
    out = np.zeros(shape)
    n = y.shape[axis]
    idx = [slice(None)] * y.ndim
    idx[axis] = slice(0, n)
    out[tuple(idx)] += 0.5 * y
    idx[axis] = slice(1, n + 1)
    out[tuple(idx)] += 0.5 * y
    return out


def interpolate(U: StaggeredField) -> CenteredField:
    """Midpoint interpolation of a staggered field onto the centered grid."""
    d = len(U.mbar)
    m = np.stack([_avg(U.mbar[a], a) for a in range(d)])
    return CenteredField(m, _avg(U.fbar, U.fbar.ndim - 1))


def interpolate_adjoint(V: CenteredField) -> StaggeredField:
    d = V.m.shape[0]
    mbar = tuple(_avg_adjoint(V.m[a], a) for a in range(d))
    return StaggeredField(mbar, _avg_adjoint(V.f, V.f.ndim - 1))


def divergence(U: StaggeredField) -> np.ndarray:
    """Space-time divergence, evaluated on the centered nodes."""
    dims = U.dims
    U.check(dims)
    out = dims.P * np.diff(U.fbar, axis=-1)
    for a, n in enumerate(dims.counts):
        out += n * np.diff(U.mbar[a], axis=a)
    return out


def _diff_adjoint(p: np.ndarray, axis: int) -> np.ndarray:
    shape = list(p.shape)
    shape[axis] += 1
    out = np.zeros(shape)
    n = p.shape[axis]
    idx = [slice(None)] * p.ndim
    idx[axis] = slice(1, n + 1)
    out[tuple(idx)] += p
    idx[axis] = slice(0, n)
    out[tuple(idx)] -= p
    return out


def divergence_adjoint(p: np.ndarray) -> StaggeredField:
    """Transpose of :func:`divergence` (a negative scaled forward difference)."""
    p = np.asarray(p, dtype=float)
    dims = GridDims.from_spatial_shape(p.shape[:-1], p.shape[-1] - 1)
    mbar = tuple(n * _diff_adjoint(p, a) for a, n in enumerate(dims.counts))
    return StaggeredField(mbar, dims.P * _diff_adjoint(p, p.ndim - 1))


def boundary_adjoint(b: BoundaryValues, dims: GridDims) -> StaggeredField:
    """Transpose of :func:`extract_boundary`: scatter slabs into a zero field."""
    return write_boundary(StaggeredField.zeros(dims), b)


def _boundary_to_vector(b: BoundaryValues) -> np.ndarray:
    return np.concatenate([x.ravel() for x in b._arrays()])


def _boundary_from_vector(x: np.ndarray, dims: GridDims) -> BoundaryValues:
    template = extract_boundary(StaggeredField.zeros(dims), dims)
    parts, start = [], 0
    for arr in template._arrays():
        parts.append(x[start : start + arr.size].reshape(arr.shape).copy())
        start += arr.size
    d = dims.d
    return BoundaryValues(tuple(parts[:d]), tuple(parts[d : 2 * d]), parts[2 * d], parts[2 * d + 1])


@dataclass
class LinearMap:
    """A linear operator on flat vectors, described by its action and its adjoint."""

    forward: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    shape: tuple

    @classmethod
    def identity(cls, n: int) -> "LinearMap":
        return cls(lambda x: x.copy(), lambda y: y.copy(), (n, n))

    @classmethod
    def zero(cls, m: int, n: int) -> "LinearMap":
        return cls(lambda x: np.zeros(m), lambda y: np.zeros(n), (m, n))


def linear_map(op: str, dims: GridDims) -> LinearMap:
    """Flat-vector wrapper of one of the grid operators.

    ``op`` is ``"interpolation"``, ``"divergence"`` or ``"constraint"``
    (the stacked map ``U -> (div U, b(U))``).
    """
    ns = dims.staggered_size
    nc = dims.centered_size
    nodes = int(np.prod(dims.centered_shape))

    def stag(x):
        return StaggeredField.from_vector(x, dims)

    if op == "interpolation":
        return LinearMap(
            lambda x: interpolate(stag(x)).ravel(),
            lambda y: interpolate_adjoint(CenteredField.from_vector(y, dims)).ravel(),
            (nc, ns),
        )
    if op == "divergence":
        return LinearMap(
            lambda x: divergence(stag(x)).ravel(),
            lambda y: divergence_adjoint(y.reshape(dims.centered_shape)).ravel(),
            (nodes, ns),
        )
    if op == "constraint":
        nb = _boundary_to_vector(extract_boundary(StaggeredField.zeros(dims), dims)).size

        def fwd(x):
            U = stag(x)
            return np.concatenate([divergence(U).ravel(), _boundary_to_vector(extract_boundary(U, dims))])

        def adj(y):
            p = y[:nodes].reshape(dims.centered_shape)
            b = _boundary_from_vector(y[nodes:], dims)
            return (divergence_adjoint(p) + boundary_adjoint(b, dims)).ravel()

        return LinearMap(fwd, adj, (nodes + nb, ns))
    raise DimensionError(f"unknown operator {op!r}")


def estimate_op_norm(op: LinearMap, tol: float = 1e-10, max_iter: int = 10000, seed: int = 0) -> float:
    """Largest singular value of ``op`` by power iteration on ``op* op``.

    The start vector is drawn from a fixed seed so step sizes derived from
    the estimate are reproducible.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.shape[1])
    x /= np.linalg.norm(x)
    sigma = None
    for it in range(max_iter):
        y = op.adjoint(op.forward(x))
        lam = float(np.vdot(x, y))
        new = math.sqrt(max(lam, 0.0))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        if sigma is not None and abs(new - sigma) <= tol * new:
            logger.debug("power iteration converged after %d iterations: %.15g", it + 1, new)
            return new
        sigma = new
        x = y / ny
    raise ConvergenceError(
        f"power iteration did not reach relative change {tol:g} in {max_iter} iterations",
        estimate=sigma,
    )
