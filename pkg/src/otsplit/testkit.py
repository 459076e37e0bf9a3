"""Brute-force reference implementations for validating the production code.

``oracle_prox``, ``oracle_project`` and ``oracle_distance`` are written from
the definitions and do not call the operators, proximal maps or weight
builders of the package.  ``oracle_dense_op`` applies a production operator
to canonical basis vectors; it is a dense view, not an independent check.
These routines are slow by design.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import SizeError
from .grid import BoundaryValues, GridDims, StaggeredField

MAX_UNKNOWNS = 5000
_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def _reduced_objective(f, ft, mt2, gw, beta):
    # value of the prox objective after minimizing over the momentum in closed form
    fb = np.power(f, beta) if beta > 0 else np.ones_like(f)
    return 0.5 * (f - ft) ** 2 + 0.5 * mt2 * gw / (fb + gw)


def oracle_prox(m, f, gamma: float, beta: float = 1.0, weight: float = 1.0):
    """Minimize ``|z - (m, f)|^2 / 2 + gamma w |z_m|^2 / (2 z_f^beta)`` by direct search.

    The density is located on a log-spaced grid over
    ``[1e-12, max(f, 0) + gamma w + |m| + 1]`` and refined by golden-section
    search; the momentum follows in closed form.  The result is compared with
    the ``(0, 0)`` candidate.  For ``beta = 0`` the search interval starts at
    ``f = 0``, where the cost is ``w |m|^2 / 2``.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    ft = float(f)
    gw = float(gamma) * float(weight)
    mt2 = float(m @ m)
    hi = max(ft, 0.0) + gw + math.sqrt(mt2) + 1.0
    lo = 0.0 if beta == 0 else 1e-12
    grid = np.concatenate([[lo], np.geomspace(1e-12, hi, 400)]) if beta == 0 else np.geomspace(lo, hi, 400)
    vals = _reduced_objective(grid, ft, mt2, gw, beta)
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]

    def g(x):
        return float(_reduced_objective(np.array([x]), ft, mt2, gw, beta)[0])

    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    gc, gd = g(c), g(d)
    while b - a > 1e-12 * max(1.0, b):
        if gc < gd:
            b, d, gd = d, c, gc
            c = b - _GOLD * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + _GOLD * (b - a)
            gd = g(d)
    best = min((a, g(a)), (b, g(b)), (0.5 * (a + b), g(0.5 * (a + b))), (grid[k], vals[k]), key=lambda t: t[1])
    fs, val = best
    zero_val = 0.5 * (ft * ft + mt2)
    if beta > 0 and zero_val <= val:
        return np.zeros_like(m), 0.0
    fb = fs**beta if beta > 0 else 1.0
    return fb * m / (fb + gw), float(fs)


def prox_objective(z_m, z_f, m, f, gamma, beta=1.0, weight=1.0) -> float:
    """Objective of the pointwise prox problem at a candidate ``(z_m, z_f)``."""
    z_m = np.atleast_1d(np.asarray(z_m, dtype=float))
    m = np.atleast_1d(np.asarray(m, dtype=float))
    q = float(z_m @ z_m)
    if z_f > 0 or (beta == 0 and z_f == 0):
        cost = q / (2.0 * z_f**beta) if beta > 0 else q / 2.0
    elif z_f == 0 and q == 0:
        cost = 0.0
    else:
        return math.inf
    return 0.5 * (float((z_m - m) @ (z_m - m)) + (z_f - f) ** 2) + gamma * weight * cost


def _layout(dims: GridDims):
    """Offsets and shapes of the staggered unknowns, momentum components first."""
    shapes, offsets, start = [], [], 0
    for a in range(dims.d):
        shape = list(dims.centered_shape)
        shape[a] += 1
        shapes.append(tuple(shape))
        offsets.append(start)
        start += int(np.prod(shape))
    shape = list(dims.centered_shape)
    shape[-1] += 1
    shapes.append(tuple(shape))
    offsets.append(start)
    start += int(np.prod(shape))
    return shapes, offsets, start


def _constraint_matrix(dims: GridDims) -> np.ndarray:
    shapes, offsets, n = _layout(dims)
    scales = list(dims.counts) + [dims.P]
    nodes = list(np.ndindex(*dims.centered_shape))
    rows = []
    for node in nodes:
        r = np.zeros(n)
        for comp, (shape, off, h) in enumerate(zip(shapes, offsets, scales)):
            axis = comp if comp < dims.d else dims.d
            up = list(node)
            up[axis] += 1
            r[off + np.ravel_multi_index(tuple(up), shape)] += h
            r[off + np.ravel_multi_index(node, shape)] -= h
        rows.append(r)
    for comp, (shape, off) in enumerate(zip(shapes, offsets)):
        axis = comp if comp < dims.d else dims.d
        for end in (0, shape[axis] - 1):
            for idx in np.ndindex(*shape):
                if idx[axis] == end:
                    r = np.zeros(n)
                    r[off + np.ravel_multi_index(idx, shape)] = 1.0
                    rows.append(r)
    return np.array(rows)


def _target(b0: BoundaryValues, dims: GridDims) -> np.ndarray:
    parts = [np.zeros(int(np.prod(dims.centered_shape)))]
    for a in range(dims.d):
        parts += [np.asarray(b0.m_lo[a]).ravel(), np.asarray(b0.m_hi[a]).ravel()]
    parts += [np.asarray(b0.f0).ravel(), np.asarray(b0.f1).ravel()]
    return np.concatenate(parts)


def _vector(U: StaggeredField) -> np.ndarray:
    return np.concatenate([np.asarray(x).ravel() for x in tuple(U.mbar) + (U.fbar,)])


def oracle_project(U: StaggeredField, b0: BoundaryValues) -> StaggeredField:
    """Nearest field to ``U`` with zero divergence and boundary ``b0``, by a dense solve."""
    dims = U.dims
    shapes, offsets, n = _layout(dims)
    if n > MAX_UNKNOWNS:
        raise SizeError(f"{n} unknowns exceed the dense oracle cap of {MAX_UNKNOWNS}")
    A = _constraint_matrix(dims)
    x = _vector(U)
    y = _target(b0, dims)
    # minimum-norm correction; the system is consistent up to the mass balance
    delta, *_ = np.linalg.lstsq(A, A @ x - y, rcond=1e-12)
    out = x - delta
    parts = [out[o : o + int(np.prod(s))].reshape(s) for s, o in zip(shapes, offsets)]
    return StaggeredField(tuple(parts[:-1]), parts[-1])


def oracle_constraint_residual(U: StaggeredField, b0: BoundaryValues) -> float:
    """``|A U - y|_inf`` with the densely assembled constraint matrix."""
    dims = U.dims
    A = _constraint_matrix(dims)
    return float(np.max(np.abs(A @ _vector(U) - _target(b0, dims))))


def oracle_dense_op(op: str, dims: GridDims, adjoint: bool = False) -> np.ndarray:
    """Dense matrix of a production operator, one basis vector at a time."""
    from .operators import linear_map

    L = linear_map(op, dims)
    rows, cols = L.shape
    if max(rows, cols) > MAX_UNKNOWNS:
        raise SizeError(f"operator of shape {L.shape} exceeds the dense cap of {MAX_UNKNOWNS}")
    apply = L.adjoint if adjoint else L.forward
    n_in = rows if adjoint else cols
    n_out = cols if adjoint else rows
    out = np.zeros((n_out, n_in))
    e = np.zeros(n_in)
    for k in range(n_in):
        e[k] = 1.0
        out[:, k] = apply(e)
        e[k] = 0.0
    return out


def oracle_distance(mask) -> np.ndarray:
    """Distance from every node to the nearest obstacle boundary node, by exhaustive search.

    Boundary nodes are obstacle nodes with a free neighbour along some axis.
    Coordinates are ``i / (n - 1)`` per axis; obstacle nodes get ``inf``.
    """
    mask = np.asarray(mask, dtype=bool)
    idx = list(np.ndindex(*mask.shape))
    boundary = []
    for p in idx:
        if not mask[p]:
            continue
        for ax in range(mask.ndim):
            for s in (-1, 1):
                q = list(p)
                q[ax] += s
                if 0 <= q[ax] < mask.shape[ax] and not mask[tuple(q)]:
                    boundary.append(p)
                    break
            else:
                continue
            break
    h = np.array([1.0 / (n - 1) for n in mask.shape])
    out = np.full(mask.shape, np.inf)
    B = np.array(boundary, dtype=np.int64).reshape(-1, mask.ndim)
    for p in idx:
        if mask[p] or not len(B):
            continue
        off = B - np.array(p, dtype=np.int64)
        out[p] = float(np.min(np.sqrt(np.sum((off * h) ** 2, axis=1))))
    return out
