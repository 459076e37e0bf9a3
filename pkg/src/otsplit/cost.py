"""Energy evaluation, weight maps and velocity extraction."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, DimensionError, ValidationError
from .grid import CenteredField
from .prox import CostModel

#: per-cell penalty used in telemetry in place of +inf
PENALTY_CAP = 1e15
_MOMENTUM_ZERO = 1e-12


def _cell_terms(V: CenteredField, cost: CostModel):
    dims = V.dims
    V.check(dims)
    w = cost.weight_grid(dims).ravel()
    f = V.f.ravel()
    mt2 = np.sum(V.m.reshape(dims.d, -1) ** 2, axis=0)
    blocked = ~np.isfinite(w)
    terms = np.zeros(f.size)
    pos = (f > 0) & ~blocked
    beta = cost.beta
    if beta == 1.0:
        terms[pos] = w[pos] * mt2[pos] / (2.0 * f[pos])
    elif beta == 0.0:
        # lower semicontinuous hull: finite on f >= 0
        pos = (f >= 0) & ~blocked
        terms[pos] = w[pos] * mt2[pos] / 2.0
    else:
        terms[pos] = w[pos] * mt2[pos] / (2.0 * f[pos] ** beta)
    origin = (f == 0) & (mt2 == 0)
    infeasible = ~pos & ~origin
    return terms, infeasible, f, mt2


def energy(V: CenteredField, cost: CostModel | None = None) -> float:
    """Total cost ``sum_k w_k j_beta(m_k, f_k)``; ``+inf`` when some cell is outside the domain.

    Cells are visited in C order and summed with :func:`math.fsum`, so the
    result is the correctly rounded sum of the per-cell terms and does not
    depend on the visiting order.
    """
    cost = cost or CostModel()
    terms, infeasible, _, _ = _cell_terms(V, cost)
    if infeasible.any():
        return math.inf
    return math.fsum(terms.tolist())


class TelemetryEnergy(NamedTuple):
    value: float
    penalized: int
    regular: float


def telemetry_energy(V: CenteredField, cost: CostModel | None = None) -> TelemetryEnergy:
    """Finite surrogate of :func:`energy` for logging intermediate iterates.

    Cells with ``f <= 0`` and negligible momentum count as 0, other
    infeasible cells count :data:`PENALTY_CAP` each.  ``regular`` is the sum
    over the cells that were not penalized.
    """
    cost = cost or CostModel()
    terms, infeasible, _, mt2 = _cell_terms(V, cost)
    penalized = infeasible & (np.sqrt(mt2) > _MOMENTUM_ZERO)
    regular = math.fsum(terms[~penalized].tolist())
    n = int(penalized.sum())
    value = math.fsum(terms.tolist() + [PENALTY_CAP] * n) if n else regular
    return TelemetryEnergy(value, n, regular)


def _distance_slice(mask: np.ndarray) -> np.ndarray:
    # the nearest obstacle node to a free node always borders free space, so
    # the exact Euclidean transform to the whole obstacle is the distance to
    # its boundary; the distance is rebuilt from the integer offsets
    h = np.array([1.0 / (n - 1) for n in mask.shape]).reshape((-1,) + (1,) * mask.ndim)
    _, nearest = ndimage.distance_transform_edt(~mask, sampling=tuple(h.ravel()), return_indices=True)
    offsets = nearest - np.indices(mask.shape)
    return np.sqrt(np.sum((offsets * h) ** 2, axis=0))


def build_weights(mask, mode: str = "obstacle", time_axis: bool = False) -> np.ndarray:
    """Weight grid for a boolean obstacle mask.

    ``mode`` is ``"uniform"`` (all ones), ``"obstacle"`` (1 outside, inf
    inside) or ``"distance"`` (1 plus the Euclidean distance to the obstacle
    boundary outside, inf inside).  Distances use unit-square coordinates,
    node ``i`` sitting at ``i/N``.

    With ``time_axis=True`` the last axis of ``mask`` indexes time and each
    slice is handled on its own (moving obstacles).
    """
    mask = np.asarray(mask, dtype=bool)
    if mode not in ("uniform", "obstacle", "distance"):
        raise ValidationError(f"unknown weight mode {mode!r}")
    if mode == "uniform":
        return np.ones(mask.shape)
    slices = [mask[..., t] for t in range(mask.shape[-1])] if time_axis else [mask]
    if slices[0].ndim not in (1, 2) or any(s < 2 for s in slices[0].shape):
        raise DimensionError(f"mask shape {mask.shape} is not a 1-D or 2-D node grid")
    out = []
    for s in slices:
        if s.all():
            raise DegenerateInputError("the obstacle covers every node; no mass can be placed")
        if mode == "obstacle":
            w = np.where(s, np.inf, 1.0)
        else:
            if not s.any():
                raise DegenerateInputError("distance weights need a nonempty obstacle")
            w = np.where(s, np.inf, 1.0 + _distance_slice(s))
        out.append(w)
    return np.stack(out, axis=-1) if time_axis else out[0]


def velocity_field(V: CenteredField, eps: float = 1e-12) -> np.ndarray:
    """Velocity ``m / f`` where ``f > eps`` and 0 elsewhere; shape of ``V.m``."""
    if eps < 0:
        raise ValidationError("eps must be nonnegative")
    f = V.f
    ok = f > eps
    safe = np.where(ok, f, 1.0)
    return np.where(ok[None], V.m / safe[None], 0.0)


def hessian_determinant(m, f, beta: float) -> float:
    """Determinant of the Hessian of ``|m|^2 / (2 f^beta)`` in ``(m, f)`` at ``f > 0``.

    Equals ``beta (1 - beta) |m|^2 / (2 f^((d+1) beta + 2))``, which is
    positive for ``0 < beta < 1`` and ``m != 0``.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if f <= 0:
        raise ValidationError("the Hessian is only defined for positive density")
    d = m.size
    return beta * (1.0 - beta) * float(m @ m) / (2.0 * f ** ((d + 1) * beta + 2.0))


def hessian_matrix(m, f, beta: float) -> np.ndarray:
    """Analytic Hessian of ``|m|^2 / (2 f^beta)``; the last coordinate is ``f``."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    d = m.size
    H = np.zeros((d + 1, d + 1))
    H[:d, :d] = np.eye(d) / f**beta
    H[:d, d] = H[d, :d] = -beta * m / f ** (beta + 1)
    H[d, d] = beta * (beta + 1) * float(m @ m) / (2.0 * f ** (beta + 2))
    return H
