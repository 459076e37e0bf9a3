"""Proximal maps and projections used by every solver.

The pointwise kernels work on flat batches of cells.  Each cell is iterated
independently (converged cells are frozen), so the result for a cell does
not depend on which other cells share the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft
import scipy.sparse.linalg as spla

from .errors import DimensionError, DomainError, FeasibilityError, NumericalError, ValidationError
from .grid import (
    BoundaryValues,
    CenteredField,
    GridDims,
    StaggeredField,
    check_boundary,
    write_boundary,
)
from .operators import divergence, divergence_adjoint, interpolate, interpolate_adjoint

_EPS = np.finfo(float).eps
_TINY = 1e-300
DEFAULT_WEIGHT_FLOOR = 1e-6


@dataclass
class CostModel:
    """Exponent ``beta`` and per-node weights of the transport cost.

    ``weights=None`` means unit weights everywhere.  Infinite weights mark
    obstacle nodes where no mass may sit.  Finite weights must exceed
    ``lower_bound``.
    """

    beta: float = 1.0
    weights: Optional[np.ndarray] = None
    lower_bound: float = DEFAULT_WEIGHT_FLOOR

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0):
            raise DomainError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lower_bound <= 0:
            raise ValidationError("the weight lower bound must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(np.isnan(w)) or np.any(w == -np.inf):
                raise ValidationError("weights must be real or +inf")
            finite = np.isfinite(w)
            if np.any(w[finite] <= self.lower_bound):
                raise ValidationError(
                    f"finite weights must exceed {self.lower_bound:g} (min {w[finite].min():g})"
                )
            self.weights = w

    @property
    def is_uniform(self) -> bool:
        return self.weights is None

    def weight_grid(self, dims: GridDims) -> np.ndarray:
        """Weights broadcast to the full centered grid (spatial-only maps are time-constant)."""
        shape = dims.centered_shape
        if self.weights is None:
            return np.ones(shape)
        w = self.weights
        if w.shape == shape:
            return w
        if w.shape == dims.spatial_shape:
            return np.broadcast_to(w[..., None], shape)
        raise DimensionError(f"weight grid shape {w.shape} does not match grid {dims}")

    def obstacle_mask(self, dims: GridDims) -> np.ndarray:
        return ~np.isfinite(self.weight_grid(dims))


# ---------------------------------------------------------------------------
# pointwise kernels


def _poly(beta: float, x, ft, mt2, g):
    """Value and derivative of the optimality polynomial in the density."""
    if beta == 1.0:
        xg = x + g
        p = (x - ft) * xg * xg - 0.5 * g * mt2
        dp = xg * (3.0 * x + g - 2.0 * ft)
        return p, dp
    xb = x**beta
    xb_g = xb + g
    x1b = x ** (1.0 - beta)
    p = x1b * (x - ft) * xb_g * xb_g - 0.5 * g * beta * mt2
    dp = xb_g * ((1.0 - beta) * (x - ft) * xb_g / xb + x1b * xb_g + 2.0 * beta * (x - ft))
    return p, dp


def _positive_root(beta, ft, mt2, g, max_newton=60):
    """Largest positive root of the optimality polynomial, 0 where none exists.

    Safeguarded Newton from an upper bound, with a bisection fallback for
    cells that fail to settle within ``max_newton`` steps.
    """
    n = ft.size
    out = np.zeros(n)
    with np.errstate(over="ignore", invalid="ignore"):
        p_tiny, _ = _poly(beta, np.full(n, _TINY), ft, mt2, g)
    idx = np.flatnonzero(p_tiny < 0)
    if idx.size == 0:
        return out
    ft, mt2, g = ft[idx], mt2[idx], g[idx]
    lo = np.zeros(idx.size)
    hi = np.maximum(ft, 0.0) + g + np.sqrt(mt2)
    # the bound is provable for beta = 1; widen it for the other exponents if needed
    for _ in range(200 if beta != 1.0 else 0):
        p_hi, _ = _poly(beta, hi, ft, mt2, g)
        bad = p_hi < 0
        if not bad.any():
            break
        hi = np.where(bad, 2.0 * hi, hi)
    x = hi.copy()
    act = np.arange(idx.size)
    for _ in range(max_newton):
        if act.size == 0:
            break
        xa, fa, ma, ga = x[act], ft[act], mt2[act], g[act]
        p, dp = _poly(beta, xa, fa, ma, ga)
        neg = p < 0
        lo[act] = np.where(neg, xa, lo[act])
        hi[act] = np.where(neg, hi[act], xa)
        la, ha = lo[act], hi[act]
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - p / dp
        outside = ~((xn > la) & (xn < ha)) | ~np.isfinite(xn)
        xn = np.where(outside, 0.5 * (la + ha), xn)
        done = (p == 0) | (np.abs(xn - xa) <= 4 * _EPS * xn) | (ha - la <= 4 * _EPS * ha)
        xn = np.where(p == 0, xa, xn)
        x[act] = xn
        act = act[~done]
    if act.size:
        # bisection fallback on the maintained bracket
        la, ha, fa, ma, ga = lo[act], hi[act], ft[act], mt2[act], g[act]
        for _ in range(1100):
            mid = 0.5 * (la + ha)
            p, _ = _poly(beta, mid, fa, ma, ga)
            la = np.where(p < 0, mid, la)
            ha = np.where(p < 0, ha, mid)
            if np.all(ha - la <= 4 * _EPS * ha):
                break
        x[act] = 0.5 * (la + ha)
    out[idx] = x
    return out


def prox_cells(m: np.ndarray, f: np.ndarray, gamma, beta: float = 1.0, weight=None):
    """Prox of ``gamma * weight * j_beta`` on a batch of cells.

    ``m`` has shape ``(d, K)``, ``f`` shape ``(K,)``; ``gamma`` and
    ``weight`` are scalars or ``(K,)`` arrays.  Returns ``(m_out, f_out)``.

    For ``beta = 0`` the cost is taken as its lower semicontinuous hull
    ``|m|^2 / 2`` on ``f >= 0``, otherwise the prox would not be attained
    when ``f <= 0``.
    """
    m = np.asarray(m, dtype=float)
    f = np.asarray(f, dtype=float)
    if not (0.0 <= beta <= 1.0):
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(f))):
        raise DomainError("prox input has non-finite entries")
    g = np.broadcast_to(np.asarray(gamma, dtype=float), f.shape)
    if np.any(~(g > 0)):
        raise DomainError("gamma must be positive")
    if weight is not None:
        g = g * np.broadcast_to(np.asarray(weight, dtype=float), f.shape)
    g = np.array(g, dtype=float)
    blocked = ~np.isfinite(g)
    g[blocked] = 1.0
    mt2 = np.sum(m * m, axis=0)
    if beta == 0.0:
        f_out = np.maximum(f, 0.0)
        m_out = m / (1.0 + g)
    else:
        f_out = _positive_root(float(beta), f, mt2, g)
        if beta == 1.0:
            scale = f_out / (f_out + g)
        else:
            fb = f_out**beta
            scale = fb / (fb + g)
        m_out = m * scale
    if blocked.any():
        f_out = np.where(blocked, 0.0, f_out)
        m_out = np.where(blocked, 0.0, m_out)
    return m_out, f_out


def _as_cell(m, f):
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if m.ndim != 1:
        raise DimensionError("momentum must be a d-vector")
    return m.reshape(-1, 1), np.array([float(f)])


def prox_j(m, f, gamma: float):
    """Prox of ``gamma * |m|^2 / (2 f)`` at one point ``(m, f)``.

    Returns ``(m_star, f_star)`` where ``f_star`` is the largest root of
    ``(X - f)(X + gamma)^2 - gamma |m|^2 / 2`` when it is positive, and
    ``(0, 0)`` otherwise.
    """
    mc, fc = _as_cell(m, f)
    mo, fo = prox_cells(mc, fc, gamma)
    return mo[:, 0], float(fo[0])


def prox_j_beta(m, f, gamma: float, beta: float, weight: float = 1.0):
    """Pointwise prox of ``gamma * weight * |m|^2 / (2 f^beta)``; infinite weight gives ``(0, 0)``."""
    mc, fc = _as_cell(m, f)
    if not (0.0 <= beta <= 1.0):
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    mo, fo = prox_cells(mc, fc, gamma, beta=beta, weight=weight)
    return mo[:, 0], float(fo[0])


def prox_J(V: CenteredField, gamma: float, cost: Optional[CostModel] = None) -> CenteredField:
    """Cellwise prox of ``gamma * J`` over a centered field."""
    cost = cost or CostModel()
    dims = V.dims
    d = V.m.shape[0]
    K = V.f.size
    weight = None if cost.is_uniform else cost.weight_grid(dims).reshape(K)
    m, f = prox_cells(V.m.reshape(d, K), V.f.reshape(K), gamma, beta=cost.beta, weight=weight)
    return CenteredField(m.reshape(V.m.shape), f.reshape(V.f.shape))


def prox_J_conjugate(V: CenteredField, sigma: float, cost: Optional[CostModel] = None) -> CenteredField:
    """Prox of ``sigma * J*`` through Moreau's identity."""
    P = prox_J(V / sigma, 1.0 / sigma, cost)
    return V - sigma * P


def project_paraboloid(a, b, gamma: float = 1.0):
    """Orthogonal projection onto ``{(a, b): |a|^2 + 2 b <= 0}``.

    ``a`` has shape ``(d, ...)`` (or ``(d,)``) and ``b`` the trailing shape.
    Evaluated as ``u - prox_{gamma j}(gamma u) / gamma``; any positive
    ``gamma`` gives the same set, by 1-homogeneity of ``j``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a.shape[0]
    shape = b.shape
    af = a.reshape(d, -1)
    bf = b.reshape(-1)
    mo, fo = prox_cells(gamma * af, gamma * bf, gamma)
    return (af - mo / gamma).reshape(a.shape), (bf - fo / gamma).reshape(shape)


# ---------------------------------------------------------------------------
# linear projections


def _coupling_inverse(n_stag: int) -> np.ndarray:
    """Dense inverse of ``Id + I^T I`` for a 1-D averaging operator with ``n_stag`` inputs."""
    A = np.zeros((n_stag - 1, n_stag))
    i = np.arange(n_stag - 1)
    A[i, i] = 0.5
    A[i, i + 1] = 0.5
    return np.linalg.inv(np.eye(n_stag) + A.T @ A)


def _neumann_eigs(n_points: int, scale: float) -> np.ndarray:
    k = np.arange(n_points)
    return scale**2 * (2.0 - 2.0 * np.cos(np.pi * k / n_points))


@dataclass
class ProxScratch:
    """Precomputed factorizations for one grid size.

    Holds the per-axis inverses of ``Id + I* I`` and the eigenvalues of the
    Neumann Laplacian ``D0 D0*`` acting on centered nodes.
    """

    dims: GridDims
    coupling_inverses: list = field(init=False)
    laplacian_eigs: np.ndarray = field(init=False)

    def __post_init__(self):
        dims = self.dims
        self.coupling_inverses = [np.asarray(_coupling_inverse(dims.mbar_shape(a)[a])) for a in range(dims.d)]
        self.coupling_inverses.append(_coupling_inverse(dims.P + 2))
        axes = list(dims.counts) + [dims.P]
        eig = np.zeros(dims.centered_shape)
        for ax, n in enumerate(axes):
            shape = [1] * len(axes)
            shape[ax] = n + 1
            eig = eig + _neumann_eigs(n + 1, n).reshape(shape)
        eig.flat[0] = 1.0
        self.laplacian_eigs = eig

    def check(self, dims: GridDims) -> None:
        if dims != self.dims:
            raise DimensionError(f"scratch was built for grid {self.dims}, got {dims}")


def _apply_along(Minv: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(Minv, x, axes=([1], [axis])), 0, axis)


def project_coupling(U: StaggeredField, V: CenteredField, scratch: ProxScratch):
    """Orthogonal projection of ``(U, V)`` onto ``{(U', V'): V' = I(U')}``."""
    dims = U.dims
    scratch.check(dims)
    V.check(dims)
    R = U + interpolate_adjoint(V)
    mbar = tuple(_apply_along(scratch.coupling_inverses[a], R.mbar[a], a) for a in range(dims.d))
    fbar = _apply_along(scratch.coupling_inverses[-1], R.fbar, R.fbar.ndim - 1)
    Ut = StaggeredField(mbar, fbar)
    return Ut, interpolate(Ut)


def _mass_gap(b0: BoundaryValues, dims: GridDims) -> float:
    gap = float(b0.f1.sum() - b0.f0.sum())
    for a, n in enumerate(dims.counts):
        gap += n / dims.P * float(b0.m_hi[a].sum() - b0.m_lo[a].sum())
    return gap


def _interior_laplacian(rho: np.ndarray, dims: GridDims) -> np.ndarray:
    """``D0 D0* rho``, the divergence of the interior part of ``div*(rho)``."""
    G = divergence_adjoint(rho)
    zero = BoundaryValues(
        tuple(np.zeros_like(np.take(G.mbar[a], 0, axis=a)) for a in range(dims.d)),
        tuple(np.zeros_like(np.take(G.mbar[a], 0, axis=a)) for a in range(dims.d)),
        np.zeros(dims.spatial_shape),
        np.zeros(dims.spatial_shape),
    )
    return divergence(write_boundary(G, zero))


def _solve_poisson_dct(rho: np.ndarray, scratch: ProxScratch) -> np.ndarray:
    c = scipy.fft.dctn(rho, type=2, norm="ortho")
    c /= scratch.laplacian_eigs
    c.flat[0] = 0.0
    return scipy.fft.idctn(c, type=2, norm="ortho")


def _solve_poisson_cg(rho: np.ndarray, dims: GridDims) -> np.ndarray:
    shape = dims.centered_shape
    n = rho.size
    diag = np.zeros(shape)
    for ax, k in enumerate(list(dims.counts) + [dims.P]):
        c = np.full(k + 1, 2.0)
        c[0] = c[-1] = 1.0
        s = [1] * len(shape)
        s[ax] = k + 1
        diag = diag + k**2 * c.reshape(s)
    dflat = diag.ravel()
    A = spla.LinearOperator((n, n), matvec=lambda x: _interior_laplacian(x.reshape(shape), dims).ravel())
    Mpre = spla.LinearOperator((n, n), matvec=lambda x: x / dflat)
    r = rho.ravel() - rho.mean()
    x, info = spla.cg(A, r, rtol=1e-12, atol=0.0, maxiter=20 * n, M=Mpre)
    if info != 0:
        raise NumericalError(f"conjugate gradient did not converge (info={info})")
    return (x - x.mean()).reshape(shape)


def project_constraints(
    U: StaggeredField, b0: BoundaryValues, scratch: ProxScratch, backend: str = "dct"
) -> StaggeredField:
    """Orthogonal projection onto ``{U: div U = 0, b(U) = b0}``.

    The boundary operator selects coordinates, so the joint projection pins
    the boundary slabs to ``b0`` and projects the interior samples onto the
    divergence constraint.  The interior normal operator is a Neumann
    Laplacian on the centered nodes, diagonal in the cosine basis.
    """
    dims = U.dims
    scratch.check(dims)
    check_boundary(b0, dims)
    gap = _mass_gap(b0, dims)
    if abs(gap) > 1e-12 * max(1.0, abs(float(b0.f0.sum()))):
        raise FeasibilityError(f"boundary masses differ by {gap:.3e}; no divergence-free field matches them")
    Uc = write_boundary(U, b0)
    rho = divergence(Uc)
    if backend == "dct":
        phi = _solve_poisson_dct(rho, scratch)
    elif backend == "cg":
        phi = _solve_poisson_cg(rho, dims)
    else:
        raise ValidationError(f"unknown Poisson backend {backend!r}")
    return write_boundary(Uc - divergence_adjoint(phi), b0)
