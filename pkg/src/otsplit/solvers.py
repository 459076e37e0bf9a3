"""Iterative schemes for the discrete dynamic transport problem.

Douglas-Rachford (four splittings) and primal-dual iterations work on the
staggered grid.  A second Douglas-Rachford scheme works on a centered grid
with the continuity equation written directly on the nodes, and an ADMM
stepper on its dual is provided to check the correspondence between the two.

Douglas-Rachford iterations follow

    x  = prox_{g G1}(2 z - w)
    w <- w + alpha (x - z)
    z <- prox_{g G2}(w)

and the point ``x`` (not ``z``) is the one carrying the properties of ``G1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cost import telemetry_energy
from .errors import (
    ConfigurationError,
    DimensionError,
    DivergenceError,
    FeasibilityError,
    NumericalError,
    ValidationError,
)
from .grid import (
    BoundaryValues,
    CenteredField,
    GridDims,
    StaggeredField,
    assemble_boundary_target,
    check_boundary,
    extract_boundary,
    linear_initialization,
)
from .operators import (
    divergence,
    estimate_op_norm,
    interpolate,
    interpolate_adjoint,
    linear_map,
)
from .prox import (
    CostModel,
    ProxScratch,
    prox_J,
    prox_J_conjugate,
    project_constraints,
    project_coupling,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("A-DR", "A-DR'", "S-DR", "S-DR'", "PD", "CENTERED-DR")
DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class SolverConfig:
    """Algorithm tag, step parameters, budget and telemetry cadence.

    ``tau=None`` selects ``0.99 / (sigma |I|^2)``.  The defaults were tuned
    for the two-Gaussian test case and are not universally optimal.
    """

    algorithm: str = "PD"
    gamma: float = 1.0 / 75.0
    alpha: float = 1.998
    sigma: float = 85.0
    tau: Optional[float] = None
    theta: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-8
    log_every: int = 10

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if not (0.0 < self.alpha < 2.0):
            raise ConfigurationError(f"alpha must lie in (0, 2), got {self.alpha}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if self.tau is not None and not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if not (0.0 <= self.theta <= 1.0):
            raise ConfigurationError(f"theta must lie in [0, 1], got {self.theta}")
        if self.max_iter < 0:
            raise ConfigurationError("the iteration budget must be nonnegative")
        if not (self.tol >= 0):
            raise ConfigurationError("the tolerance must be nonnegative")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be at least 1")

    @property
    def is_dr(self) -> bool:
        return self.algorithm in ("A-DR", "A-DR'", "S-DR", "S-DR'")


@lru_cache(maxsize=32)
def interpolation_norm(dims: GridDims) -> float:
    """Power-iteration estimate of the norm of the interpolation operator on ``dims``."""
    return estimate_op_norm(linear_map("interpolation", dims), tol=1e-12, max_iter=200000)


def pd_steps(config: SolverConfig, dims: GridDims) -> Tuple[float, float]:
    """Resolved ``(sigma, tau)``; rejects products violating ``sigma tau |I|^2 < 1``."""
    L2 = interpolation_norm(dims) ** 2
    sigma = config.sigma
    tau = config.tau if config.tau is not None else 0.99 / (sigma * L2)
    if sigma * tau * L2 >= 1.0:
        raise ConfigurationError(
            f"sigma * tau * |I|^2 = {sigma * tau * L2:.6g} must be < 1 for the primal-dual scheme"
        )
    return sigma, tau


@dataclass
class Problem:
    """Boundary data, cost model and cached factorizations for one grid."""

    b0: BoundaryValues
    dims: GridDims
    cost: CostModel = field(default_factory=CostModel)
    poisson_backend: str = "dct"
    scratch: ProxScratch = field(init=False)

    def __post_init__(self):
        check_boundary(self.b0, self.dims)
        if self.cost.weights is not None:
            self.cost.weight_grid(self.dims)
            blocked = self.cost.obstacle_mask(self.dims)
            for name, f, t in (("f0", self.b0.f0, 0), ("f1", self.b0.f1, -1)):
                if np.any(f[blocked[..., t]] > 0):
                    raise ValidationError(f"{name} puts mass on obstacle nodes")
        m0, m1 = float(self.b0.f0.sum()), float(self.b0.f1.sum())
        if abs(m0 - m1) > 1e-12 * max(1.0, abs(m0)):
            raise FeasibilityError(f"boundary masses differ: {m0!r} vs {m1!r}")
        self.scratch = ProxScratch(self.dims)

    @classmethod
    def from_densities(cls, f0, f1, P: int, cost: Optional[CostModel] = None, **kw) -> "Problem":
        b0 = assemble_boundary_target(f0, f1, P)
        dims = GridDims.from_spatial_shape(np.shape(f0), P)
        return cls(b0, dims, cost or CostModel(), **kw)

    def project_C(self, U: StaggeredField) -> StaggeredField:
        return project_constraints(U, self.b0, self.scratch, backend=self.poisson_backend)


@dataclass
class ConvergenceRecord:
    """Telemetry of logged iterations.  ``delta_f`` is the relative change of the density."""

    iters: List[int] = field(default_factory=list)
    J: List[float] = field(default_factory=list)
    min_f: List[float] = field(default_factory=list)
    div_residual: List[float] = field(default_factory=list)
    boundary_residual: List[float] = field(default_factory=list)
    delta_f: List[float] = field(default_factory=list)
    infeasible: List[int] = field(default_factory=list)
    converged: bool = False

    COLUMNS = ("iter", "J", "min_f", "div_residual", "boundary_residual", "delta_f")

    def __len__(self):
        return len(self.iters)

    def append(self, it, J, min_f, div_res, bnd_res, delta, infeasible=0):
        if self.iters and it <= self.iters[-1]:
            raise ValueError("iteration indices must increase")
        self.iters.append(int(it))
        self.J.append(float(J))
        self.min_f.append(float(min_f))
        self.div_residual.append(float(div_res))
        self.boundary_residual.append(float(bnd_res))
        self.delta_f.append(float(delta))
        self.infeasible.append(int(infeasible))

    def rows(self):
        return list(
            zip(self.iters, self.J, self.min_f, self.div_residual, self.boundary_residual, self.delta_f)
        )


@dataclass
class SolverState:
    """Iterates of one scheme.

    DR schemes use ``z``, ``w`` (tuples of fields) and ``x``, the last
    ``G1`` prox point.  PD uses ``U``, ``Upsilon`` and ``V``.
    """

    iteration: int = 0
    z: tuple = ()
    w: tuple = ()
    x: tuple = ()
    U: Optional[StaggeredField] = None
    Upsilon: Optional[StaggeredField] = None
    V: Optional[CenteredField] = None


# ---------------------------------------------------------------------------
# tuple arithmetic


def _comb(a: tuple, ca: float, b: tuple, cb: float) -> tuple:
    return tuple(ca * x + cb * y for x, y in zip(a, b))


def _add(a: tuple, b: tuple) -> tuple:
    return tuple(x + y for x, y in zip(a, b))


def _sub(a: tuple, b: tuple) -> tuple:
    return tuple(x - y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# proximal maps of the splitting functions


def _prox_cost_constraint(pair: tuple, gamma: float, problem: Problem) -> tuple:
    U, V = pair
    return problem.project_C(U), prox_J(V, gamma, problem.cost)


def _prox_coupling(pair: tuple, problem: Problem) -> tuple:
    return project_coupling(pair[0], pair[1], problem.scratch)


def _prox_diagonal(quad: tuple) -> tuple:
    U, V, Ut, Vt = quad
    a = (U + Ut) / 2
    b = (V + Vt) / 2
    return a, b, a.copy(), b.copy()


def _prox_separable(quad: tuple, gamma: float, problem: Problem) -> tuple:
    return _prox_cost_constraint(quad[:2], gamma, problem) + _prox_coupling(quad[2:], problem)


def _splitting(algorithm: str, gamma: float, problem: Problem):
    if algorithm == "A-DR":
        return (lambda v: _prox_cost_constraint(v, gamma, problem), lambda v: _prox_coupling(v, problem))
    if algorithm == "A-DR'":
        return (lambda v: _prox_coupling(v, problem), lambda v: _prox_cost_constraint(v, gamma, problem))
    if algorithm == "S-DR":
        return (lambda v: _prox_separable(v, gamma, problem), _prox_diagonal)
    if algorithm == "S-DR'":
        return (_prox_diagonal, lambda v: _prox_separable(v, gamma, problem))
    raise ConfigurationError(f"{algorithm} is not a Douglas-Rachford splitting")


def _check_tuple(fields: tuple, dims: GridDims, n: int) -> None:
    if len(fields) != n:
        raise DimensionError(f"expected {n} variables, got {len(fields)}")
    for v in fields:
        v.check(dims)


def init_state(config: SolverConfig, problem: Problem) -> SolverState:
    """Zero momentum, density linear in time; DR uses ``w = z``, PD a zero dual variable."""
    U0 = linear_initialization(problem.b0, problem.dims.P)
    if config.algorithm == "PD":
        return SolverState(U=U0, Upsilon=U0.copy(), V=CenteredField.zeros(problem.dims))
    if config.algorithm == "CENTERED-DR":
        raise ConfigurationError("the centered scheme keeps its own state; use centered_solve")
    z = (U0, interpolate(U0))
    if config.algorithm in ("S-DR", "S-DR'"):
        z = z + (U0.copy(), interpolate(U0))
    w = tuple(v.copy() for v in z)
    return SolverState(z=z, w=w, x=tuple(v.copy() for v in z))


def dr_step(state: SolverState, config: SolverConfig, problem: Problem) -> SolverState:
    """One Douglas-Rachford iteration for the splitting named by ``config.algorithm``."""
    n = 4 if config.algorithm in ("S-DR", "S-DR'") else 2
    _check_tuple(state.z, problem.dims, n)
    _check_tuple(state.w, problem.dims, n)
    prox1, prox2 = _splitting(config.algorithm, config.gamma, problem)
    x = prox1(_comb(state.z, 2.0, state.w, -1.0))
    w = _add(state.w, tuple(config.alpha * d for d in _sub(x, state.z)))
    z = prox2(w)
    return SolverState(iteration=state.iteration + 1, z=z, w=w, x=x)


def pd_step(state: SolverState, config: SolverConfig, problem: Problem) -> SolverState:
    """One relaxed Arrow-Hurwicz (primal-dual) iteration."""
    sigma, tau = pd_steps(config, problem.dims)
    U, Y, V = state.U, state.Upsilon, state.V
    for v in (U, Y, V):
        v.check(problem.dims)
    V_new = prox_J_conjugate(V + sigma * interpolate(Y), sigma, problem.cost)
    U_new = problem.project_C(U - tau * interpolate_adjoint(V_new))
    Y_new = U_new + config.theta * (U_new - U)
    return SolverState(iteration=state.iteration + 1, U=U_new, Upsilon=Y_new, V=V_new)


def primal_iterate(state: SolverState, config: SolverConfig) -> StaggeredField:
    """The staggered iterate satisfying the continuity constraint."""
    if config.algorithm == "PD":
        return state.U
    if config.algorithm in ("A-DR", "S-DR"):
        return state.x[0]
    return state.z[0]


# ---------------------------------------------------------------------------
# centered-grid formulation


class CenteredConstraint:
    """Continuity equation written on the centered nodes, plus boundary rows.

    At node ``(i, j)`` with ``j >= 1`` the row is

        P (f[i, j] - f[i, j-1]) + sum_a N_a (mt_a[i] - mt_a[i - e_a]),

    where ``mt_a`` is the time average of ``m_a`` over ``j-1, j`` and the
    ghost value at index ``-1`` is zero (the lower wall).  The upper wall is a
    boundary row pinning ``m_a = 0`` at index ``N_a``; the density is pinned
    at both time ends.  Summing all divergence rows gives the mass balance,
    which the boundary rows already imply, so the last divergence row is
    dropped and the remaining system has full row rank.
    """

    def __init__(self, b0: BoundaryValues, dims: GridDims):
        check_boundary(b0, dims)
        self.dims = dims
        d, P = dims.d, dims.P
        shape = dims.centered_shape
        nn = int(np.prod(shape))
        self.n = (d + 1) * nn
        m_idx = np.arange(d * nn).reshape((d,) + shape)
        f_idx = d * nn + np.arange(nn).reshape(shape)

        node = np.arange(nn).reshape(shape)[..., 1:]
        rows, cols, vals = [], [], []

        def put(r, c, v):
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(np.broadcast_to(v, r.shape).ravel())

        rnode = np.broadcast_to(np.arange(node.size).reshape(node.shape), node.shape)
        put(rnode, f_idx[..., 1:], float(P))
        put(rnode, f_idx[..., :-1], -float(P))
        for a, na in enumerate(dims.counts):
            put(rnode, m_idx[a][..., 1:], 0.5 * na)
            put(rnode, m_idx[a][..., :-1], 0.5 * na)
            lo = [slice(None)] * (d + 1)
            hi = list(lo)
            lo[a] = slice(1, None)
            hi[a] = slice(None, -1)
            r = rnode[tuple(lo)]
            put(r, m_idx[a][..., 1:][tuple(hi)], -0.5 * na)
            put(r, m_idx[a][..., :-1][tuple(hi)], -0.5 * na)
        n_div = node.size
        D = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_div, self.n)
        )
        self.D = D

        brows, targets = [], []
        for a in range(d):
            pin = np.take(m_idx[a], -1, axis=a).ravel()
            brows.append(pin)
            targets.append(np.zeros(pin.size))
        brows.append(f_idx[..., 0].ravel())
        targets.append(np.asarray(b0.f0, dtype=float).ravel())
        brows.append(f_idx[..., -1].ravel())
        targets.append(np.asarray(b0.f1, dtype=float).ravel())
        bidx = np.concatenate(brows)
        Bm = sp.csr_matrix((np.ones(bidx.size), (np.arange(bidx.size), bidx)), shape=(bidx.size, self.n))
        self.A = sp.vstack([D[:-1], Bm]).tocsc()
        self.y = np.concatenate([np.zeros(n_div - 1)] + targets)
        try:
            self._lu = spla.splu((self.A @ self.A.T).tocsc())
        except RuntimeError as exc:  # exactly singular factor
            raise NumericalError(f"the centered constraint system is singular: {exc}") from exc

    def normal_solve(self, r: np.ndarray) -> np.ndarray:
        out = self._lu.solve(r)
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite solution of the centered normal equations")
        return out

    def project(self, x: np.ndarray, rhs: Optional[np.ndarray] = None) -> np.ndarray:
        """Orthogonal projection of ``x`` onto ``{A v = rhs}`` (``rhs`` defaults to ``y``)."""
        rhs = self.y if rhs is None else rhs
        return x - self.A.T @ self.normal_solve(self.A @ x - rhs)

    def residuals(self, x: np.ndarray) -> Tuple[float, float]:
        """Max-norm residual of every divergence row and of the boundary rows."""
        nd = self.D.shape[0]
        div = float(np.max(np.abs(self.D @ x))) if nd else 0.0
        r = self.A @ x - self.y
        bnd = float(np.max(np.abs(r[nd - 1 :]))) if r.size > nd - 1 else 0.0
        return div, bnd


def centered_problem_matrix(problem: Problem) -> CenteredConstraint:
    return CenteredConstraint(problem.b0, problem.dims)


def _centered_init(problem: Problem) -> np.ndarray:
    """Centered field with zero momentum and density linear in time."""
    dims = problem.dims
    s = np.arange(dims.P + 1) / dims.P
    f = problem.b0.f0[..., None] * (1.0 - s) + problem.b0.f1[..., None] * s
    return CenteredField(np.zeros((dims.d,) + dims.centered_shape), f).ravel()


@dataclass
class CenteredState:
    iteration: int
    z: np.ndarray
    w: np.ndarray
    x: np.ndarray


def centered_dr_step(
    state: CenteredState, config: SolverConfig, problem: Problem, system: CenteredConstraint
) -> CenteredState:
    """DR with ``G1`` the affine constraint and ``G2 = J`` on the centered grid."""
    dims = problem.dims
    if state.z.shape != (system.n,) or state.w.shape != (system.n,):
        raise DimensionError("centered state does not match the grid")
    x = system.project(2.0 * state.z - state.w)
    w = state.w + config.alpha * (x - state.z)
    z = prox_J(CenteredField.from_vector(w, dims), config.gamma, problem.cost).ravel()
    return CenteredState(state.iteration + 1, z, w, x)


@dataclass
class ADMMState:
    """Dual ADMM iterates: ``s`` (multiplier of the constraint rows), ``q`` and ``u``."""

    iteration: int
    s: np.ndarray
    q: np.ndarray
    u: np.ndarray


def admm_init(z0: np.ndarray, w0: np.ndarray, gamma: float, system: CenteredConstraint) -> ADMMState:
    """ADMM start matching a DR start ``(z0, w0)``: ``u = z0/g``, ``q = (w0 - z0)/g``."""
    return ADMMState(0, np.zeros(system.A.shape[0]), (w0 - z0) / gamma, z0 / gamma)


def admm_dual_step(
    state: ADMMState, config: SolverConfig, problem: Problem, system: CenteredConstraint
) -> ADMMState:
    """One ADMM iteration on the dual of the centered problem.

    With ``B = -A^T`` and the linear term ``<y, s>``, the ``s`` update is the
    prox in the metric of ``B``, evaluated as
    ``B^+(c - P(g c) / g)`` where ``P`` projects onto ``{A v = -y}``.  The
    ``q`` update is the prox of ``J*/g`` by Moreau's identity.
    """
    g = config.gamma
    dims = problem.dims
    c = state.q - state.u
    r = c - system.project(g * c, rhs=-system.y) / g
    s = -system.normal_solve(system.A @ r)
    Bs = -(system.A.T @ s)
    v = Bs + state.u
    pv = prox_J(CenteredField.from_vector(g * v, dims), g, problem.cost).ravel()
    q = v - pv / g
    u = state.u + Bs - q
    return ADMMState(state.iteration + 1, s, q, u)


# ---------------------------------------------------------------------------
# drivers


def _governing(state: SolverState, config: SolverConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Density part and full vector of the sequence that drives the scheme.

    For DR this is ``(w, z)``: a step can leave ``w`` unchanged while ``z``
    still moves (the primed splittings start with ``z != prox(w)``), so
    ``w`` alone would stop too early.  For PD it is the pair ``(U, V)``.
    """
    if config.algorithm == "PD":
        return state.U.fbar, np.concatenate([state.U.ravel(), state.V.ravel()])
    return state.w[0].fbar, np.concatenate([v.ravel() for v in state.w + state.z])


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    den = float(np.linalg.norm(new))
    num = float(np.linalg.norm(new - old))
    return num / den if den > 0 else num


def _check_divergence(it: int, record: ConvergenceRecord, norm: float, others=()) -> None:
    """Raise on a non-finite telemetry value or an iterate norm above the limit.

    A large but finite objective is not taken as divergence: cells with a
    tiny positive density make it huge on healthy early iterates.
    """
    for name, v in others:
        if not math.isfinite(v):
            raise DivergenceError(f"{name} = {v!r} at iteration {it}; the iteration diverged", record=record)
    if not (math.isfinite(norm) and norm <= DIVERGENCE_LIMIT):
        raise DivergenceError(
            f"iterate norm {norm!r} exceeds {DIVERGENCE_LIMIT:g} at iteration {it}; the iteration diverged",
            record=record,
        )


def _telemetry_staggered(U: StaggeredField, problem: Problem):
    V = interpolate(U)
    te = telemetry_energy(V, problem.cost)
    div = float(np.max(np.abs(divergence(U))))
    bnd = extract_boundary(U, problem.dims).max_abs_diff(problem.b0)
    return te, float(U.fbar.min()), div, bnd


def solve(problem: Problem, config: SolverConfig):
    """Run the configured scheme; returns ``(U, V, record)``.

    ``U`` is the staggered iterate satisfying the constraints and
    ``V = I(U)``.  For the centered scheme ``U`` is ``None`` and ``V`` is the
    constrained centered iterate.  Stops when the relative change of the
    driving iterate drops below ``config.tol`` or the budget is spent; the
    record logs the relative change of its density part.
    """
    if config.algorithm == "CENTERED-DR":
        V, record = centered_solve(config, problem)
        return None, V, record
    if config.algorithm == "PD":
        pd_steps(config, problem.dims)
        step = pd_step
    else:
        step = dr_step
    state = init_state(config, problem)
    record = ConvergenceRecord()
    prev_f, prev_all = _governing(state, config)
    for it in range(1, config.max_iter + 1):
        state = step(state, config, problem)
        U = primal_iterate(state, config)
        cur_f, cur_all = _governing(state, config)
        delta = _relative_change(cur_f, prev_f)
        stop = _relative_change(cur_all, prev_all) < config.tol
        prev_f, prev_all = cur_f, cur_all
        norm = max(s.max_abs() for s in ((state.U, state.V) if config.algorithm == "PD" else state.w))
        if it % config.log_every == 0 or stop or it == config.max_iter:
            te, min_f, div, bnd = _telemetry_staggered(U, problem)
            record.append(it, te.value, min_f, div, bnd, delta, te.penalized)
            _check_divergence(it, record, norm, [("objective", te.regular), ("change", delta)])
        else:
            _check_divergence(it, record, norm)
        if stop:
            record.converged = True
            logger.info("%s converged after %d iterations", config.algorithm, it)
            break
    U = primal_iterate(state, config)
    return U, interpolate(U), record


def centered_solve(config: SolverConfig, problem: Problem, system: Optional[CenteredConstraint] = None):
    """DR on the centered formulation; returns the constrained centered iterate and the record."""
    dims = problem.dims
    system = system or CenteredConstraint(problem.b0, dims)
    z0 = _centered_init(problem)
    state = CenteredState(0, z0, z0.copy(), z0.copy())
    record = ConvergenceRecord()
    nn = int(np.prod(dims.centered_shape))
    prev = state.w[dims.d * nn :]
    prev_all = state.w
    for it in range(1, config.max_iter + 1):
        state = centered_dr_step(state, config, problem, system)
        f = state.x[dims.d * nn :]
        delta = _relative_change(state.w[dims.d * nn :], prev)
        stop = _relative_change(state.w, prev_all) < config.tol
        prev, prev_all = state.w[dims.d * nn :], state.w
        norm = float(np.max(np.abs(state.w)))
        if it % config.log_every == 0 or stop or it == config.max_iter:
            V = CenteredField.from_vector(state.x, dims)
            te = telemetry_energy(V, problem.cost)
            div, bnd = system.residuals(state.x)
            record.append(it, te.value, float(f.min()), div, bnd, delta, te.penalized)
            _check_divergence(it, record, norm, [("objective", te.regular), ("change", delta)])
        else:
            _check_divergence(it, record, norm)
        if stop:
            record.converged = True
            break
    return CenteredField.from_vector(state.x, dims), record
