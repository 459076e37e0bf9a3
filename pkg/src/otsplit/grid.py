"""Space-time grids and the fields that live on them.

Storage conventions
-------------------
Spatial axes come first, time is always the last axis.

* Centered grid: ``N+1`` samples along x (``M+1`` along y in 2-D) and
  ``P+1`` along t.  A :class:`CenteredField` stores the momentum as one
  array of shape ``(d, *spatial, P+1)`` and the density as
  ``(*spatial, P+1)``.
* Staggered grid: momentum component ``a`` has one extra sample along its
  own axis, density has one extra sample along time.  Staggered index
  ``-1`` is storage index ``0``; i.e. storage index = staggered index + 1.

All operations below return new arrays and never modify their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, DimensionError, ValidationError


@dataclass(frozen=True)
class GridDims:
    """Grid sizes: ``N`` (and ``M`` in 2-D) spatial intervals, ``P`` time intervals."""

    N: int
    P: int
    M: Optional[int] = None

    def __post_init__(self):
        for name in ("N", "P", "M"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, (int, np.integer)) or isinstance(v, bool)):
                raise DimensionError(f"{name} must be an integer, got {v!r}")
        if self.N < 2:
            raise DimensionError(f"N must be >= 2, got {self.N}")
        if self.M is not None and self.M < 2:
            raise DimensionError(f"M must be >= 2, got {self.M}")
        if self.P < 1:
            raise DimensionError(f"P must be >= 1, got {self.P}")

    @classmethod
    def from_spatial_shape(cls, shape: Sequence[int], P: int) -> "GridDims":
        """Dims for densities sampled on ``shape`` (sample counts, not intervals)."""
        shape = tuple(int(s) for s in shape)
        if len(shape) == 1:
            return cls(N=shape[0] - 1, P=P)
        if len(shape) == 2:
            return cls(N=shape[0] - 1, P=P, M=shape[1] - 1)
        raise DimensionError(f"only 1-D and 2-D densities are supported, got shape {shape}")

    @property
    def d(self) -> int:
        return 1 if self.M is None else 2

    @property
    def counts(self) -> tuple:
        """Spatial interval counts, which are also the divergence scale factors."""
        return (self.N,) if self.M is None else (self.N, self.M)

    @property
    def spatial_shape(self) -> tuple:
        return tuple(n + 1 for n in self.counts)

    @property
    def centered_shape(self) -> tuple:
        return self.spatial_shape + (self.P + 1,)

    def mbar_shape(self, a: int) -> tuple:
        shape = list(self.centered_shape)
        shape[a] += 1
        return tuple(shape)

    @property
    def fbar_shape(self) -> tuple:
        return self.spatial_shape + (self.P + 2,)

    @property
    def staggered_size(self) -> int:
        return sum(int(np.prod(self.mbar_shape(a))) for a in range(self.d)) + int(
            np.prod(self.fbar_shape)
        )

    @property
    def centered_size(self) -> int:
        return (self.d + 1) * int(np.prod(self.centered_shape))

    def __str__(self):
        return "x".join(str(n) for n in self.counts + (self.P,))


class _VectorOps:
    """Vector-space arithmetic shared by both field types."""

    def _arrays(self):
        raise NotImplementedError

    def _rebuild(self, arrays):
        raise NotImplementedError

    def __add__(self, other):
        return self._rebuild([x + y for x, y in zip(self._arrays(), other._arrays())])

    def __sub__(self, other):
        return self._rebuild([x - y for x, y in zip(self._arrays(), other._arrays())])

    def __mul__(self, c):
        return self._rebuild([c * x for x in self._arrays()])

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self._rebuild([x / c for x in self._arrays()])

    def __neg__(self):
        return self._rebuild([-x for x in self._arrays()])

    def vdot(self, other) -> float:
        """Euclidean inner product over every stored sample."""
        return float(sum(np.vdot(x, y) for x, y in zip(self._arrays(), other._arrays())))

    def norm(self) -> float:
        return float(np.sqrt(sum(np.vdot(x, x) for x in self._arrays())))

    def copy(self):
        return self._rebuild([x.copy() for x in self._arrays()])

    def ravel(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self._arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(x)) for x in self._arrays())

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(x))) for x in self._arrays())


@dataclass(eq=False)
class CenteredField(_VectorOps):
    """Momentum ``m`` (shape ``(d, *spatial, P+1)``) and density ``f`` on the centered grid."""

    m: np.ndarray
    f: np.ndarray

    def _arrays(self):
        return (self.m, self.f)

    def _rebuild(self, arrays):
        return CenteredField(arrays[0], arrays[1])

    @property
    def dims(self) -> GridDims:
        return GridDims.from_spatial_shape(self.f.shape[:-1], self.f.shape[-1] - 1)

    def check(self, dims: GridDims) -> None:
        if self.f.shape != dims.centered_shape or self.m.shape != (dims.d,) + dims.centered_shape:
            raise DimensionError(
                f"centered field shapes m{self.m.shape}, f{self.f.shape} do not match grid {dims}"
            )

    @classmethod
    def zeros(cls, dims: GridDims) -> "CenteredField":
        return cls(np.zeros((dims.d,) + dims.centered_shape), np.zeros(dims.centered_shape))

    @classmethod
    def from_vector(cls, x: np.ndarray, dims: GridDims) -> "CenteredField":
        n = int(np.prod(dims.centered_shape))
        return cls(
            x[: dims.d * n].reshape((dims.d,) + dims.centered_shape).copy(),
            x[dims.d * n :].reshape(dims.centered_shape).copy(),
        )


@dataclass(eq=False)
class StaggeredField(_VectorOps):
    """Momentum components ``mbar[a]`` and density ``fbar`` on the staggered grids."""

    mbar: tuple
    fbar: np.ndarray

    def __post_init__(self):
        self.mbar = tuple(self.mbar)

    def _arrays(self):
        return self.mbar + (self.fbar,)

    def _rebuild(self, arrays):
        return StaggeredField(tuple(arrays[:-1]), arrays[-1])

    @property
    def dims(self) -> GridDims:
        spatial = self.fbar.shape[:-1]
        return GridDims.from_spatial_shape(spatial, self.fbar.shape[-1] - 2)

    def check(self, dims: GridDims) -> None:
        ok = len(self.mbar) == dims.d and self.fbar.shape == dims.fbar_shape
        ok = ok and all(self.mbar[a].shape == dims.mbar_shape(a) for a in range(dims.d))
        if not ok:
            shapes = [x.shape for x in self.mbar]
            raise DimensionError(
                f"staggered field shapes mbar{shapes}, fbar{self.fbar.shape} do not match grid {dims}"
            )

    @classmethod
    def zeros(cls, dims: GridDims) -> "StaggeredField":
        return cls(
            tuple(np.zeros(dims.mbar_shape(a)) for a in range(dims.d)),
            np.zeros(dims.fbar_shape),
        )

    @classmethod
    def from_vector(cls, x: np.ndarray, dims: GridDims) -> "StaggeredField":
        parts, start = [], 0
        for shape in [dims.mbar_shape(a) for a in range(dims.d)] + [dims.fbar_shape]:
            n = int(np.prod(shape))
            parts.append(x[start : start + n].reshape(shape).copy())
            start += n
        return cls(tuple(parts[:-1]), parts[-1])


@dataclass(eq=False)
class BoundaryValues:
    """Boundary slabs of a staggered field.

    ``m_lo[a]`` / ``m_hi[a]`` are the momentum component ``a`` samples at
    staggered indices ``-1`` and ``N_a`` along axis ``a`` (a grid over the
    remaining axes, time included).  ``f0`` / ``f1`` are the density samples
    at staggered time indices ``-1`` and ``P``.
    """

    m_lo: tuple
    m_hi: tuple
    f0: np.ndarray
    f1: np.ndarray

    def __post_init__(self):
        self.m_lo = tuple(self.m_lo)
        self.m_hi = tuple(self.m_hi)

    def _arrays(self):
        return self.m_lo + self.m_hi + (self.f0, self.f1)

    def equals(self, other: "BoundaryValues") -> bool:
        """Bitwise equality of every slab."""
        a, b = self._arrays(), other._arrays()
        return len(a) == len(b) and all(
            x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b)
        )

    def max_abs_diff(self, other: "BoundaryValues") -> float:
        return max(float(np.max(np.abs(x - y))) for x, y in zip(self._arrays(), other._arrays()))


def _slab(x: np.ndarray, axis: int, index: int) -> np.ndarray:
    return np.take(x, index, axis=axis).copy()


def extract_boundary(U: StaggeredField, dims: Optional[GridDims] = None) -> BoundaryValues:
    """Read the boundary slabs ``b(U)``.

    Component ``a`` of the momentum is read only on the two faces normal to
    axis ``a``, which is how zero-flux walls are expressed on a staggered grid.
    """
    dims = dims or U.dims
    U.check(dims)
    m_lo = tuple(_slab(U.mbar[a], a, 0) for a in range(dims.d))
    m_hi = tuple(_slab(U.mbar[a], a, -1) for a in range(dims.d))
    return BoundaryValues(m_lo, m_hi, _slab(U.fbar, -1, 0), _slab(U.fbar, -1, -1))


def write_boundary(U: StaggeredField, b: BoundaryValues) -> StaggeredField:
    """Return a copy of ``U`` whose boundary slabs are overwritten by ``b``."""
    dims = U.dims
    check_boundary(b, dims)
    out = U.copy()
    for a in range(dims.d):
        lo = [slice(None)] * out.mbar[a].ndim
        hi = list(lo)
        lo[a], hi[a] = 0, -1
        out.mbar[a][tuple(lo)] = b.m_lo[a]
        out.mbar[a][tuple(hi)] = b.m_hi[a]
    out.fbar[..., 0] = b.f0
    out.fbar[..., -1] = b.f1
    return out


def check_boundary(b: BoundaryValues, dims: GridDims) -> None:
    ok = len(b.m_lo) == dims.d == len(b.m_hi)
    ok = ok and b.f0.shape == dims.spatial_shape == b.f1.shape
    for a in range(dims.d):
        if not ok:
            break
        expected = tuple(s for k, s in enumerate(dims.mbar_shape(a)) if k != a)
        ok = b.m_lo[a].shape == expected == b.m_hi[a].shape
    if not ok:
        raise DimensionError(f"boundary values do not conform to grid {dims}")


def assemble_boundary_target(f0, f1, P: int) -> BoundaryValues:
    """The target ``b0 = (0, 0, f0, f1)`` for ``P`` time intervals."""
    f0 = np.asarray(f0, dtype=float)
    f1 = np.asarray(f1, dtype=float)
    if f0.shape != f1.shape:
        raise DimensionError(f"f0 shape {f0.shape} differs from f1 shape {f1.shape}")
    for name, f in (("f0", f0), ("f1", f1)):
        if not np.all(np.isfinite(f)):
            raise ValidationError(f"{name} has non-finite entries")
        if np.any(f < 0):
            raise ValidationError(f"{name} has negative entries (min {f.min():g})")
    dims = GridDims.from_spatial_shape(f0.shape, P)
    m_lo, m_hi = [], []
    for a in range(dims.d):
        shape = tuple(s for k, s in enumerate(dims.mbar_shape(a)) if k != a)
        m_lo.append(np.zeros(shape))
        m_hi.append(np.zeros(shape))
    return BoundaryValues(tuple(m_lo), tuple(m_hi), f0.copy(), f1.copy())


class NormalizedPair(NamedTuple):
    f0: np.ndarray
    f1: np.ndarray
    mass0: float
    mass1: float


def _is_unit_sum(total: float, n: int) -> bool:
    # pairwise summation error bound, so that normalization is idempotent
    return abs(total - 1.0) <= 4 * np.finfo(float).eps * max(1.0, np.log2(max(n, 2)))


def validate_and_normalize(f0, f1, floor: float = 0.0, normalize: bool = True) -> NormalizedPair:
    """Check two densities and rescale them to unit mass.

    ``floor`` is added to every sample before renormalization.  With
    ``normalize=False`` the masses are left alone but must agree to 1e-12,
    otherwise no transport plan between them exists.
    """
    f0 = np.asarray(f0, dtype=float)
    f1 = np.asarray(f1, dtype=float)
    if f0.shape != f1.shape:
        raise DimensionError(f"f0 shape {f0.shape} differs from f1 shape {f1.shape}")
    if floor < 0 or not np.isfinite(floor):
        raise ValidationError(f"floor must be a nonnegative real, got {floor}")
    masses = []
    out = []
    for name, f in (("f0", f0), ("f1", f1)):
        if not np.all(np.isfinite(f)):
            raise ValidationError(f"{name} has non-finite entries")
        if np.any(f < 0):
            raise ValidationError(f"{name} has negative entries (min {f.min():g})")
        total = float(f.sum())
        masses.append(total)
        g = f + floor if floor > 0 else f.copy()
        gsum = float(g.sum())
        if gsum <= 0:
            raise DegenerateInputError(f"{name} is identically zero")
        if normalize and not _is_unit_sum(gsum, g.size):
            g = g / gsum
        out.append(g)
    if not normalize:
        s0, s1 = float(out[0].sum()), float(out[1].sum())
        if abs(s0 - s1) > 1e-12 * max(1.0, abs(s0)):
            raise ValidationError(
                f"unequal masses {s0!r} and {s1!r}; the continuity constraint is infeasible"
            )
    return NormalizedPair(out[0], out[1], masses[0], masses[1])


def mass_per_slice(f: np.ndarray) -> np.ndarray:
    """Total mass of each time slice of a ``(*spatial, T)`` density stack."""
    f = np.asarray(f, dtype=float)
    return f.reshape(-1, f.shape[-1]).sum(axis=0)


def linear_initialization(b0: BoundaryValues, P: int) -> StaggeredField:
    """Zero momentum and a density that is linear in time between ``f0`` and ``f1``.

    Staggered time index ``j`` in ``-1..P`` gets weight ``(j+1)/(P+1)`` on
    ``f1``, so both end slabs match ``b0`` exactly.
    """
    dims = GridDims.from_spatial_shape(b0.f0.shape, P)
    U = StaggeredField.zeros(dims)
    s = np.arange(P + 2) / (P + 1)
    U.fbar[...] = b0.f0[..., None] * (1.0 - s) + b0.f1[..., None] * s
    U.fbar[..., 0] = b0.f0
    U.fbar[..., -1] = b0.f1
    return write_boundary(U, b0)
