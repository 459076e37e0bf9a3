import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otsplit.errors import DegenerateInputError, DimensionError, ValidationError
from otsplit.grid import (
    BoundaryValues,
    CenteredField,
    GridDims,
    StaggeredField,
    assemble_boundary_target,
    extract_boundary,
    linear_initialization,
    mass_per_slice,
    validate_and_normalize,
    write_boundary,
)
from otsplit.operators import divergence, interpolate
from otsplit.prox import ProxScratch, project_constraints

from conftest import DIMS_SMALL, random_staggered, random_target


class TestGridDims:
    def test_shapes_2d(self):
        g = GridDims(N=4, M=3, P=5)
        assert g.d == 2
        assert g.centered_shape == (5, 4, 6)
        assert g.mbar_shape(0) == (6, 4, 6)
        assert g.mbar_shape(1) == (5, 5, 6)
        assert g.fbar_shape == (5, 4, 7)
        assert str(g) == "4x3x5"

    def test_shapes_1d(self):
        g = GridDims(N=4, P=2)
        assert g.d == 1 and g.spatial_shape == (5,)
        assert g.staggered_size == 6 * 3 + 5 * 4
        assert g.centered_size == 2 * 15

    @pytest.mark.parametrize("kw", [dict(N=1, P=3), dict(N=3, P=0), dict(N=3, P=3, M=1), dict(N=2.5, P=3)])
    def test_rejects_bad_counts(self, kw):
        with pytest.raises(DimensionError):
            GridDims(**kw)

    def test_from_spatial_shape(self):
        assert GridDims.from_spatial_shape((9, 5), 4) == GridDims(N=8, M=4, P=4)
        with pytest.raises(DimensionError):
            GridDims.from_spatial_shape((3, 3, 3), 2)


class TestBoundary:
    def test_zero_field(self):
        dims = GridDims(N=3, M=4, P=2)
        b = extract_boundary(StaggeredField.zeros(dims))
        assert all(np.all(x == 0) for x in b._arrays())

    def test_direct_index_read(self):
        dims = GridDims(N=2, P=1)
        U = StaggeredField.zeros(dims)
        U.mbar[0][...] = (np.arange(-1, 3) + 2)[:, None]
        b = extract_boundary(U)
        np.testing.assert_array_equal(b.m_lo[0], [1, 1])
        np.testing.assert_array_equal(b.m_hi[0], [4, 4])

    @pytest.mark.parametrize("dims", DIMS_SMALL, ids=str)
    def test_write_then_read(self, dims, rng):
        U = random_staggered(dims, rng)
        b = extract_boundary(random_staggered(dims, rng))
        assert extract_boundary(write_boundary(U, b)).equals(b)

    def test_write_does_not_mutate(self, rng):
        dims = GridDims(N=3, P=3)
        U = random_staggered(dims, rng)
        before = U.ravel().copy()
        write_boundary(U, random_target(dims, rng))
        np.testing.assert_array_equal(U.ravel(), before)

    def test_shape_mismatch(self, rng):
        U = random_staggered(GridDims(N=3, P=3), rng)
        with pytest.raises(DimensionError):
            extract_boundary(U, GridDims(N=4, P=3))
        with pytest.raises(DimensionError):
            write_boundary(U, random_target(GridDims(N=4, P=3), rng))

    def test_two_dim_components_on_own_faces(self):
        dims = GridDims(N=3, M=2, P=1)
        b = extract_boundary(StaggeredField.zeros(dims))
        assert b.m_lo[0].shape == (3, 2)  # over y and t
        assert b.m_lo[1].shape == (4, 2)  # over x and t


class TestTarget:
    def test_uniform(self):
        f = np.full((4, 4), 1 / 16)
        b = assemble_boundary_target(f, f, 3)
        assert all(np.all(x == 0) for x in b.m_lo + b.m_hi)
        np.testing.assert_array_equal(b.f0, f)
        np.testing.assert_array_equal(b.f1, f)

    def test_negative_pixel(self):
        f = np.ones((3, 3))
        g = f.copy()
        g[1, 1] = -1e-9
        with pytest.raises(ValidationError):
            assemble_boundary_target(g, f, 2)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            assemble_boundary_target(np.ones(4), np.ones(5), 2)


class TestNormalize:
    def test_scaling(self):
        f0 = np.full(5, 1.0)
        r = validate_and_normalize(f0, f0.copy())
        assert r.f0.sum() == pytest.approx(1.0, abs=1e-15)
        assert r.mass0 == 5.0

    def test_floor(self):
        f0 = np.array([0.0, 1.0, 2.0])
        r = validate_and_normalize(f0, f0, floor=1e-8)
        scale = 1 / (f0 + 1e-8).sum()
        assert np.all(r.f0 >= 1e-8 * scale * (1 - 1e-12))
        assert np.all(r.f0 > 0)

    def test_identity_on_normalized(self):
        f = np.array([0.25, 0.25, 0.5])
        r = validate_and_normalize(f, f)
        np.testing.assert_array_equal(r.f0, f)

    def test_zero_input(self):
        with pytest.raises(DegenerateInputError):
            validate_and_normalize(np.zeros(4), np.ones(4))

    def test_negative(self):
        with pytest.raises(ValidationError):
            validate_and_normalize(np.array([1.0, -1.0, 1.0]), np.ones(3))

    def test_unnormalized_mass_check(self):
        validate_and_normalize(np.ones(3), np.full(3, 1.0), normalize=False)
        with pytest.raises(ValidationError):
            validate_and_normalize(np.ones(3), np.full(3, 1.1), normalize=False)

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, st.integers(3, 40), elements=st.floats(0, 1e3, allow_nan=False)),
        st.floats(1e-3, 1e3),
    )
    def test_idempotent(self, f, scale):
        g = (f + (1.0 if f.sum() == 0 else 0.0)) * scale
        once = validate_and_normalize(g, g)
        twice = validate_and_normalize(once.f0, once.f1)
        np.testing.assert_array_equal(once.f0, twice.f0)


class TestMassPerSlice:
    def test_constant(self):
        f = np.full((5, 5, 4), 2.5)
        np.testing.assert_array_equal(mass_per_slice(f), np.full(4, 2.5 * 25))

    def test_zero(self):
        assert np.all(mass_per_slice(np.zeros((3, 6))) == 0)

    @pytest.mark.parametrize("dims", DIMS_SMALL, ids=str)
    def test_constant_after_projection(self, dims, rng):
        b0 = random_target(dims, rng)
        U = project_constraints(random_staggered(dims, rng), b0, ProxScratch(dims))
        mps = mass_per_slice(U.fbar)
        assert np.ptp(mps) <= 1e-12 * dims.P
        mpc = mass_per_slice(interpolate(U).f)
        assert np.ptp(mpc) <= 1e-10


@pytest.mark.parametrize("dims", DIMS_SMALL, ids=str)
def test_linear_initialization(dims, rng):
    b0 = random_target(dims, rng)
    U = linear_initialization(b0, dims.P)
    assert extract_boundary(U).equals(b0)
    assert all(np.all(m == 0) for m in U.mbar)
    t = np.diff(U.fbar, axis=-1)
    np.testing.assert_allclose(t, t[..., :1] * np.ones_like(t), atol=1e-15)


def test_field_arithmetic(rng):
    dims = GridDims(N=3, M=3, P=2)
    U = random_staggered(dims, rng)
    V = random_staggered(dims, rng)
    np.testing.assert_allclose((U + V - V).ravel(), U.ravel(), atol=1e-15)
    assert (2 * U).vdot(U) == pytest.approx(2 * U.norm() ** 2)
    assert (U / 2).max_abs() == pytest.approx(U.max_abs() / 2)
    C = CenteredField.zeros(dims)
    assert C.is_finite() and C.norm() == 0
    with pytest.raises(DimensionError):
        C.check(GridDims(N=3, P=2))


def test_divergence_free_mass_conservation(rng):
    dims = GridDims(N=6, M=5, P=7)
    b0 = random_target(dims, rng)
    U = project_constraints(random_staggered(dims, rng), b0, ProxScratch(dims))
    assert np.max(np.abs(divergence(U))) < 1e-9
    assert isinstance(b0, BoundaryValues)
