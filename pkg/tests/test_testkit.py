import ast
from pathlib import Path

import numpy as np
import pytest

import otsplit.testkit as testkit
from otsplit.errors import SizeError
from otsplit.grid import GridDims, linear_initialization
from otsplit.operators import estimate_op_norm, linear_map
from otsplit.prox import ProxScratch, project_constraints, prox_j, prox_j_beta
from otsplit.testkit import (
    oracle_constraint_residual,
    oracle_dense_op,
    oracle_distance,
    oracle_project,
    oracle_prox,
    prox_objective,
)

from conftest import random_staggered, random_target


class TestOracleProx:
    def test_reference(self):
        mo, fo = oracle_prox([1.0], 1.0, 1.0)
        m, f = prox_j([1.0], 1.0, 1.0)
        assert abs(fo - f) <= 1e-8 and abs(mo[0] - m[0]) <= 1e-8

    def test_trivial(self):
        mo, fo = oracle_prox([0.0], 2.0, 0.3)
        assert abs(fo - 2.0) < 1e-9 and mo[0] == 0
        mo, fo = oracle_prox([0.0], -1.0, 1.0)
        assert fo == 0 and mo[0] == 0

    def test_mutual_optimality(self, rng):
        # 10^4 random inputs over all exponents; each side at least as good as the other
        worst = 0.0
        for k in range(10_000):
            beta = (1.0, 0.5, 0.0, 0.75)[k % 4]
            m = rng.uniform(-3, 3, rng.integers(1, 3))
            f, g, w = rng.uniform(-3, 3), rng.uniform(0.01, 3), rng.choice([0.5, 1.0, 4.0])
            pm, pf = prox_j_beta(m, f, g, beta, w)
            om, of = oracle_prox(m, f, g, beta, w)
            a = prox_objective(om, of, m, f, g, beta, w)
            b = prox_objective(pm, pf, m, f, g, beta, w)
            assert a <= b + 1e-10
            assert b <= a + 1e-10
            worst = max(worst, abs(pf - of))
        assert worst < 1e-6


class TestOracleProject:
    def test_feasible_unchanged(self, rng):
        dims = GridDims(N=6, M=5, P=4)
        b0 = random_target(dims, rng)
        U = project_constraints(random_staggered(dims, rng), b0, ProxScratch(dims))
        np.testing.assert_allclose(oracle_project(U, b0).ravel(), U.ravel(), atol=1e-12)

    def test_static_init_is_feasible(self, rng):
        # with f0 = f1 the time-constant density and zero momentum satisfy every row
        dims = GridDims(N=8, P=8)
        b0 = random_target(dims, rng)
        b0.f1 = b0.f0.copy()
        assert oracle_constraint_residual(linear_initialization(b0, 8), b0) <= 1e-15
        b1 = random_target(dims, rng)
        assert oracle_constraint_residual(linear_initialization(b1, 8), b1) > 1e-3

    def test_agrees_with_production(self, rng):
        dims = GridDims(N=8, P=8)
        scratch = ProxScratch(dims)
        for _ in range(20):
            b0 = random_target(dims, rng)
            U = random_staggered(dims, rng)
            Q = oracle_project(U, b0)
            np.testing.assert_allclose(Q.ravel(), project_constraints(U, b0, scratch).ravel(), atol=1e-8)
            assert oracle_constraint_residual(Q, b0) <= 1e-10

    def test_size_cap(self, rng):
        dims = GridDims(N=20, M=20, P=20)
        with pytest.raises(SizeError):
            oracle_project(random_staggered(dims, rng), random_target(dims, rng))


class TestDenseOp:
    def test_interpolation_stencil(self):
        A = oracle_dense_op("interpolation", GridDims(N=2, P=1))
        for row in A:
            nz = row[row != 0]
            assert nz.size == 2 and np.all(nz == 0.5)

    @pytest.mark.parametrize("op", ["interpolation", "divergence", "constraint"])
    def test_adjoint_is_transpose(self, op):
        dims = GridDims(N=3, M=2, P=3)
        assert np.array_equal(oracle_dense_op(op, dims, adjoint=True), oracle_dense_op(op, dims).T)

    def test_norm(self):
        dims = GridDims(N=6, M=6, P=6)
        s = np.linalg.svd(oracle_dense_op("interpolation", dims), compute_uv=False)[0]
        assert abs(s - estimate_op_norm(linear_map("interpolation", dims))) <= 1e-6

    def test_size_cap(self):
        with pytest.raises(SizeError):
            oracle_dense_op("interpolation", GridDims(N=20, M=20, P=20))


class TestOracleDistance:
    def test_example(self):
        mask = np.zeros((5, 5), bool)
        mask[2, 2] = True
        d = oracle_distance(mask)
        assert np.isinf(d[2, 2])
        assert d[2, 3] == 0.25 and d[0, 0] == pytest.approx(np.sqrt(2) / 2, abs=1e-15)


def test_oracles_do_not_import_production_paths():
    tree = ast.parse(Path(testkit.__file__).read_text())
    top = [n for n in tree.body if isinstance(n, (ast.Import, ast.ImportFrom))]
    modules = {n.module for n in top if isinstance(n, ast.ImportFrom)}
    # only shared containers and errors at module level; the dense operator view imports lazily
    assert modules <= {"__future__", "errors", "grid"}
