import numpy as np
import pytest

from otsplit.grid import CenteredField, GridDims, StaggeredField, assemble_boundary_target


def gaussian(dims: GridDims, center, sigma):
    """Unit-mass isotropic Gaussian sampled on the spatial nodes of ``dims``."""
    axes = [np.arange(n + 1) / n for n in dims.counts]
    grids = np.meshgrid(*axes, indexing="ij")
    r2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    g = np.exp(-r2 / (2 * sigma**2))
    return g / g.sum()


def random_staggered(dims, rng):
    return StaggeredField.from_vector(rng.standard_normal(dims.staggered_size), dims)


def random_centered(dims, rng):
    return CenteredField.from_vector(rng.standard_normal(dims.centered_size), dims)


def random_target(dims, rng, floor=0.1):
    f0 = rng.random(dims.spatial_shape) + floor
    f1 = rng.random(dims.spatial_shape) + floor
    f0 /= f0.sum()
    f1 /= f1.sum()
    return assemble_boundary_target(f0, f1, dims.P)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


DIMS_SMALL = [
    GridDims(N=2, P=1),
    GridDims(N=5, P=3),
    GridDims(N=8, P=8),
    GridDims(N=3, P=4, M=2),
    GridDims(N=4, P=3, M=5),
]


ACCEPTANCE_REPORT = []


def report(criterion, ok, detail):
    """Record one acceptance verdict; the line is printed in the terminal summary."""
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_REPORT.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_REPORT, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
