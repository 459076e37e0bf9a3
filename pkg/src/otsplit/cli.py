"""Command-line driver: load, validate, build weights, solve, save.

Exit codes: 0 success, 2 invalid input or configuration, 3 solver
divergence or numerical failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from . import __version__
from .cost import build_weights, energy, telemetry_energy
from .errors import DivergenceError, NumericalError, OTSplitError, ValidationError
from .grid import GridDims, validate_and_normalize
from .io import RunManifest, load_density, save_run, sha256_file, write_partial_log
from .prox import CostModel
from .solvers import Problem, SolverConfig, interpolation_norm, solve

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_USAGE = 64

SOLVERS = {
    "a-dr": "A-DR",
    "dr": "A-DR",
    "a-dr2": "A-DR'",
    "s-dr": "S-DR",
    "s-dr2": "S-DR'",
    "pd": "PD",
    "centered": "CENTERED-DR",
}

DEMO_SIGMA = 0.04

log = logging.getLogger("otsplit")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="otsplit",
        description="Compute a dynamic optimal-transport geodesic between two densities.",
    )
    src = p.add_argument_group("input")
    src.add_argument("--f0", type=Path, help="initial density (.pgm, .csv or .otdt)")
    src.add_argument("--f1", type=Path, help="final density (.pgm, .csv or .otdt)")
    src.add_argument(
        "--demo",
        choices=("gaussians", "obstacle"),
        help="built-in instance instead of --f0/--f1 (defaults to a 32x32x32 grid)",
    )
    src.add_argument("--grid", help="NxMxP (2-D) or NxP (1-D) interval counts")
    src.add_argument("--floor", type=float, default=0.0, help="constant added to both densities")
    src.add_argument("--weights", type=Path, help="obstacle mask file; nonzero samples are obstacles")
    src.add_argument("--weight-mode", choices=("uniform", "obstacle", "distance"), default=None)
    src.add_argument("--beta", type=float, default=1.0, help="cost exponent in [0, 1]")

    sv = p.add_argument_group("solver")
    sv.add_argument("--solver", choices=sorted(SOLVERS), default="pd")
    sv.add_argument("--gamma", type=float, default=1.0 / 75.0)
    sv.add_argument("--alpha", type=float, default=1.998)
    sv.add_argument("--sigma", type=float, default=85.0)
    sv.add_argument("--tau", type=float, default=None, help="default 0.99 / (sigma |I|^2)")
    sv.add_argument("--theta", type=float, default=1.0)
    sv.add_argument("--iters", type=int, default=1000)
    sv.add_argument("--tol", type=float, default=1e-8)
    sv.add_argument("--seed", type=int, default=None, help="recorded in the manifest; all paths are deterministic")

    out = p.add_argument_group("output")
    out.add_argument("--out", type=Path, default=Path("otsplit-run"))
    out.add_argument("--log-every", type=int, default=10)
    out.add_argument("-q", "--quiet", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def parse_grid(text: str) -> GridDims:
    m = re.fullmatch(r"\s*(\d+)\s*x\s*(\d+)(?:\s*x\s*(\d+))?\s*", text or "")
    if not m:
        raise ValidationError(f"--grid expects NxMxP or NxP, got {text!r}")
    a, b, c = m.groups()
    if c is None:
        return GridDims(N=int(a), P=int(b))
    return GridDims(N=int(a), M=int(b), P=int(c))


def demo_densities(name: str, dims: GridDims):
    """Two isotropic Gaussians (and, for ``obstacle``, a wall with a gap)."""
    if dims.d != 2:
        raise ValidationError("the demos are 2-D; use an NxMxP grid")
    x = np.arange(dims.N + 1) / dims.N
    y = np.arange(dims.M + 1) / dims.M
    X, Y = np.meshgrid(x, y, indexing="ij")

    def gauss(cx, cy):
        return np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * DEMO_SIGMA**2))

    if name == "gaussians":
        return gauss(0.3, 0.3), gauss(0.7, 0.7), None
    mask = (np.abs(X - 0.5) <= 1.5 / dims.N + 1e-12) & (np.abs(Y - 0.5) > 0.15)
    f0, f1 = gauss(0.2, 0.2), gauss(0.8, 0.2)
    f0[mask] = 0.0
    f1[mask] = 0.0
    return f0, f1, mask


def _resample(f: np.ndarray, shape: tuple) -> np.ndarray:
    if f.shape == shape:
        return f
    if f.ndim != len(shape):
        raise ValidationError(f"density of shape {f.shape} cannot be mapped onto a grid with samples {shape}")
    factors = [t / s for t, s in zip(shape, f.shape)]
    out = ndimage.zoom(f, factors, order=1, grid_mode=False)
    if out.shape != shape:
        raise ValidationError(f"resampling {f.shape} to {shape} failed")
    return np.maximum(out, 0.0)


def _load_inputs(args, dims: Optional[GridDims], manifest: RunManifest):
    if args.demo:
        dims = dims or GridDims(N=32, M=32, P=32)
        f0, f1, mask = demo_densities(args.demo, dims)
        manifest.config["demo"] = args.demo
        return dims, f0, f1, mask
    if args.f0 is None or args.f1 is None:
        raise _UsageError("--f0 and --f1 are required unless --demo is given")
    if dims is None:
        raise _UsageError("--grid is required unless --demo is given")
    f0 = load_density(args.f0)
    f1 = load_density(args.f1)
    manifest.inputs["f0"] = str(args.f0)
    manifest.inputs["f0_sha256"] = sha256_file(args.f0)
    manifest.inputs["f1"] = str(args.f1)
    manifest.inputs["f1_sha256"] = sha256_file(args.f1)
    shape = dims.spatial_shape
    f0 = _resample(np.asarray(f0, dtype=float), shape)
    f1 = _resample(np.asarray(f1, dtype=float), shape)
    mask = None
    if args.weights is not None:
        raw = load_density(args.weights)
        mask = _resample(np.asarray(raw, dtype=float), shape) > 0.5
        manifest.inputs["weights"] = str(args.weights)
        manifest.inputs["weights_sha256"] = sha256_file(args.weights)
    return dims, f0, f1, mask


def _cost_model(args, mask):
    mode = args.weight_mode or ("obstacle" if mask is not None else "uniform")
    if mode != "uniform" and mask is None:
        raise ValidationError(f"--weight-mode {mode} needs an obstacle mask (--weights or --demo obstacle)")
    if mode == "uniform":
        return CostModel(beta=args.beta), mode
    return CostModel(beta=args.beta, weights=build_weights(mask, mode)), mode


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run the full pipeline and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"otsplit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")

    manifest = RunManifest()
    t0 = time.perf_counter()
    try:
        dims = parse_grid(args.grid) if args.grid else None
        dims, f0, f1, mask = _load_inputs(args, dims, manifest)
        pair = validate_and_normalize(f0, f1, floor=args.floor)
        cost, mode = _cost_model(args, mask)
        config = SolverConfig(
            algorithm=SOLVERS[args.solver],
            gamma=args.gamma,
            alpha=args.alpha,
            sigma=args.sigma,
            tau=args.tau,
            theta=args.theta,
            max_iter=args.iters,
            tol=args.tol,
            log_every=args.log_every,
        )
        problem = Problem.from_densities(pair.f0, pair.f1, dims.P, cost)
        if config.algorithm == "PD":
            manifest.config["interp_norm"] = repr(interpolation_norm(dims))
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"otsplit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OTSplitError, OSError) as exc:
        print(f"otsplit: {exc}", file=sys.stderr)
        return EXIT_INVALID

    manifest.config.update(
        {
            "grid": str(dims),
            "solver": config.algorithm,
            "gamma": repr(config.gamma),
            "alpha": repr(config.alpha),
            "sigma": repr(config.sigma),
            "tau": repr(config.tau),
            "theta": repr(config.theta),
            "iters": config.max_iter,
            "tol": repr(config.tol),
            "log_every": config.log_every,
            "beta": repr(args.beta),
            "weight_mode": mode,
            "floor": repr(args.floor),
            "seed": args.seed,
            "mass0": repr(pair.mass0),
            "mass1": repr(pair.mass1),
            "version": __version__,
        }
    )
    t1 = time.perf_counter()
    try:
        _, V, record = solve(problem, config)
    except (DivergenceError, NumericalError) as exc:
        print(f"otsplit: solver failed: {exc}", file=sys.stderr)
        rec = getattr(exc, "record", None)
        if rec is not None:
            try:
                write_partial_log(rec, args.out)
            except OSError:
                pass
        return EXIT_DIVERGED
    t2 = time.perf_counter()
    manifest.timings.update({"setup": t1 - t0, "solve": t2 - t1})
    manifest.config["converged"] = record.converged
    manifest.config["final_iter"] = record.iters[-1] if len(record) else 0
    try:
        paths = save_run(V, record, manifest, args.out)
    except OSError as exc:
        print(f"otsplit: {exc}", file=sys.stderr)
        return EXIT_INVALID
    J = energy(V, cost)
    if np.isfinite(J):
        summary = f"J = {J:.6g}"
    else:
        te = telemetry_energy(V, cost)
        summary = f"J = inf ({te.penalized} cells with nonpositive density; {te.regular:.6g} on the rest)"
    log.info(
        "%s on %s: %d iterations, %s, %d frames in %s",
        config.algorithm,
        dims,
        manifest.config["final_iter"],
        summary,
        len(paths["frames"]),
        args.out,
    )
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())
