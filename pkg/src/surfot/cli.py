"""Command-line front end for the transport solvers.

One subcommand per workflow: ``geodesic`` and ``distance`` for endpoint
interpolation, ``jko`` for gradient flows, ``harmonic`` for the
Dirichlet problem, ``oracle`` and ``convergence`` for the validation
tools. Exit codes: 0 converged, 2 ran but did not converge, 1 usage or
I/O problem.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .functionals import ConvergenceError, FlowFunctional, FlowSetupError, run_flow
from .geodesic import SolverConfig, solve_geodesic
from .harmonic import BoundaryData, DomainMesh, solve_harmonic
from .io import (
    IOFormatError,
    RunManifest,
    config_to_dict,
    load_density,
    mesh_sha256,
    save_density,
    save_frames,
)
from .mesh import (
    DensityField,
    MeshError,
    build_operators,
    load_mesh,
)
from .oracle import (
    convergence_experiment,
    graph_distances,
    lp_transport,
    random_smooth_density,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors, which collides with the
    non-convergence code; remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _resolve_density(spec: str, mesh, rng) -> DensityField:
    """Density argument: a file path, delta:<idx>, uniform, or random."""
    if spec == "uniform":
        return DensityField.normalized(mesh, np.ones(mesh.n_vertices))
    if spec == "random":
        return random_smooth_density(mesh, rng)
    return load_density(spec, mesh)


def _load_vertex_values(path, mesh) -> np.ndarray:
    """Raw per-vertex function (one number per line), no sign constraint."""
    entries = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            entries.append(float(line))
        except ValueError:
            raise IOFormatError(f"{path}:{ln}: not a number: {line!r}") from None
    values = np.asarray(entries, dtype=np.float64)
    if values.shape != (mesh.n_vertices,):
        raise IOFormatError(
            f"{path}: {values.size} values for a mesh with {mesh.n_vertices} vertices"
        )
    if not np.all(np.isfinite(values)):
        raise IOFormatError(f"{path}: non-finite entries")
    return values


def _solver_config(args, time_steps=None) -> SolverConfig:
    return SolverConfig(
        time_steps=time_steps if time_steps is not None else args.time_steps,
        tol=args.tol,
        max_iters=args.max_iters,
        alpha=getattr(args, "alpha", 0.0),
    )


def _residual_table(result) -> np.ndarray:
    return np.column_stack(
        [result.primal_residuals, result.dual_residuals, result.penalty_history]
    )


def _manifest(command, args, config, result=None, **extra_fields):
    return RunManifest(
        command=command,
        mesh_path=str(args.mesh),
        mesh_hash=mesh_sha256(args.mesh),
        config=config_to_dict(config),
        iterations=0 if result is None else result.iterations,
        converged=True if result is None else result.converged,
        distance=None,
        frames=[],
        residuals_path=None,
        wall_time=0.0,
        extra=dict(extra_fields),
    )


def _cmd_geodesic(args) -> int:
    rng = np.random.default_rng(args.seed)
    mesh = load_mesh(args.mesh)
    ops = build_operators(mesh)
    rho0 = _resolve_density(args.rho0, mesh, rng)
    rho1 = _resolve_density(args.rho1, mesh, rng)
    config = _solver_config(args)
    start = time.perf_counter()
    result = solve_geodesic(mesh, ops, rho0, rho1, config)
    wall = time.perf_counter() - start
    print(f"distance {result.distance:.12g}")
    print(f"iterations {result.iterations} converged {result.converged}")
    print(f"duality_gap {result.duality_gap:.3e}")
    if args.out:
        manifest = _manifest(
            "geodesic",
            args,
            config,
            result,
            dual_objective=result.dual_objective,
            primal_action=result.primal_action,
            endpoints=["rho0.txt", "rho1.txt"],
        )
        manifest.distance = result.distance
        manifest.wall_time = wall
        save_frames(args.out, result.mu, manifest, residuals=_residual_table(result))
        save_density(Path(args.out) / "rho0.txt", rho0.values)
        save_density(Path(args.out) / "rho1.txt", rho1.values)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _cmd_distance(args) -> int:
    rng = np.random.default_rng(args.seed)
    mesh = load_mesh(args.mesh)
    ops = build_operators(mesh)
    rho0 = _resolve_density(args.rho0, mesh, rng)
    rho1 = _resolve_density(args.rho1, mesh, rng)
    config = _solver_config(args)
    result = solve_geodesic(mesh, ops, rho0, rho1, config)
    print(f"{result.distance:.12g}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _cmd_jko(args) -> int:
    rng = np.random.default_rng(args.seed)
    mesh = load_mesh(args.mesh)
    ops = build_operators(mesh)
    mu0 = _resolve_density(args.rho0, mesh, rng)
    if args.functional == "porous":
        functional = FlowFunctional.porous(args.exponent)
    else:
        if args.potential is None or args.cap is None:
            raise FlowSetupError("crowd functional needs --potential and --cap")
        potential = _load_vertex_values(args.potential, mesh)
        functional = FlowFunctional.crowd(potential, args.cap)
    config = _solver_config(args)
    start = time.perf_counter()
    trace = run_flow(mesh, ops, mu0, functional, args.step, args.steps, config)
    wall = time.perf_counter() - start
    print(f"steps {trace.n_steps} energy {trace.energies[0]:.12g} -> {trace.energies[-1]:.12g}")
    if args.out:
        manifest = _manifest(
            "jko",
            args,
            config,
            functional=args.functional,
            step=args.step,
            energies=[float(v) for v in trace.energies],
            costs=[float(v) for v in trace.costs],
            inner_iterations=[int(v) for v in trace.iterations],
        )
        manifest.iterations = int(trace.iterations.sum())
        manifest.wall_time = wall
        save_frames(args.out, trace.densities, manifest)
    return EXIT_OK


def _read_boundary_dir(path, domain_mesh, target_mesh):
    """Directory with index.json mapping vertex ids to density files."""
    index_path = Path(path) / "index.json"
    if not index_path.is_file():
        raise IOFormatError(f"{path}: missing index.json")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise IOFormatError(f"{index_path}: invalid JSON: {exc}") from None
    if not isinstance(index, dict) or not index:
        raise IOFormatError(f"{index_path}: expected a non-empty object")
    mapping = {}
    for key, name in index.items():
        try:
            vertex = int(key)
        except ValueError:
            raise IOFormatError(f"{index_path}: bad vertex id {key!r}") from None
        spec = name if str(name).startswith("delta:") else str(Path(path) / name)
        mapping[vertex] = load_density(spec, target_mesh)
    domain = DomainMesh(domain_mesh, dirichlet=sorted(mapping))
    data = BoundaryData.from_map(domain, target_mesh, mapping)
    return domain, data


def _cmd_harmonic(args) -> int:
    domain_mesh = load_mesh(args.mesh)
    target_mesh = load_mesh(args.target)
    target_ops = build_operators(target_mesh)
    domain, data = _read_boundary_dir(args.boundary, domain_mesh, target_mesh)
    config = SolverConfig(tol=args.tol, max_iters=args.max_iters)
    start = time.perf_counter()
    result = solve_harmonic(domain, target_mesh, target_ops, data, config)
    wall = time.perf_counter() - start
    print(f"energy {result.energy:.12g} dual {result.dual_objective:.12g}")
    print(f"iterations {result.iterations} converged {result.converged}")
    print(f"duality_gap {result.duality_gap:.3e}")
    if args.out:
        manifest = _manifest(
            "harmonic",
            args,
            config,
            result,
            target_path=str(args.target),
            target_hash=mesh_sha256(args.target),
            dirichlet=[int(v) for v in domain.dirichlet],
            energy=result.energy,
            dual_objective=result.dual_objective,
        )
        manifest.wall_time = wall
        save_frames(
            args.out, result.densities, manifest, residuals=_residual_table(result)
        )
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _cmd_oracle(args) -> int:
    rng = np.random.default_rng(args.seed)
    mesh = load_mesh(args.mesh)
    rho0 = _resolve_density(args.rho0, mesh, rng)
    rho1 = _resolve_density(args.rho1, mesh, rng)
    cost = graph_distances(mesh, metric=args.metric)
    value, _ = lp_transport(cost, rho0, rho1)
    print(f"{value:.12g}")
    return EXIT_OK


def _parse_int_list(text: str, flag: str):
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise IOFormatError(f"{flag} expects comma-separated integers: {text!r}") from None
    if not values:
        raise IOFormatError(f"{flag} is empty")
    return values


def _cmd_convergence(args) -> int:
    sides = _parse_int_list(args.sides, "--sides")
    n_values = _parse_int_list(args.n_values, "--n-values")
    rows = convergence_experiment(sides, n_values, tol=args.tol, max_iters=args.max_iters)
    print("side,n_steps,l1_error,iterations,converged")
    lines = []
    for row in rows:
        line = (
            f"{row['side']},{row['n_steps']},{row['l1_error']:.17g},"
            f"{row['iterations']},{row['converged']}"
        )
        print(line)
        lines.append(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "errors.csv", "w") as handle:
            handle.write("side,n_steps,l1_error,iterations,converged\n")
            for line in lines:
                handle.write(line + "\n")
    return EXIT_OK if all(row["converged"] for row in rows) else EXIT_NOT_CONVERGED


def build_parser() -> _Parser:
    parser = _Parser(prog="surfot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mesh=True, endpoints=False, solver=True, out=True):
        if mesh:
            p.add_argument("--mesh", required=True, help="surface mesh (OFF or OBJ)")
        if endpoints:
            p.add_argument("--rho0", required=True,
                           help="density file, delta:<idx>, uniform, or random")
            p.add_argument("--rho1", required=True,
                           help="density file, delta:<idx>, uniform, or random")
        if solver:
            p.add_argument("--tol", type=float, default=1e-4)
            p.add_argument("--max-iters", type=int, default=5000)
        if out:
            p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("geodesic", help="interpolate between two densities")
    common(p, endpoints=True)
    p.add_argument("--time-steps", type=int, default=15)
    p.add_argument("--alpha", type=float, default=0.0)
    p.set_defaults(handler=_cmd_geodesic)

    p = sub.add_parser("distance", help="print the transport distance")
    common(p, endpoints=True, out=False)
    p.add_argument("--time-steps", type=int, default=15)
    p.add_argument("--alpha", type=float, default=0.0)
    p.set_defaults(handler=_cmd_distance)

    p = sub.add_parser("jko", help="implicit gradient-flow steps")
    common(p)
    p.add_argument("--rho0", required=True,
                   help="initial density file, delta:<idx>, uniform, or random")
    p.add_argument("--functional", choices=("porous", "crowd"), required=True)
    p.add_argument("--exponent", type=float, default=2.0)
    p.add_argument("--potential", default=None, help="per-vertex potential file (crowd)")
    p.add_argument("--cap", type=float, default=None, help="density cap (crowd)")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--time-steps", type=int, default=5)
    # first-order outer scheme: the loose inner tolerance is the default
    p.set_defaults(handler=_cmd_jko, tol=1e-3)

    p = sub.add_parser("harmonic", help="Dirichlet problem into transport space")
    common(p)
    p.add_argument("--target", required=True, help="target surface mesh")
    p.add_argument("--boundary", required=True,
                   help="directory with index.json and per-vertex density files")
    p.set_defaults(handler=_cmd_harmonic)

    p = sub.add_parser("oracle", help="exact LP transport value")
    common(p, endpoints=True, solver=False, out=False)
    p.add_argument("--metric", choices=("graph", "euclidean"), default="graph")
    p.set_defaults(handler=_cmd_oracle)

    p = sub.add_parser("convergence", help="translation refinement study")
    common(p, mesh=False)
    p.add_argument("--sides", default="16,32")
    p.add_argument("--n-values", default="15,31")
    p.set_defaults(handler=_cmd_convergence, max_iters=8000)

    return parser


def dispatch(argv=None) -> int:
    """Parse arguments and run one subcommand; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (MeshError, IOFormatError, FlowSetupError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv=None) -> None:
    raise SystemExit(dispatch(argv))


if __name__ == "__main__":
    main()
