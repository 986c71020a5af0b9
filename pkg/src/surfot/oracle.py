"""Independent ground truth: exact LP transport, graph distances, flat-mesh
builders and the refinement-convergence experiment.

Everything here is deliberately simple and solver-independent so it can
serve as an oracle for the splitting solver: distances come from
shortest paths, transport values from a generic LP, and the convergence
experiment only relies on the translation symmetry of the exact
interpolant between two translates of the same blob.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components, dijkstra

from .geodesic import SolverConfig, solve_geodesic
from .mesh import DensityField, TriangleMesh, build_operators

__all__ = [
    "CostMatrix",
    "graph_distances",
    "lp_transport",
    "convergence_experiment",
    "unit_square_mesh",
    "strip_mesh",
    "sphere_mesh",
    "bump_density",
    "delta_density",
    "random_smooth_density",
]


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise transport costs c(u, v) = (1/2) d(u, v)^2 between vertices."""

    costs: np.ndarray

    def __post_init__(self):
        c = self.costs
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("cost matrix must be square")
        if (c < 0).any() or np.abs(np.diagonal(c)).max() > 1e-12:
            raise ValueError("costs must be nonnegative with zero diagonal")

    @property
    def distances(self) -> np.ndarray:
        return np.sqrt(2.0 * self.costs)


def graph_distances(mesh: TriangleMesh, metric: str = "graph") -> CostMatrix:
    """All-pairs vertex distances as a half-squared cost matrix.

    ``metric="graph"`` runs shortest paths on the edge graph with
    Euclidean edge lengths; ``metric="euclidean"`` uses straight-line
    distances, exact on flat convex meshes.

    Raises
    ------
    ValueError
        If the mesh is disconnected (graph metric) or the metric name is
        unknown.
    """
    if metric == "euclidean":
        diff = mesh.vertices[:, None, :] - mesh.vertices[None, :, :]
        d = np.linalg.norm(diff, axis=-1)
    elif metric == "graph":
        edges = mesh.edges()
        lengths = np.linalg.norm(
            mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1
        )
        n = mesh.n_vertices
        adj = sparse.csr_matrix(
            (
                np.concatenate([lengths, lengths]),
                (
                    np.concatenate([edges[:, 0], edges[:, 1]]),
                    np.concatenate([edges[:, 1], edges[:, 0]]),
                ),
            ),
            shape=(n, n),
        )
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise ValueError(f"mesh is disconnected ({n_comp} components)")
        d = dijkstra(adj, directed=False)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return CostMatrix(0.5 * d * d)


def lp_transport(cost: CostMatrix, mu0: DensityField, mu1: DensityField):
    """Exact optimal transport value between two vertex densities.

    Marginal atoms are the area-weighted masses |v| mu_v. Solved as a
    dense LP restricted to the supports; returns the optimal value and
    the full (n, n) plan (zero off the supports).
    """
    mesh = mu0.mesh
    if mu1.mesh is not mesh:
        raise ValueError("densities live on different meshes")
    n = mesh.n_vertices
    if cost.costs.shape != (n, n):
        raise ValueError("cost matrix size does not match the mesh")
    a = mesh.vertex_areas * mu0.values
    b = mesh.vertex_areas * mu1.values
    src = np.flatnonzero(a > 0)
    dst = np.flatnonzero(b > 0)
    ns, nd = len(src), len(dst)

    c = cost.costs[np.ix_(src, dst)].ravel()
    # Row-sum and column-sum constraints on the ns x nd plan.
    data, rows, cols = [], [], []
    for i in range(ns):
        rows.extend([i] * nd)
        cols.extend(range(i * nd, (i + 1) * nd))
        data.extend([1.0] * nd)
    for j in range(nd):
        rows.extend([ns + j] * ns)
        cols.extend(range(j, ns * nd, nd))
        data.extend([1.0] * ns)
    a_eq = sparse.csr_matrix((data, (rows, cols)), shape=(ns + nd, ns * nd))
    b_eq = np.concatenate([a[src], b[dst]])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.zeros((n, n))
    plan[np.ix_(src, dst)] = res.x.reshape(ns, nd)
    return float(res.fun), plan


# ---------------------------------------------------------------------------
# Flat and round test meshes


def _grid_mesh(nx, ny, width, height):
    """Rectangle triangulated on an nx-by-ny vertex grid, alternating
    diagonals for symmetry."""
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 points per side")
    xs = np.linspace(0.0, width, nx)
    ys = np.linspace(0.0, height, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(nx * ny)])

    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx + 1
            d = a + nx
            if (i + j) % 2 == 0:
                faces.append((a, b, c))
                faces.append((a, c, d))
            else:
                faces.append((a, b, d))
                faces.append((b, c, d))
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64))


def unit_square_mesh(side: int) -> TriangleMesh:
    """Regular triangulation of the unit square with ``side`` points per side."""
    return _grid_mesh(side, side, 1.0, 1.0)


def strip_mesh(n_cols: int, n_rows: int, height: float) -> TriangleMesh:
    """Flat strip [0,1] x [0,height] on an n_cols-by-n_rows vertex grid."""
    return _grid_mesh(n_cols, n_rows, 1.0, height)


def sphere_mesh(subdivisions: int) -> TriangleMesh:
    """Unit sphere from repeated octahedron subdivision."""
    vertices = [
        (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
    ]
    faces = [
        (0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4),
        (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5),
    ]
    vertices = [np.asarray(v, dtype=np.float64) for v in vertices]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = vertices[i] + vertices[j]
                vertices.append(p / np.linalg.norm(p))
                cache[key] = len(vertices) - 1
            return cache[key]

        new_faces = []
        for i, j, k in faces:
            ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, ij, ki), (ij, j, jk), (ki, jk, k), (ij, jk, ki)]
        faces = new_faces
    return TriangleMesh(np.asarray(vertices), np.asarray(faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# Densities for experiments


def bump_density(mesh: TriangleMesh, center, radius: float) -> DensityField:
    """Truncated squared-cosine bump, normalized to unit mass."""
    center = np.asarray(center, dtype=np.float64)
    if center.shape == (2,):
        center = np.append(center, 0.0)
    d = np.linalg.norm(mesh.vertices - center[None, :], axis=1)
    values = np.where(d < radius, np.cos(0.5 * np.pi * d / radius) ** 2, 0.0)
    return DensityField.normalized(mesh, values)


def delta_density(mesh: TriangleMesh, vertex: int) -> DensityField:
    """Unit point mass at a vertex, represented as a 1/|v| spike."""
    values = np.zeros(mesh.n_vertices)
    values[vertex] = 1.0 / mesh.vertex_areas[vertex]
    return DensityField(mesh, values)


def random_smooth_density(mesh: TriangleMesh, rng: np.random.Generator, n_bumps: int = 3) -> DensityField:
    """Positive density from a few random Gaussian bumps over a baseline."""
    extent = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    diam = float(np.linalg.norm(extent))
    values = np.full(mesh.n_vertices, 0.25)
    for _ in range(n_bumps):
        center = mesh.vertices[rng.integers(mesh.n_vertices)]
        width = rng.uniform(0.1, 0.3) * diam
        d2 = ((mesh.vertices - center[None, :]) ** 2).sum(axis=1)
        values += rng.uniform(0.5, 2.0) * np.exp(-d2 / (2.0 * width * width))
    return DensityField.normalized(mesh, values)


# ---------------------------------------------------------------------------
# Refinement convergence experiment


def convergence_experiment(
    side_counts,
    n_values,
    tol: float = 1e-4,
    max_iters: int = 8000,
    radius: float = 0.22,
):
    """Translation test on regular unit-square meshes.

    A squared-cosine bump is transported from (0.35, 0.5) to (0.65, 0.5);
    by translation symmetry the exact midpoint of the interpolation is the
    same bump at (0.5, 0.5). For every (side, N) pair the L1 error of the
    centered frame nearest t = 1/2 against that exact translate is
    recorded. Use odd N so the centered grid contains t = 1/2.

    Returns a list of dict rows with keys ``side``, ``n_steps``,
    ``l1_error``, ``iterations``, ``converged``.
    """
    rows = []
    for side in side_counts:
        mesh = unit_square_mesh(side)
        ops = build_operators(mesh)
        mu0 = bump_density(mesh, (0.35, 0.5), radius)
        mu1 = bump_density(mesh, (0.65, 0.5), radius)
        exact_mid = bump_density(mesh, (0.5, 0.5), radius)
        for n_steps in n_values:
            config = SolverConfig(time_steps=n_steps, tol=tol, max_iters=max_iters)
            result = solve_geodesic(mesh, ops, mu0, mu1, config)
            grid_times = (np.arange(n_steps) + 0.5) / n_steps
            mid = int(np.argmin(np.abs(grid_times - 0.5)))
            err = float(
                mesh.vertex_areas @ np.abs(result.mu[mid] - exact_mid.values)
            )
            rows.append(
                {
                    "side": int(side),
                    "n_steps": int(n_steps),
                    "l1_error": err,
                    "iterations": result.iterations,
                    "converged": result.converged,
                }
            )
    return rows
