import itertools

import numpy as np
import pytest

from surfot.mesh import DensityField, TriangleMesh
from surfot.oracle import (
    CostMatrix,
    bump_density,
    convergence_experiment,
    delta_density,
    graph_distances,
    lp_transport,
    sphere_mesh,
    strip_mesh,
    unit_square_mesh,
)


def two_by_two_transport(a, b, cost):
    """Enumerate the 2x2 transport polytope: plans are a segment in the
    single free entry x = plan[0, 0], so the optimum sits at an endpoint."""
    lo = max(0.0, a[0] - b[1])
    hi = min(a[0], b[0])
    best = np.inf
    for x in (lo, hi):
        plan = np.array([[x, a[0] - x], [b[0] - x, a[1] - b[0] + x]])
        best = min(best, float((plan * cost).sum()))
    return best


class TestCostMatrix:
    def test_rejects_nonsquare_and_negative(self):
        with pytest.raises(ValueError):
            CostMatrix(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            CostMatrix(np.array([[0.0, -1.0], [1.0, 0.0]]))
        with pytest.raises(ValueError):
            CostMatrix(np.array([[0.5, 1.0], [1.0, 0.0]]))

    def test_distances_invert_half_square(self):
        d = np.array([[0.0, 2.0], [2.0, 0.0]])
        cm = CostMatrix(0.5 * d * d)
        assert np.allclose(cm.distances, d)


class TestGraphDistances:
    def test_single_edge_length(self, two_triangles):
        cm = graph_distances(two_triangles, metric="graph")
        assert cm.distances[0, 1] == pytest.approx(1.0)
        assert cm.distances[0, 2] == pytest.approx(1.0)

    def test_two_hop_path_beats_missing_diagonal(self, two_triangles):
        # no edge joins vertex 0 and vertex 3, so the graph metric walks
        # two unit edges while the straight line is sqrt(2)
        graph = graph_distances(two_triangles, metric="graph")
        euclid = graph_distances(two_triangles, metric="euclidean")
        assert graph.distances[0, 3] == pytest.approx(2.0)
        assert euclid.distances[0, 3] == pytest.approx(np.sqrt(2.0))

    def test_euclidean_matches_norms(self):
        mesh = strip_mesh(4, 2, 0.5)
        cm = graph_distances(mesh, metric="euclidean")
        diff = mesh.vertices[:, None, :] - mesh.vertices[None, :, :]
        assert np.allclose(cm.distances, np.linalg.norm(diff, axis=-1))

    def test_graph_dominates_euclidean(self):
        mesh = unit_square_mesh(5)
        graph = graph_distances(mesh, metric="graph").distances
        euclid = graph_distances(mesh, metric="euclidean").distances
        assert (graph >= euclid - 1e-12).all()

    def test_unknown_metric(self, two_triangles):
        with pytest.raises(ValueError):
            graph_distances(two_triangles, metric="hyperbolic")

    def test_disconnected_mesh_rejected(self):
        verts = np.array(
            [
                [0, 0, 0], [1, 0, 0], [0, 1, 0],
                [5, 5, 0], [6, 5, 0], [5, 6, 0],
            ],
            dtype=float,
        )
        faces = np.array([[0, 1, 2], [3, 4, 5]])
        mesh = TriangleMesh(verts, faces)
        with pytest.raises(ValueError, match="disconnected"):
            graph_distances(mesh, metric="graph")


class TestLpTransport:
    def test_coincident_is_zero_with_diagonal_plan(self):
        mesh = unit_square_mesh(4)
        rho = bump_density(mesh, (0.5, 0.5), 0.4)
        cm = graph_distances(mesh, metric="euclidean")
        value, plan = lp_transport(cm, rho, rho)
        assert abs(value) <= 1e-12
        off = plan - np.diag(np.diagonal(plan))
        assert np.abs(off).max() <= 1e-12

    def test_delta_pair_is_half_squared_distance(self):
        mesh = unit_square_mesh(5)
        cm = graph_distances(mesh, metric="euclidean")
        i, j = 0, mesh.n_vertices - 1
        value, plan = lp_transport(cm, delta_density(mesh, i), delta_density(mesh, j))
        d = np.linalg.norm(mesh.vertices[j] - mesh.vertices[i])
        assert value == pytest.approx(0.5 * d * d, rel=1e-9)
        assert plan[i, j] == pytest.approx(1.0, rel=1e-9)

    def test_matches_two_by_two_enumeration(self, two_triangles):
        mesh = two_triangles
        va = mesh.vertex_areas
        rng = np.random.default_rng(7)
        cm = graph_distances(mesh, metric="euclidean")
        for _ in range(20):
            src = rng.choice(4, size=2, replace=False)
            dst = rng.choice(4, size=2, replace=False)
            wa = rng.uniform(0.2, 1.0, 2)
            wb = rng.uniform(0.2, 1.0, 2)
            wa /= wa.sum()
            wb /= wb.sum()
            rho0 = np.zeros(4)
            rho1 = np.zeros(4)
            rho0[src] = wa / va[src]
            rho1[dst] = wb / va[dst]
            value, _ = lp_transport(
                cm, DensityField(mesh, rho0), DensityField(mesh, rho1)
            )
            ref = two_by_two_transport(wa, wb, cm.costs[np.ix_(src, dst)])
            assert value == pytest.approx(ref, abs=1e-10)

    def test_mesh_mismatch_rejected(self):
        a = unit_square_mesh(3)
        b = unit_square_mesh(4)
        cm = graph_distances(a, metric="euclidean")
        with pytest.raises(ValueError):
            lp_transport(cm, bump_density(a, (0.5, 0.5), 0.4), bump_density(b, (0.5, 0.5), 0.4))
        with pytest.raises(ValueError):
            lp_transport(cm, bump_density(b, (0.5, 0.5), 0.4), bump_density(b, (0.5, 0.5), 0.4))


class TestMetricAxioms:
    def test_lp_values_form_a_metric(self):
        mesh = sphere_mesh(1)
        cm = graph_distances(mesh, metric="graph")
        rng = np.random.default_rng(9)
        picks = [rng.integers(mesh.n_vertices) for _ in range(4)]
        deltas = [delta_density(mesh, int(v)) for v in picks]
        dist = np.zeros((4, 4))
        for i, j in itertools.combinations(range(4), 2):
            value, _ = lp_transport(cm, deltas[i], deltas[j])
            dist[i, j] = dist[j, i] = np.sqrt(2.0 * value)
        for i, j, k in itertools.permutations(range(4), 3):
            assert dist[i, j] <= dist[i, k] + dist[k, j] + 1e-10


class TestMeshFactories:
    def test_unit_square_geometry(self):
        mesh = unit_square_mesh(5)
        assert mesh.n_vertices == 25
        assert mesh.total_area == pytest.approx(1.0, rel=1e-12)
        assert np.all(mesh.vertices[:, 2] == 0.0)

    def test_strip_dimensions(self):
        mesh = strip_mesh(7, 3, 0.4)
        assert mesh.n_vertices == 21
        assert mesh.vertices[:, 0].max() == pytest.approx(1.0)
        assert mesh.vertices[:, 1].max() == pytest.approx(0.4)

    def test_sphere_is_closed(self):
        mesh = sphere_mesh(1)
        assert len(mesh.boundary_vertices()) == 0
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert np.allclose(radii, 1.0, atol=1e-12)
        # Euler characteristic of a sphere
        n_edges = len(mesh.edges())
        assert mesh.n_vertices - n_edges + mesh.n_faces == 2


class TestConvergenceExperiment:
    def test_row_structure_and_sanity(self):
        rows = convergence_experiment([8], [7])
        assert len(rows) == 1
        row = rows[0]
        assert set(row) == {"side", "n_steps", "l1_error", "iterations", "converged"}
        assert row["side"] == 8
        assert row["n_steps"] == 7
        assert row["converged"]
        assert 0.0 < row["l1_error"] < 2.0

    def test_error_drops_under_refinement(self):
        rows = convergence_experiment([8, 16], [7])
        assert rows[1]["l1_error"] < rows[0]["l1_error"]
