"""Triangulated surfaces, vertex densities and first-order finite elements.

The solvers in this package only ever touch a mesh through the operator
bundle built here: per-face gradients of the hat basis, face and vertex
area weights, and the assembled stiffness matrix. Everything is plain
NumPy/SciPy; meshes are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse


class MeshError(ValueError):
    """Raised when a mesh is structurally or geometrically invalid."""


class MeshFormatError(MeshError):
    """Raised when a mesh file cannot be parsed."""


class DensityError(ValueError):
    """Raised when vertex values do not form a valid probability density."""


class TriangleMesh:
    """Immutable triangle mesh embedded in R^3.

    Parameters
    ----------
    vertices : (n_vertices, 3) float array
        Vertex positions.
    faces : (n_faces, 3) int array
        Vertex indices per triangle, consistently oriented.

    Raises
    ------
    MeshError
        If indices are out of range, a face repeats a vertex, a face is
        degenerate (area below 1e-12 times the mean), an edge is shared
        by more than two faces, or two faces traverse a shared edge in
        the same direction (inconsistent orientation).
    """

    def __init__(self, vertices, faces):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError(f"vertices must have shape (n, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must have shape (m, 3), got {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise MeshError("face indices out of range")
        if len(faces) == 0:
            raise MeshError("mesh has no faces")
        same = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 2] == faces[:, 0])
        if same.any():
            raise MeshError(f"face {int(np.flatnonzero(same)[0])} repeats a vertex")

        self.vertices = vertices
        self.faces = faces
        self.vertices.setflags(write=False)
        self.faces.setflags(write=False)

        p0, p1, p2 = (vertices[faces[:, k]] for k in range(3))
        cross = np.cross(p1 - p0, p2 - p0)
        norms = np.linalg.norm(cross, axis=1)
        areas = 0.5 * norms
        if (areas <= 1e-12 * areas.mean()).any():
            bad = int(np.argmin(areas))
            raise MeshError(f"face {bad} is degenerate (area {areas[bad]:.3e})")
        self.face_areas = areas
        self.face_normals = cross / norms[:, None]
        self.face_areas.setflags(write=False)
        self.face_normals.setflags(write=False)

        # Barycentric vertex areas: one third of the incident face areas.
        va = np.zeros(len(vertices))
        np.add.at(va, faces.ravel(), np.repeat(areas / 3.0, 3))
        if (va <= 0.0).any():
            raise MeshError("mesh has isolated vertices (zero vertex area)")
        self.vertex_areas = va
        self.vertex_areas.setflags(write=False)

        self._check_edges()

    def _check_edges(self):
        f = self.faces
        halfedges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        keys = halfedges[:, 0] * len(self.vertices) + halfedges[:, 1]
        uniq, counts = np.unique(keys, return_counts=True)
        if (counts > 1).any():
            k = int(uniq[np.argmax(counts)])
            a, b = divmod(k, len(self.vertices))
            raise MeshError(
                f"edge ({a}, {b}) traversed twice in the same direction; "
                "mesh is non-manifold or inconsistently oriented"
            )
        lo = np.minimum(halfedges[:, 0], halfedges[:, 1])
        hi = np.maximum(halfedges[:, 0], halfedges[:, 1])
        ukeys, ucounts = np.unique(lo * len(self.vertices) + hi, return_counts=True)
        if (ucounts > 2).any():
            k = int(ukeys[np.argmax(ucounts)])
            a, b = divmod(k, len(self.vertices))
            raise MeshError(f"edge ({a}, {b}) shared by more than two faces")
        self._boundary_edge_keys = ukeys[ucounts == 1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    def boundary_vertices(self) -> np.ndarray:
        """Indices of vertices lying on a boundary edge, sorted ascending."""
        if len(self._boundary_edge_keys) == 0:
            return np.empty(0, dtype=np.int64)
        a, b = np.divmod(self._boundary_edge_keys, self.n_vertices)
        return np.unique(np.concatenate([a, b]))

    def edges(self) -> np.ndarray:
        """Undirected edges as an (n_edges, 2) index array, each sorted."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)


@dataclass(frozen=True)
class MeshOperators:
    """First-order operators for a fixed mesh.

    Attributes
    ----------
    mesh : TriangleMesh
    gradient : scipy.sparse.csr_matrix, shape (3 * n_faces, n_vertices)
        Rows 3f..3f+2 hold the ambient components of the gradient of the
        hat function of each vertex restricted to face f; applying it to
        vertex values yields the constant per-face gradient vectors.
    face_areas3 : (3 * n_faces,) array
        Face areas repeated per component; the diagonal of the face mass.
    vertex_areas : (n_vertices,) array
        Barycentric vertex areas; the diagonal of the vertex mass.
    stiffness : scipy.sparse.csr_matrix, shape (n_vertices, n_vertices)
        gradient^T diag(face_areas3) gradient; the FEM Laplacian.
    """

    mesh: TriangleMesh
    gradient: sparse.csr_matrix
    face_areas3: np.ndarray
    vertex_areas: np.ndarray
    stiffness: sparse.csr_matrix

    def apply_gradient(self, values: np.ndarray) -> np.ndarray:
        """Per-face gradient vectors of vertex values.

        Accepts values of shape (n_vertices,) or (..., n_vertices) and
        returns (n_faces, 3) or (..., n_faces, 3).
        """
        flat = np.atleast_2d(values)
        out = (self.gradient @ flat.reshape(-1, flat.shape[-1]).T).T
        out = out.reshape(*values.shape[:-1], self.mesh.n_faces, 3)
        return out

    def gradient_adjoint(self, face_vectors: np.ndarray) -> np.ndarray:
        """Adjoint of ``apply_gradient`` with respect to raw coordinates.

        ``face_vectors`` has shape (..., n_faces, 3); the result has shape
        (..., n_vertices). Weighting by areas is the caller's business.
        """
        lead = face_vectors.shape[:-2]
        flat = face_vectors.reshape(-1, 3 * self.mesh.n_faces)
        out = (self.gradient.T @ flat.T).T
        return out.reshape(*lead, self.mesh.n_vertices)


def build_operators(mesh: TriangleMesh) -> MeshOperators:
    """Assemble gradient, mass and stiffness operators for ``mesh``."""
    v, f = mesh.vertices, mesh.faces
    nf = mesh.n_faces
    n = mesh.n_vertices
    normals = mesh.face_normals
    areas = mesh.face_areas

    # grad of the hat function at slot j equals normal x opposite edge / (2A),
    # where the opposite edge runs from slot j+1 to slot j+2 (CCW order).
    rows = np.empty((nf, 3, 3), dtype=np.int64)
    cols = np.empty((nf, 3, 3), dtype=np.int64)
    vals = np.empty((nf, 3, 3))
    for j in range(3):
        edge = v[f[:, (j + 2) % 3]] - v[f[:, (j + 1) % 3]]
        g = np.cross(normals, edge) / (2.0 * areas)[:, None]
        rows[:, j, :] = 3 * np.arange(nf)[:, None] + np.arange(3)[None, :]
        cols[:, j, :] = f[:, j, None]
        vals[:, j, :] = g
    gradient = sparse.csr_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * nf, n)
    )
    face_areas3 = np.repeat(areas, 3)
    stiffness = (gradient.T @ sparse.diags(face_areas3) @ gradient).tocsr()
    return MeshOperators(
        mesh=mesh,
        gradient=gradient,
        face_areas3=face_areas3,
        vertex_areas=mesh.vertex_areas.copy(),
        stiffness=stiffness,
    )


def average_to_faces(mesh: TriangleMesh, vertex_values: np.ndarray) -> np.ndarray:
    """Average vertex values to faces (arithmetic mean of the three corners).

    Works on any leading batch shape: (..., n_vertices) -> (..., n_faces).
    """
    return np.asarray(vertex_values)[..., mesh.faces].mean(axis=-1)


def density_mass(mesh: TriangleMesh, values: np.ndarray) -> float:
    """Total mass of vertex values under the vertex area weights."""
    return float(mesh.vertex_areas @ np.asarray(values, dtype=np.float64))


@dataclass(frozen=True)
class DensityField:
    """Nonnegative vertex density with unit weighted mass.

    The invariant sum_v |v| mu_v = 1 (within 1e-9) is checked on
    construction; use :meth:`normalized` to build one from unnormalized
    values.
    """

    mesh: TriangleMesh
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != (self.mesh.n_vertices,):
            raise DensityError(
                f"density shape {values.shape} does not match mesh "
                f"({self.mesh.n_vertices} vertices)"
            )
        if (values < 0.0).any():
            worst = int(np.argmin(values))
            raise DensityError(
                f"density has negative entry {values[worst]:.3e} at vertex {worst}"
            )
        mass = density_mass(self.mesh, values)
        if abs(mass - 1.0) > 1e-9:
            raise DensityError(f"density mass is {mass:.12f}, expected 1 within 1e-9")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def normalized(cls, mesh: TriangleMesh, values: np.ndarray) -> "DensityField":
        """Rescale nonnegative vertex values to unit mass and wrap them."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (mesh.n_vertices,):
            raise DensityError(
                f"density shape {values.shape} does not match mesh "
                f"({mesh.n_vertices} vertices)"
            )
        if (values < 0.0).any():
            worst = int(np.argmin(values))
            raise DensityError(
                f"density has negative entry {values[worst]:.3e} at vertex {worst}"
            )
        mass = density_mass(mesh, values)
        if mass <= 0.0 or not np.isfinite(mass):
            raise DensityError("density has zero or non-finite mass")
        return cls(mesh, values / mass)


def as_density(mesh: TriangleMesh, rho) -> np.ndarray:
    """Coerce a DensityField or raw array into validated density values."""
    if isinstance(rho, DensityField):
        if rho.mesh is not mesh:
            raise DensityError("density belongs to a different mesh")
        return rho.values
    return DensityField(mesh, np.asarray(rho, dtype=np.float64)).values


# ---------------------------------------------------------------------------
# File formats


def load_mesh(path) -> TriangleMesh:
    """Load a triangle mesh from an OFF or OBJ file.

    The format is chosen by extension (.off / .obj, case-insensitive).

    Raises
    ------
    MeshFormatError
        On unknown extension or malformed content.
    MeshError
        If the parsed mesh fails validity checks.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshFormatError(f"cannot read {path}: {exc}") from exc
    if suffix == ".off":
        vertices, faces = _parse_off(text, path.name)
    elif suffix == ".obj":
        vertices, faces = _parse_obj(text, path.name)
    else:
        raise MeshFormatError(f"unsupported mesh extension {suffix!r} (want .off or .obj)")
    return TriangleMesh(vertices, faces)


def _content_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _parse_off(text, name):
    lines = _content_lines(text)
    try:
        _, header = next(lines)
    except StopIteration:
        raise MeshFormatError(f"{name}: empty file") from None
    counts_tokens = None
    if header == "OFF":
        try:
            _, counts_line = next(lines)
        except StopIteration:
            raise MeshFormatError(f"{name}: missing element counts") from None
        counts_tokens = counts_line.split()
    elif header.startswith("OFF"):
        counts_tokens = header[3:].split()
    else:
        raise MeshFormatError(f"{name}: not an OFF file (header {header!r})")
    if len(counts_tokens) < 2:
        raise MeshFormatError(f"{name}: malformed OFF counts line")
    try:
        nv, nf = int(counts_tokens[0]), int(counts_tokens[1])
    except ValueError:
        raise MeshFormatError(f"{name}: malformed OFF counts line") from None

    vertices = np.empty((nv, 3))
    for i in range(nv):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshFormatError(f"{name}: expected {nv} vertices, file ended early") from None
        parts = line.split()
        if len(parts) < 3:
            raise MeshFormatError(f"{name}:{lineno}: vertex line needs 3 coordinates")
        try:
            vertices[i] = [float(parts[k]) for k in range(3)]
        except ValueError:
            raise MeshFormatError(f"{name}:{lineno}: bad vertex coordinate") from None

    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshFormatError(f"{name}: expected {nf} faces, file ended early") from None
        parts = line.split()
        try:
            arity = int(parts[0])
        except (ValueError, IndexError):
            raise MeshFormatError(f"{name}:{lineno}: bad face line") from None
        if arity != 3:
            raise MeshFormatError(f"{name}:{lineno}: only triangle faces are supported")
        if len(parts) < 4:
            raise MeshFormatError(f"{name}:{lineno}: face line needs 3 indices")
        try:
            faces[i] = [int(parts[k]) for k in (1, 2, 3)]
        except ValueError:
            raise MeshFormatError(f"{name}:{lineno}: bad face index") from None
    return vertices, faces


def _parse_obj(text, name):
    vertices = []
    faces = []
    for lineno, line in _content_lines(text):
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshFormatError(f"{name}:{lineno}: vertex line needs 3 coordinates")
            try:
                vertices.append([float(parts[k]) for k in (1, 2, 3)])
            except ValueError:
                raise MeshFormatError(f"{name}:{lineno}: bad vertex coordinate") from None
        elif tag == "f":
            refs = parts[1:]
            if len(refs) != 3:
                raise MeshFormatError(f"{name}:{lineno}: only triangle faces are supported")
            idx = []
            for ref in refs:
                head = ref.split("/", 1)[0]
                try:
                    k = int(head)
                except ValueError:
                    raise MeshFormatError(f"{name}:{lineno}: bad face index {ref!r}") from None
                if k == 0:
                    raise MeshFormatError(f"{name}:{lineno}: OBJ indices are 1-based")
                idx.append(k - 1 if k > 0 else len(vertices) + k)
            faces.append(idx)
        # all other directives (vn, vt, usemtl, o, g, s, mtllib) are ignored
    if not vertices or not faces:
        raise MeshFormatError(f"{name}: no triangles found")
    return np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def save_off(path, mesh: TriangleMesh) -> None:
    """Write a mesh as an ASCII OFF file."""
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for p in mesh.vertices:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for tri in mesh.faces:
            fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
