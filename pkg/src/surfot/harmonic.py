"""Dirichlet problem for maps from a surface into transport space.

A map assigns a density on the target surface to every vertex of a
parameter domain; the Dirichlet energy integrates the squared transport
metric of the map differential over the domain. The solver maximizes the
dual: a two-component potential per (domain face, target vertex), tangent
to the domain face, subject to a pointwise cone constraint tying its
weighted divergence over the domain to its squared gradient over the
target. Boundary densities enter only through a weak flux pairing at the
Dirichlet vertices; the cone constraint is enforced at every remaining
domain vertex, so non-Dirichlet boundary parts behave as zero-flux
(natural) boundary.

The splitting mirrors the geodesic solver: an exact block-elliptic solve
for the potential, independent cone projections per (domain vertex,
target vertex) pair, and multiplier ascent. The density multiplier is
the harmonic map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as dense_linalg
from scipy import sparse
from scipy.sparse.linalg import splu

from . import projection
from .geodesic import SolverConfig, update_penalty
from .mesh import MeshOperators, TriangleMesh, as_density, build_operators

__all__ = [
    "DomainMesh",
    "BoundaryData",
    "HarmonicResult",
    "solve_harmonic",
]


class DomainMesh:
    """Parameter domain of a harmonic map.

    Wraps a triangulated surface with boundary and fixes which boundary
    vertices carry Dirichlet data. By default that is every topological
    boundary vertex; passing a subset leaves the rest of the boundary
    natural (no flux crosses it), which is how a strip with prescribed
    ends and free sides is set up.

    Attributes
    ----------
    mesh : TriangleMesh
    dirichlet : (n_dirichlet,) int array
        Sorted vertex indices carrying boundary data.
    free : (n_free,) int array
        All remaining vertices; the cone constraint lives here.
    boundary_normals : (n_boundary, 3) array
        Outward unit normals per topological boundary vertex (aligned
        with ``mesh.boundary_vertices()``), length-weighted averages of
        the adjacent boundary edge normals rotated into the face plane.
    """

    def __init__(self, mesh: TriangleMesh, dirichlet=None):
        topo = mesh.boundary_vertices()
        if len(topo) == 0:
            raise ValueError("domain mesh has no boundary")
        if dirichlet is None:
            dirichlet = topo
        dirichlet = np.unique(np.asarray(dirichlet, dtype=np.int64))
        if len(dirichlet) == 0:
            raise ValueError("need at least one Dirichlet vertex")
        if not np.isin(dirichlet, topo).all():
            raise ValueError("Dirichlet vertices must lie on the mesh boundary")
        mask = np.zeros(mesh.n_vertices, dtype=bool)
        mask[dirichlet] = True
        free = np.flatnonzero(~mask)
        if len(free) == 0:
            raise ValueError("every vertex is Dirichlet; nothing to solve for")
        self.mesh = mesh
        self.dirichlet = dirichlet
        self.free = free
        self.boundary_normals = _outward_normals(mesh, topo)

    @property
    def n_dirichlet(self) -> int:
        return len(self.dirichlet)


def _outward_normals(mesh: TriangleMesh, topo: np.ndarray) -> np.ndarray:
    """Outward in-plane normals at the topological boundary vertices."""
    f = mesh.faces
    n = mesh.n_vertices
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    owner = np.concatenate([np.arange(len(f))] * 3)
    key = directed.min(axis=1) * n + directed.max(axis=1)
    ukeys, counts = np.unique(key, return_counts=True)
    on_boundary = np.isin(key, ukeys[counts == 1])
    edges = directed[on_boundary]
    owners = owner[on_boundary]

    # CCW faces traverse boundary edges with the interior on their left,
    # so edge direction crossed with the face normal points outward.
    vec = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    out = np.cross(vec, mesh.face_normals[owners])

    acc = np.zeros((n, 3))
    np.add.at(acc, edges[:, 0], out)
    np.add.at(acc, edges[:, 1], out)
    acc = acc[topo]
    norms = np.linalg.norm(acc, axis=1)
    good = norms > 1e-12
    acc[good] /= norms[good, None]
    return acc


class BoundaryData:
    """Dirichlet data: one target density per Dirichlet vertex.

    Rows of ``values`` follow the order of ``domain.dirichlet``. Every
    row is validated as a density on the target mesh.
    """

    def __init__(self, domain: DomainMesh, target: TriangleMesh, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (domain.n_dirichlet, target.n_vertices):
            raise ValueError(
                f"boundary data must have shape ({domain.n_dirichlet}, "
                f"{target.n_vertices}), got {values.shape}"
            )
        self.domain = domain
        self.target = target
        self.values = np.stack([as_density(target, row) for row in values])

    @classmethod
    def constant(cls, domain: DomainMesh, target: TriangleMesh, density):
        """Same density at every Dirichlet vertex."""
        row = as_density(target, density)
        return cls(domain, target, np.tile(row, (domain.n_dirichlet, 1)))

    @classmethod
    def from_map(cls, domain: DomainMesh, target: TriangleMesh, mapping):
        """Build from a dict of domain vertex index to density.

        Safer than passing a raw array because ``domain.dirichlet`` is
        kept sorted, which rarely matches the order the data was
        collected in. Every Dirichlet vertex must appear.
        """
        missing = [int(x) for x in domain.dirichlet if int(x) not in mapping]
        if missing:
            raise ValueError(f"no boundary density for vertices {missing}")
        extra = set(int(k) for k in mapping) - set(int(x) for x in domain.dirichlet)
        if extra:
            raise ValueError(f"densities given for non-Dirichlet vertices {sorted(extra)}")
        rows = np.stack([as_density(target, mapping[int(x)]) for x in domain.dirichlet])
        return cls(domain, target, rows)


@dataclass
class HarmonicResult:
    """Converged (or best-effort) state of a Dirichlet solve.

    ``densities`` holds one target density per domain vertex; Dirichlet
    rows echo the boundary data, the rest is the converged multiplier.
    ``momentum`` is the copy-averaged momentum per (domain face, target
    face): a (2, 3) block of domain tangent coefficients by target
    ambient components. ``energy`` is the Dirichlet energy of the map
    reconstructed from multiplier and momentum; matching
    ``dual_objective`` is the optimality certificate.
    """

    densities: np.ndarray
    momentum: np.ndarray
    energy: float
    dual_objective: float
    objective_history: np.ndarray
    iterations: int
    converged: bool
    primal_residuals: np.ndarray
    dual_residuals: np.ndarray
    penalty_history: np.ndarray
    config: SolverConfig

    @property
    def duality_gap(self) -> float:
        """|energy - dual| / max(|dual|, 1e-12)."""
        return abs(self.energy - self.dual_objective) / max(
            abs(self.dual_objective), 1e-12
        )


def _tangent_frames(mesh: TriangleMesh) -> np.ndarray:
    """Orthonormal in-plane basis pairs, shape (n_faces, 2, 3)."""
    p = mesh.vertices[mesh.faces]
    e = p[:, 1] - p[:, 0]
    t1 = e / np.linalg.norm(e, axis=1)[:, None]
    t2 = np.cross(mesh.face_normals, t1)
    return np.stack([t1, t2], axis=1)


class _DomainOperator:
    """Exact solver for the potential block system.

    The operator is r * (K (x) target-vertex-mass + F (x) target
    stiffness), where K is the weighted divergence normal matrix over
    the free domain vertices, in per-face tangent coordinates, and F is
    the diagonal of domain face areas (doubled per tangent coefficient).
    A generalized eigendecomposition of (K, F) splits the system into a
    target-space solve per domain mode; singular modes (divergence-free
    fields) keep only the stiffness and are solved on the mean-zero
    complement through a shared bordered factorization.
    """

    def __init__(self, domain: DomainMesh, domain_ops: MeshOperators,
                 target_ops: MeshOperators):
        mesh = domain.mesh
        nt2 = 2 * mesh.n_faces
        frames = _tangent_frames(mesh)
        grad = domain_ops.gradient.toarray().reshape(mesh.n_faces, 3, mesh.n_vertices)
        s = np.einsum("fcd,fdx->fcx", frames, grad)
        s *= mesh.face_areas[:, None, None]
        self.s_flat = s.reshape(nt2, mesh.n_vertices)
        self.s_free = np.ascontiguousarray(self.s_flat[:, domain.free])
        self.s_dir = np.ascontiguousarray(self.s_flat[:, domain.dirichlet])

        xa_free = mesh.vertex_areas[domain.free]
        k = (self.s_free / xa_free[None, :]) @ self.s_free.T
        f2 = np.repeat(mesh.face_areas, 2)
        w, u = dense_linalg.eigh(k, np.diag(f2))
        self._u = u
        self._modes = w
        self._k = k
        self._f2 = f2

        va = target_ops.vertex_areas
        stiff = target_ops.stiffness
        self._va = va
        self._stiff = stiff
        cut = 1e-9 * max(abs(w[0]), abs(w[-1]), 1.0)
        plain = {}
        bordered = None
        self._factors = []
        for wk in w:
            if abs(wk) <= cut:
                if bordered is None:
                    mat = sparse.bmat(
                        [[stiff, va[:, None]], [va[None, :], None]], format="csc"
                    )
                    bordered = splu(mat)
                self._factors.append(("bordered", bordered))
            else:
                key = round(math.log(wk) * 1e12)
                if key not in plain:
                    mat = (wk * sparse.diags(va) + stiff).tocsc()
                    plain[key] = splu(mat)
                self._factors.append(("plain", plain[key]))

    def solve(self, rhs: np.ndarray, r: float) -> np.ndarray:
        """Solve r * operator(phi) = rhs; rhs has shape (2 n_faces, n_target)."""
        modes_rhs = self._u.T @ rhs
        psi = np.empty_like(modes_rhs)
        for k, (kind, lu) in enumerate(self._factors):
            if kind == "plain":
                psi[k] = lu.solve(modes_rhs[k])
            else:
                ext = np.append(modes_rhs[k], 0.0)
                psi[k] = lu.solve(ext)[:-1]
        return (self._u @ psi) / r

    def apply(self, phi_flat: np.ndarray) -> np.ndarray:
        """Un-penalized operator action on a (2 n_faces, n_target) block."""
        out = (self._k @ phi_flat) * self._va[None, :]
        out += self._f2[:, None] * (phi_flat @ self._stiff.T)
        return out


class _HarmonicKernel:
    """Workspace for the per-pair cone projections of the Dirichlet solver.

    Couples every free domain vertex with every target vertex. The
    momentum block is duplicated per (domain corner slot, target corner
    slot) with weight |F| |f| / 9 per copy, which makes the multipliers
    physical momenta and gives every copy of a pair the same shrink
    factor 1 / (2 |x| |v|).
    """

    def __init__(self, domain: DomainMesh, target: TriangleMesh):
        dm = domain.mesh
        self.free = domain.free
        no, nto = dm.n_vertices, dm.n_faces
        nv, ntm = target.n_vertices, target.n_faces

        ones_o = np.ones(3 * nto)
        self.inc_o = sparse.coo_matrix(
            (ones_o, (dm.faces.ravel(), np.arange(3 * nto))), shape=(no, 3 * nto)
        ).tocsr()
        ones_m = np.ones(3 * ntm)
        self.inc_m = sparse.coo_matrix(
            (ones_m, (target.faces.ravel(), np.arange(3 * ntm))), shape=(nv, 3 * ntm)
        ).tocsr()
        self.inc_o_free = self.inc_o[domain.free]

        self.fa_o = dm.face_areas
        self.fa_m = target.face_areas
        self.xa_free = dm.vertex_areas[domain.free]
        self.va = target.vertex_areas
        # shrink = 1 / (1 + gamma / (2|x||v|)); same coefficient scales
        # the linear term of the projection cubic.
        self.itw = 1.0 / (2.0 * np.outer(self.xa_free, self.va))
        self.wa = np.outer(self.xa_free, self.va)
        self.n_free = len(domain.free)
        self.shape_full = (no, nv)

    def sweep(self, div, gphi, mu, m, r, max_iter, tol):
        """Project all pairs; update ``mu`` and ``m`` in place.

        ``div`` is the weighted divergence at free vertices, ``gphi`` the
        target-face gradients of the potential, shape (n_dom_faces, 2,
        n_target_faces, 3). Returns the projected slack, collapsed
        momentum sums and the primal residual pieces.
        """
        gb = gphi.transpose(0, 2, 1, 3)
        btil = m / r
        btil += gb[:, None, :, None, :, :]

        sq = (btil * btil).sum(axis=(4, 5))
        sq *= self.fa_o[:, None, None, None]
        sq *= self.fa_m[None, None, :, None]
        flat = sq.reshape(3 * sq.shape[0], 3 * sq.shape[2])
        q_t = self.inc_o_free @ flat
        q_t = (self.inc_m @ q_t.T).T
        q_t *= self.itw / 9.0

        a_t = div + mu / r
        gamma, n_fallback = projection.solve_gamma(
            a_t.ravel(), q_t.ravel(), self.itw.ravel(), self.itw.ravel(),
            max_iter, tol,
        )
        gamma = gamma.reshape(a_t.shape)

        a = a_t - gamma * self.itw
        slack_a = a - div
        primal_a_sq = float((self.wa * slack_a * slack_a).sum())
        mu -= r * slack_a

        shrink = np.ones(self.shape_full)
        shrink[self.free] = 1.0 / (1.0 + gamma * self.itw)
        tmp = self.inc_o.T @ shrink
        sh = (self.inc_m.T @ tmp.T).T
        sh = sh.reshape(btil.shape[0], 3, btil.shape[2], 3)

        btil *= 1.0 - sh[..., None, None]
        # btil now equals m / r minus the momentum slack B - grad copies,
        # so the multiplier update is a pure rescale of it.
        slack_b = m / r - btil
        w_b = (slack_b * slack_b).sum(axis=(4, 5))
        w_b *= self.fa_o[:, None, None, None]
        w_b *= self.fa_m[None, None, :, None]
        primal_b_sq = float(w_b.sum()) / 9.0

        m[...] = r * btil
        msum = m.sum(axis=(1, 3))
        bsum = slack_b.sum(axis=(1, 3))
        bsum += 9.0 * gb
        return {
            "a": a,
            "msum": msum,
            "bsum": bsum,
            "primal_a_sq": primal_a_sq,
            "primal_b_sq": primal_b_sq,
            "n_fallback": n_fallback,
        }


def _harmonic_extension(domain: DomainMesh, domain_ops: MeshOperators,
                        data: BoundaryData) -> np.ndarray:
    """Domain-harmonic interpolation of the boundary rows at the free
    vertices. Unit mass per row by linearity. Used to seed the density
    multiplier: when every cone constraint stays slack (constant data)
    the multiplier never moves, so the seed must already be the map.
    """
    stiff = domain_ops.stiffness.tocsr()
    ff = stiff[domain.free][:, domain.free].tocsc()
    fd = stiff[domain.free][:, domain.dirichlet]
    return splu(ff).solve(-(fd @ data.values))


def _collapse_rhs(target_ops: MeshOperators, fa_o: np.ndarray,
                  collapsed: np.ndarray) -> np.ndarray:
    """Momentum block of the potential right-hand side.

    ``collapsed`` is the slot-collapsed momentum data per (domain face,
    target face, tangent coefficient, component); the result pairs it
    with the target gradient and weighs by |F| / 9.
    """
    y = collapsed.transpose(0, 2, 1, 3) * target_ops.mesh.face_areas[None, None, :, None]
    out = target_ops.gradient_adjoint(y)
    out *= fa_o[:, None, None] / 9.0
    return out.reshape(2 * len(fa_o), -1)


def solve_harmonic(
    domain: DomainMesh,
    target: TriangleMesh,
    target_ops: MeshOperators,
    data: BoundaryData,
    config: SolverConfig | None = None,
) -> HarmonicResult:
    """Harmonic map from ``domain`` into densities on ``target``.

    Maximizes the weak boundary-flux pairing with the Dirichlet data
    over potentials obeying the pointwise cone constraint, by the same
    splitting as the geodesic solver. ``config.time_steps`` is unused
    here; a congestion penalty is not defined for this problem and
    ``config.alpha`` must stay 0.

    Returns
    -------
    HarmonicResult
        Map, momentum, energy and convergence diagnostics. The result
        is flagged non-converged when the iteration cap is hit.
    """
    config = config or SolverConfig()
    if config.alpha != 0.0:
        raise ValueError("congestion is not defined for the Dirichlet problem")
    if data.domain is not domain or data.target is not target:
        raise ValueError("boundary data was built for a different domain or target")

    dmesh = domain.mesh
    domain_ops = build_operators(dmesh)
    op = _DomainOperator(domain, domain_ops, target_ops)
    kernel = _HarmonicKernel(domain, target)

    nv, ntm = target.n_vertices, target.n_faces
    nto = dmesh.n_faces
    n_free = len(domain.free)
    va = target_ops.vertex_areas
    xa_free = dmesh.vertex_areas[domain.free]

    mubar_w = data.values * va[None, :]
    rhs_data = op.s_dir @ mubar_w

    r = config.penalty
    if r is None:
        r = 1.0 / (dmesh.total_area * target.total_area)

    mu = _harmonic_extension(domain, domain_ops, data)
    m = np.zeros((nto, 3, ntm, 3, 2, 3))
    a_prev = np.zeros((n_free, nv))
    bsum_prev = np.zeros((nto, ntm, 2, 3))
    out = None
    phi_flat = np.zeros((2 * nto, nv))

    primal_hist: list[float] = []
    dual_hist: list[float] = []
    obj_hist: list[float] = []
    r_hist: list[float] = []
    converged = False
    iterations = 0

    for iterations in range(1, config.max_iters + 1):
        if out is None:
            vec_a = mu.copy()
            collapsed = np.zeros((nto, ntm, 2, 3))
        else:
            vec_a = mu - r * out["a"]
            collapsed = out["msum"] - r * out["bsum"]
        rhs = rhs_data + (op.s_free @ vec_a) * va[None, :]
        rhs -= _collapse_rhs(target_ops, dmesh.face_areas, collapsed)
        phi_flat = op.solve(rhs, r)

        div = -(op.s_free.T @ phi_flat) / xa_free[:, None]
        phi = phi_flat.reshape(nto, 2, nv)
        gphi = target_ops.apply_gradient(phi)
        out = kernel.sweep(
            div, gphi, mu, m, r, config.newton_max_iter, config.newton_tol
        )
        primal_sq = out["primal_a_sq"] + out["primal_b_sq"]

        delta = -(op.s_free @ (out["a"] - a_prev)) * va[None, :]
        delta += _collapse_rhs(
            target_ops, dmesh.face_areas, out["bsum"] - bsum_prev
        )
        delta *= r
        dual_sq = float(
            (delta.reshape(nto, 2, nv) ** 2
             / dmesh.face_areas[:, None, None] / va[None, None, :]).sum()
        )

        primal = math.sqrt(primal_sq)
        dual = math.sqrt(dual_sq)
        primal_hist.append(primal)
        dual_hist.append(dual)
        obj_hist.append(float((op.s_dir.T @ phi_flat * mubar_w).sum()))
        r_hist.append(r)
        a_prev = out["a"].copy()
        bsum_prev = out["bsum"].copy()

        if primal < config.tol and dual < config.tol:
            converged = True
            break
        if config.adapt_penalty:
            r = update_penalty(r, primal, dual, config.adapt_ratio, config.adapt_factor)

    densities = np.empty((dmesh.n_vertices, nv))
    densities[domain.free] = mu
    densities[domain.dirichlet] = data.values
    momentum = m.mean(axis=(1, 3))
    energy = _dirichlet_energy(kernel, densities, momentum)
    dual_obj = float((op.s_dir.T @ phi_flat * mubar_w).sum())

    return HarmonicResult(
        densities=densities,
        momentum=momentum,
        energy=energy,
        dual_objective=dual_obj,
        objective_history=np.asarray(obj_hist),
        iterations=iterations,
        converged=converged,
        primal_residuals=np.asarray(primal_hist),
        dual_residuals=np.asarray(dual_hist),
        penalty_history=np.asarray(r_hist),
        config=config,
    )


def _dirichlet_energy(kernel: _HarmonicKernel, densities: np.ndarray,
                      momentum: np.ndarray) -> float:
    """Kinetic-form Dirichlet energy of a (density, momentum) pair.

    Densities are averaged onto (domain face, target face) pairs; pairs
    carrying no mass contribute nothing.
    """
    pairs = kernel.inc_o.T @ densities
    pairs = (kernel.inc_m.T @ pairs.T).T
    # inc matrices scatter per corner slot; summing slots triples each
    # face, hence the 1/9 for the nine (slot, slot) combinations.
    mu_hat = pairs.reshape(momentum.shape[0], 3, momentum.shape[1], 3).sum(
        axis=(1, 3)
    ) / 9.0
    msq = (momentum * momentum).sum(axis=(2, 3))
    msq *= kernel.fa_o[:, None] * kernel.fa_m[None, :]
    mask = mu_hat > 1e-12 * max(float(mu_hat.max()), 1e-300)
    return 0.5 * float((msq[mask] / mu_hat[mask]).sum())
