"""Wasserstein geodesics on triangulated surfaces by operator splitting.

The solver maximizes the dual of the kinetic-energy transport problem: a
potential on the staggered time grid is updated by an exact space-time
elliptic solve, the constraint slacks are updated by independent pointwise
cone projections, and the multipliers (which converge to the interpolating
density and momentum) follow a gradient ascent step. An optional quadratic
congestion penalty is folded into the projection step.

Conventions: the kinetic cost is (1/2)|velocity|^2, so the squared distance
between two unit-mass densities equals the converged dual objective and the
distance between deltas at geodesic distance d is d/sqrt(2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as dense_linalg
from scipy import sparse
from scipy.sparse.linalg import splu

from . import projection
from .mesh import MeshOperators, TriangleMesh, as_density, average_to_faces
from .timegrid import TimeGrid

__all__ = [
    "SolverConfig",
    "GeodesicResult",
    "SplitState",
    "PotentialSolver",
    "solve_geodesic",
    "phi_update",
    "pointwise_projection",
    "dual_update",
    "compute_residuals",
    "update_penalty",
    "evaluate_action",
    "reconstruct_velocity",
    "tangent_norm",
]


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the splitting solver.

    Attributes
    ----------
    time_steps : int
        Number of centered time intervals N.
    penalty : float or None
        Initial quadratic penalty; ``None`` picks 1 / total surface area,
        which makes iteration behaviour insensitive to a global rescaling
        of the mesh.
    tol : float
        Residual threshold; the run stops when both the primal and the
        dual residual drop below it.
    max_iters : int
        Iteration cap; hitting it flags the result as non-converged.
    alpha : float
        Congestion strength (0 disables the penalty; the code path is
        identical).
    adapt_penalty : bool
        Enable the factor-2 penalty rule with a factor-10 deadband.
    newton_max_iter, newton_tol :
        Controls for the projection root solve; past the cap a bracketed
        bisection finishes the job.
    """

    time_steps: int = 15
    penalty: float | None = None
    tol: float = 1e-4
    max_iters: int = 5000
    alpha: float = 0.0
    adapt_penalty: bool = True
    adapt_ratio: float = 10.0
    adapt_factor: float = 2.0
    newton_max_iter: int = 50
    newton_tol: float = 1e-12

    def __post_init__(self):
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if self.penalty is not None and not self.penalty > 0:
            raise ValueError("penalty must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.adapt_ratio <= 1 or self.adapt_factor <= 1:
            raise ValueError("adaptation constants must exceed 1")


@dataclass(frozen=True)
class SplitState:
    """Constraint-slack block: scalar slack, momentum copies, free endpoint.

    ``a`` has shape (N, n_vertices) and holds the scalar slack (with the
    congestion slack already added when alpha > 0). ``b`` has shape
    (N, 2, n_faces, 3, 3): centered interval, staggered side, face, vertex
    slot, component. ``eta`` (n_vertices,) is only present for flow steps
    with a free terminal density.
    """

    a: np.ndarray
    b: np.ndarray
    eta: np.ndarray | None = None


@dataclass
class GeodesicResult:
    """Converged (or best-effort) state of a geodesic solve.

    ``mu`` rows live on the centered grid; ``momentum`` is the raw
    multiplier with duplicated entries, ``face_momentum`` its per-face
    average. ``distance`` is the square root of ``dual_objective``;
    ``primal_action`` is the kinetic energy of the reconstructed velocity
    field and agreement of the two is the optimality certificate.
    """

    mu: np.ndarray
    phi: np.ndarray
    momentum: np.ndarray
    face_momentum: np.ndarray
    distance: float
    dual_objective: float
    primal_action: float
    iterations: int
    converged: bool
    primal_residuals: np.ndarray
    dual_residuals: np.ndarray
    penalty_history: np.ndarray
    config: SolverConfig

    @property
    def duality_gap(self) -> float:
        """|action - dual| / max(dual, 1e-12)."""
        return abs(self.primal_action - self.dual_objective) / max(
            self.dual_objective, 1e-12
        )


class PotentialSolver:
    """Exact solver for the potential update.

    The space-time operator is r * (T1 (x) vertex-mass + 0.5 * C (x)
    stiffness), where T1 couples staggered time nodes through the squared
    difference matrix (plus a terminal identity row for flow steps) and C
    is the diagonal count of centered intervals per staggered node. A
    generalized eigendecomposition of the small pencil (T1, C) decouples
    the system into independent spatial solves, each factored once. The
    penalty r only scales the solution, so penalty adaptation never
    triggers refactorization.
    """

    def __init__(self, ops: MeshOperators, grid: TimeGrid, terminal: bool = False):
        self.ops = ops
        self.grid = grid
        self.terminal = terminal
        n = grid.n_steps

        d = grid.difference_matrix()
        t1 = d.T @ d
        if terminal:
            t1[n, n] += float(n)
        c = grid.staggered_multiplicity()
        self._t1 = t1
        self._c = c
        w, u = dense_linalg.eigh(t1, np.diag(c))
        self._modes = w
        self._u = u

        va = ops.vertex_areas
        stiff = 0.5 * ops.stiffness
        cut = 1e-9 * max(abs(w[0]), abs(w[-1]), 1.0)
        self._factors = []
        for wk in w:
            if abs(wk) <= cut:
                if terminal:
                    raise RuntimeError("unexpected singular mode in terminal solve")
                nv = ops.mesh.n_vertices
                bordered = sparse.bmat(
                    [[stiff, va[:, None]], [va[None, :], None]], format="csc"
                )
                self._factors.append(("bordered", splu(bordered)))
            else:
                mat = (wk * sparse.diags(va) + stiff).tocsc()
                self._factors.append(("plain", splu(mat)))

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """Apply the (un-penalized) space-time operator to a potential."""
        out = self._t1 @ (phi * self.ops.vertex_areas[None, :])
        out += 0.5 * self._c[:, None] * (phi @ self.ops.stiffness.T)
        return out

    def solve(self, rhs: np.ndarray, r: float) -> np.ndarray:
        """Solve r * operator(phi) = rhs for phi.

        For the geodesic pencil the operator kernel is the global constant;
        the singular time mode is solved on the weighted-mean-zero
        complement through a bordered system and the returned potential is
        shifted to zero space-time weighted mean, making the representative
        unique and deterministic.
        """
        modes_rhs = self._u.T @ rhs
        psi = np.empty_like(modes_rhs)
        for k, (kind, lu) in enumerate(self._factors):
            if kind == "plain":
                psi[k] = lu.solve(modes_rhs[k])
            else:
                ext = np.append(modes_rhs[k], 0.0)
                psi[k] = lu.solve(ext)[:-1]
        phi = (self._u @ psi) / r
        if not self.terminal:
            va = self.ops.vertex_areas
            cells = self.grid.dual_cell_lengths()
            mean = float(cells @ (phi @ va)) / (va.sum() * cells.sum())
            phi -= mean
        return phi


def phi_update(solver: PotentialSolver, rhs: np.ndarray, r: float) -> np.ndarray:
    """Potential update step: exact solve of the penalized elliptic system."""
    return solver.solve(rhs, r)


def _assemble_rhs(ops, grid, vec_a, collapsed, row0, rown):
    """Right-hand side of the potential system (independent of the penalty).

    ``vec_a`` = mu - r (A + lambda) on the centered grid, ``collapsed`` =
    slot-collapsed (m - r B) per (interval, side, face, component); the
    boundary rows carry the endpoint data.
    """
    va = ops.vertex_areas
    rhs = -grid.diff_adjoint(vec_a * va[None, :])
    acc = np.zeros((grid.n_steps + 1, ops.mesh.n_faces, 3))
    acc[:-1] += collapsed[:, 0]
    acc[1:] += collapsed[:, 1]
    acc *= ops.mesh.face_areas[None, :, None]
    rhs -= ops.gradient_adjoint(acc) / 6.0
    rhs[0] -= grid.n_steps * va * row0
    rhs[-1] += grid.n_steps * rown
    return rhs


def pointwise_projection(
    a_target,
    b_targets,
    vertex_area,
    face_areas,
    alpha_r: float = 0.0,
    max_iter: int = 50,
    tol: float = 1e-12,
):
    """Project one constraint point onto the pointwise kinetic-energy cone.

    Minimizes w_a (A - a_target)^2 + sum_k (|f_k|/6) |B_k - b_k|^2 subject
    to A + sum_k |f_k| |B_k|^2 / (12 |v|) <= 0, where w_a = |v| / (1 +
    alpha_r) folds in an optional congestion penalty (alpha_r = congestion
    weight times penalty). Feasible targets are returned unchanged; else
    the active-constraint multiplier solves a scalar cubic by Newton with
    a bisection fallback.

    Parameters
    ----------
    a_target : float
    b_targets : (n_copies, 3) array
        One row per duplicated momentum copy (both staggered sides of all
        incident faces).
    vertex_area : float
    face_areas : (n_copies,) array
        Face area per copy.

    Returns
    -------
    a, b, lam, gamma : float, (n_copies, 3) array, float, float
        Projected values, the congestion slack (0 when alpha_r = 0) and
        the KKT multiplier of the cone constraint.
    """
    b_targets = np.atleast_2d(np.asarray(b_targets, dtype=np.float64))
    face_areas = np.asarray(face_areas, dtype=np.float64)
    q = float(face_areas @ (b_targets * b_targets).sum(axis=1)) / (12.0 * vertex_area)
    inv_two_wa = (1.0 + alpha_r) / (2.0 * vertex_area)
    rho = 1.0 / (2.0 * vertex_area)
    gamma_arr, _ = projection.solve_gamma(
        np.array([a_target]),
        np.array([q]),
        np.array([inv_two_wa]),
        np.array([rho]),
        max_iter,
        tol,
    )
    gamma = float(gamma_arr[0])
    a = a_target - gamma * inv_two_wa
    lam = (alpha_r / (1.0 + alpha_r)) * (a_target - a)
    b = b_targets / (1.0 + rho * gamma)
    return a, b, lam, gamma


def dual_update(mu, m, a, b, dphi, gphi_sides, r):
    """Multiplier ascent: mu <- mu - r (A - D phi), m <- m - r (B - G phi).

    ``gphi_sides`` holds the staggered gradient duplicated per side with
    the same shape as ``b``. Multipliers are stored in physical units
    (density and momentum); under the penalty-scaled change of variables
    this storage convention is exactly what keeps them consistent when the
    penalty changes, so no explicit rescaling accompanies penalty updates.
    """
    return mu - r * (a - dphi), m - r * (b - gphi_sides)


def update_penalty(r, primal, dual, ratio: float = 10.0, factor: float = 2.0):
    """Deadband penalty rule: grow r when the primal residual dominates.

    If primal > ratio * dual the penalty doubles; if dual > ratio * primal
    it halves; otherwise unchanged. Stored multipliers need no adjustment
    (see :func:`dual_update`).
    """
    if primal > ratio * dual:
        return r * factor
    if dual > ratio * primal:
        return r / factor
    return r


def compute_residuals(ops, grid, phi, state: SplitState, prev: SplitState, r):
    """Weighted primal and dual residual norms of the splitting.

    The primal residual is the constraint violation q - (map of phi) in
    the tau- and area-weighted norm the solver optimizes in; the dual
    residual is r times the adjoint image of the slack change q - q_prev,
    measured in the matching dual norm on potential space.
    """
    va = ops.vertex_areas
    fa = ops.mesh.face_areas
    tau = grid.tau

    dphi = grid.diff(phi)
    gphi = ops.apply_gradient(phi)
    ra = state.a - dphi
    primal_sq = tau * float(va @ (ra * ra).sum(axis=0))
    rb = state.b.copy()
    rb[:, 0] -= gphi[:-1, :, None, :]
    rb[:, 1] -= gphi[1:, :, None, :]
    w_b = (rb * rb).sum(axis=-1).sum(axis=(0, 1, 3))
    primal_sq += tau / 6.0 * float(fa @ w_b)
    if state.eta is not None:
        slack = phi[-1] - state.eta
        primal_sq += float(va @ (slack * slack))

    delta = tau * grid.diff_adjoint((state.a - prev.a) * va[None, :])
    db = (state.b - prev.b).sum(axis=3)
    acc = np.zeros((grid.n_steps + 1, ops.mesh.n_faces, 3))
    acc[:-1] += db[:, 0]
    acc[1:] += db[:, 1]
    acc *= fa[None, :, None]
    delta += tau / 6.0 * ops.gradient_adjoint(acc)
    if state.eta is not None:
        delta[-1] += va * (state.eta - prev.eta)
    delta *= r
    cells = grid.dual_cell_lengths()
    dual_sq = float(((delta * delta) / va[None, :] / cells[:, None]).sum())
    return math.sqrt(primal_sq), math.sqrt(dual_sq)


def reconstruct_velocity(mesh: TriangleMesh, momentum, mu_curve, threshold: float = 1e-8):
    """Per-face velocity v = momentum / face-averaged density.

    ``momentum`` is either the raw multiplier with duplicated copies
    (N, 2, nT, 3, 3), which is averaged per face first, or an already
    averaged (N, nT, 3) field. Faces whose averaged density falls below
    ``threshold / |f|`` are treated as vacuum and get zero velocity.
    """
    momentum = np.asarray(momentum, dtype=np.float64)
    if momentum.ndim == 5:
        momentum = momentum.mean(axis=(1, 3))
    mu_hat = average_to_faces(mesh, np.asarray(mu_curve))
    vacuum = mu_hat < threshold / mesh.face_areas[None, :]
    safe = np.where(vacuum, 1.0, mu_hat)
    vel = momentum / safe[:, :, None]
    vel[vacuum] = 0.0
    return vel


def evaluate_action(mesh: TriangleMesh, mu_curve, momentum, threshold: float = 1e-8):
    """Kinetic energy sum_t tau sum_f (1/2) |v_f|^2 |f| mu_hat_f.

    Velocities are reconstructed per :func:`reconstruct_velocity`; the
    value is the primal certificate reported next to the dual objective.
    """
    mu_curve = np.asarray(mu_curve)
    n_steps = mu_curve.shape[0]
    vel = reconstruct_velocity(mesh, momentum, mu_curve, threshold)
    mu_hat = average_to_faces(mesh, mu_curve)
    dens = 0.5 * (vel * vel).sum(axis=-1) * mu_hat
    return float((dens @ mesh.face_areas).sum()) / n_steps


def tangent_norm(mesh: TriangleMesh, ops: MeshOperators, mu, delta_mu) -> float:
    """Squared tangent-space magnitude of a density perturbation.

    Solves the weighted elliptic system (G^T M_T diag(mu_hat) G) phi =
    -(vertex areas) * delta_mu on the mean-zero complement and returns
    (1/2) sum_f |f| mu_hat_f |(G phi)_f|^2, the quadratic form of the
    Riemannian metric the geodesic solver discretizes. Consistency:
    sqrt of this value approximates distance(mu, mu + eps delta) / eps.

    Raises
    ------
    ValueError
        If mu has a nonpositive entry or delta_mu has nonzero weighted
        mean (beyond 1e-10).
    """
    mu = as_density(mesh, mu)
    if (mu <= 0).any():
        raise ValueError("tangent norm needs a strictly positive density")
    delta_mu = np.asarray(delta_mu, dtype=np.float64)
    va = ops.vertex_areas
    if abs(float(va @ delta_mu)) > 1e-10:
        raise ValueError("delta_mu must have zero weighted mean")
    mu_hat = average_to_faces(mesh, mu)
    weights = np.repeat(mesh.face_areas * mu_hat, 3)
    mat = (ops.gradient.T @ sparse.diags(weights) @ ops.gradient).tocsr()
    bordered = sparse.bmat([[mat, va[:, None]], [va[None, :], None]], format="csc")
    sol = splu(bordered).solve(np.append(-va * delta_mu, 0.0))
    phi = sol[:-1]
    return 0.5 * float(phi @ (mat @ phi))


class _FixedEndpoint:
    """Classic geodesic: the terminal density is prescribed."""

    def __init__(self, mu1):
        self.mu1 = mu1


def _solve_transport(
    ops: MeshOperators,
    grid: TimeGrid,
    mu0: np.ndarray,
    endpoint,
    config: SolverConfig,
):
    """Shared splitting loop for geodesics and free-endpoint flow steps.

    ``endpoint`` is either a :class:`_FixedEndpoint` or an object with
    ``prox(z, r) -> w`` (pointwise minimizer of conj(w) - nu w + (r/2)
    (w + phi_end)^2 over w, vectorized per vertex) for the conjugate of
    the terminal functional. Returns the raw solver state.
    """
    mesh = ops.mesh
    nv, nt, n = mesh.n_vertices, mesh.n_faces, grid.n_steps
    tau = grid.tau
    fixed = isinstance(endpoint, _FixedEndpoint)

    solver = PotentialSolver(ops, grid, terminal=not fixed)
    kernel = projection.GeodesicKernel(
        mesh.faces, mesh.face_areas, ops.vertex_areas
    )
    r = config.penalty if config.penalty is not None else 1.0 / mesh.total_area
    va = ops.vertex_areas

    mu = np.zeros((n, nv))
    m = np.zeros((n, 2, nt, 3, 3))
    alam = np.zeros((n, nv))
    alam_prev = np.zeros((n, nv))
    bsum_prev = np.zeros((n, 2, nt, 3))
    if fixed:
        eta = nu = eta_prev = None
    else:
        eta = np.zeros(nv)
        eta_prev = np.zeros(nv)
        nu = mu0.copy()

    cells = grid.dual_cell_lengths()
    primal_hist: list[float] = []
    dual_hist: list[float] = []
    r_hist: list[float] = []
    phi = np.zeros((n + 1, nv))
    out = None
    converged = False
    iterations = 0

    for iterations in range(1, config.max_iters + 1):
        if out is None:
            vec_a = mu.copy()
            collapsed = m.sum(axis=3)
        else:
            vec_a = mu - r * alam
            collapsed = out["msum"] - r * out["bsum"]
        if fixed:
            rown = va * endpoint.mu1
        else:
            rown = va * (nu + r * eta)
        rhs = _assemble_rhs(ops, grid, vec_a, collapsed, mu0, rown)
        phi = solver.solve(rhs, r)

        dphi = grid.diff(phi)
        gphi = ops.apply_gradient(phi)
        out = kernel.sweep(
            dphi, gphi, mu, m, r, config.alpha, tau,
            config.newton_max_iter, config.newton_tol,
        )
        alam = out["A"] + out["lam"]
        primal_sq = out["primal_a_sq"] + out["primal_b_sq"]

        if not fixed:
            z = nu / r - phi[-1]
            w = endpoint.prox(z, r)
            eta = -w
            slack = phi[-1] - eta
            primal_sq += float(va @ (slack * slack))
            nu = nu - r * slack

        delta = tau * grid.diff_adjoint((alam - alam_prev) * va[None, :])
        db = out["bsum"] - bsum_prev
        acc = np.zeros((n + 1, nt, 3))
        acc[:-1] += db[:, 0]
        acc[1:] += db[:, 1]
        acc *= mesh.face_areas[None, :, None]
        delta += tau / 6.0 * ops.gradient_adjoint(acc)
        if not fixed:
            delta[-1] += va * (eta - eta_prev)
        delta *= r
        dual_sq = float(((delta * delta) / va[None, :] / cells[:, None]).sum())

        primal = math.sqrt(primal_sq)
        dual = math.sqrt(dual_sq)
        primal_hist.append(primal)
        dual_hist.append(dual)
        r_hist.append(r)

        alam_prev = alam.copy()
        bsum_prev = out["bsum"].copy()
        if not fixed:
            eta_prev = eta.copy()

        if primal < config.tol and dual < config.tol:
            converged = True
            break
        if config.adapt_penalty:
            r = update_penalty(r, primal, dual, config.adapt_ratio, config.adapt_factor)

    return {
        "phi": phi,
        "mu": mu,
        "m": m,
        "bsum": out["bsum"],
        "eta": eta,
        "nu": nu,
        "iterations": iterations,
        "converged": converged,
        "primal": np.asarray(primal_hist),
        "dual": np.asarray(dual_hist),
        "r": np.asarray(r_hist),
    }


def solve_geodesic(
    mesh: TriangleMesh,
    ops: MeshOperators,
    mu0,
    mu1,
    config: SolverConfig | None = None,
) -> GeodesicResult:
    """Interpolating geodesic between two unit-mass densities.

    Runs the splitting until both residuals drop below ``config.tol`` (or
    the iteration cap is hit; the best iterate is then returned flagged
    non-converged). The interpolating curve is the density multiplier on
    the centered grid; the reported distance is the square root of the
    converged dual objective.
    """
    config = config or SolverConfig()
    mu0 = as_density(mesh, mu0)
    mu1 = as_density(mesh, mu1)
    grid = TimeGrid(config.time_steps)
    state = _solve_transport(ops, grid, mu0, _FixedEndpoint(mu1), config)

    phi = state["phi"]
    va = ops.vertex_areas
    dual_obj = float(va @ (phi[-1] * mu1 - phi[0] * mu0))
    face_momentum = state["m"].mean(axis=(1, 3))
    action = evaluate_action(mesh, state["mu"], face_momentum)
    return GeodesicResult(
        mu=state["mu"],
        phi=phi,
        momentum=state["m"],
        face_momentum=face_momentum,
        distance=math.sqrt(max(dual_obj, 0.0)),
        dual_objective=dual_obj,
        primal_action=action,
        iterations=state["iterations"],
        converged=state["converged"],
        primal_residuals=state["primal"],
        dual_residuals=state["dual"],
        penalty_history=state["r"],
        config=config,
    )
