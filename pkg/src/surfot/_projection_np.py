"""NumPy reference implementation of the projection sweep.

The compiled extension in ``_projection.pyx`` mirrors these functions
exactly (same formulas, same stopping rules); a parity test asserts both
backends agree to near machine precision. Keep the arithmetic expressions
in sync when editing either file.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def solve_gamma(a_t, q_t, inv_two_wa, rho, max_iter, tol):
    """Root of the projection cubic for a batch of constraint points.

    Solves h(g) = a_t - g * inv_two_wa + q_t / (1 + rho g)^2 = 0 for the
    KKT multiplier g >= 0 at every point where a_t + q_t > 0; elsewhere
    the point is feasible and g = 0. h is convex and strictly decreasing
    on g >= 0, so Newton from 0 converges monotonically; a doubling
    bracket plus bisection covers float pathologies.

    Parameters
    ----------
    a_t, q_t : (n,) arrays
        Scalar target and weighted squared momentum target per point
        (q_t >= 0).
    inv_two_wa, rho : (n,) arrays
        1 / (2 w_a) and the shrink rate of the point.
    max_iter : int
        Newton iteration cap before falling back to bisection.
    tol : float
        Stop when |h| <= tol * (1 + |a_t| + q_t).

    Returns
    -------
    gamma : (n,) array
    n_fallback : int
        Number of points that needed the bisection fallback.
    """
    a_t = np.asarray(a_t, dtype=np.float64)
    q_t = np.asarray(q_t, dtype=np.float64)
    inv_two_wa = np.asarray(inv_two_wa, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)

    gamma = np.zeros_like(a_t)
    scale = 1.0 + np.abs(a_t) + q_t
    active = a_t + q_t > 0.0
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return gamma, 0

    g = np.zeros(idx.size)
    at = a_t[idx]
    qt = q_t[idx]
    itw = inv_two_wa[idx]
    rh = rho[idx]
    sc = scale[idx]

    live = np.ones(idx.size, dtype=bool)
    for _ in range(max_iter):
        d = 1.0 + rh[live] * g[live]
        h = at[live] - g[live] * itw[live] + qt[live] / (d * d)
        hp = -itw[live] - 2.0 * rh[live] * qt[live] / (d * d * d)
        step = h / hp
        g[live] = g[live] - step
        done = np.abs(h) <= tol * sc[live]
        if done.all():
            live[np.flatnonzero(live)] = ~done
            break
        live[np.flatnonzero(live)] = ~done
        if not live.any():
            break

    n_fallback = int(live.sum())
    if n_fallback:
        # Doubling bracket then bisection on the stragglers.
        sub = np.flatnonzero(live)
        lo = np.zeros(sub.size)
        hi = np.maximum(1.0, g[sub])
        for _ in range(200):
            d = 1.0 + rh[sub] * hi
            h_hi = at[sub] - hi * itw[sub] + qt[sub] / (d * d)
            grow = h_hi > 0.0
            if not grow.any():
                break
            hi[grow] *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            d = 1.0 + rh[sub] * mid
            h_mid = at[sub] - mid * itw[sub] + qt[sub] / (d * d)
            high = h_mid > 0.0
            lo = np.where(high, mid, lo)
            hi = np.where(high, hi, mid)
        g[sub] = 0.5 * (lo + hi)

    gamma[idx] = g
    return gamma, n_fallback


def geodesic_sweep(
    dphi,
    gphi,
    mu,
    m,
    face_areas,
    vertex_areas,
    faces,
    r,
    alpha,
    tau,
    max_iter,
    tol,
):
    """One constraint-projection plus multiplier-update sweep.

    Projects the per-point targets (time derivative of the potential plus
    scaled density multiplier; staggered gradients plus scaled momentum
    multipliers) onto the pointwise kinetic-energy cone, applies the
    congestion shrinkage, and performs the multiplier updates in place.

    Parameters
    ----------
    dphi : (N, nv) array
        Time difference of the potential at centered nodes.
    gphi : (N+1, nT, 3) array
        Per-face gradient of the potential at staggered nodes.
    mu : (N, nv) array, updated in place
        Density multiplier.
    m : (N, 2, nT, 3, 3) array, updated in place
        Momentum multiplier copies: time side (earlier/later staggered
        node), face, vertex slot, component.
    face_areas, vertex_areas : arrays
    faces : (nT, 3) int array
    r : float
        Penalty parameter.
    alpha : float
        Congestion strength (0 disables congestion).
    tau : float
        Time step (only used in the residual weights).
    max_iter, tol :
        Newton controls, see :func:`solve_gamma`.

    Returns
    -------
    dict with keys
        ``A`` (N, nv), ``lam`` (N, nv), ``gamma`` (N, nv),
        ``bsum`` (N, 2, nT, 3) slot-collapsed momentum block,
        ``msum`` (N, 2, nT, 3) slot-collapsed momentum multiplier,
        ``primal_a_sq``, ``primal_b_sq`` weighted squared residuals,
        ``n_fallback``.
    """
    n_steps, nv = dphi.shape
    inv_r = 1.0 / r

    b_t = m * inv_r
    b_t[:, 0] += gphi[:-1, :, None, :]
    b_t[:, 1] += gphi[1:, :, None, :]
    a_t = dphi + mu * inv_r

    sq = (b_t * b_t).sum(axis=-1).sum(axis=1)  # (N, nT, 3)
    sq *= face_areas[None, :, None]
    point = np.arange(n_steps)[:, None] * nv + faces.ravel()[None, :]
    q_t = np.bincount(
        point.ravel(), weights=sq.reshape(n_steps, -1).ravel(), minlength=n_steps * nv
    ).reshape(n_steps, nv)
    q_t /= 12.0 * vertex_areas[None, :]

    one_ar = 1.0 + alpha * r
    itw_v = one_ar / (2.0 * vertex_areas)
    rho_v = 1.0 / (2.0 * vertex_areas)
    gamma, n_fallback = solve_gamma(
        a_t.ravel(),
        q_t.ravel(),
        np.broadcast_to(itw_v, a_t.shape).reshape(-1),
        np.broadcast_to(rho_v, a_t.shape).reshape(-1),
        max_iter,
        tol,
    )
    gamma = gamma.reshape(a_t.shape)

    big_a = a_t - gamma * itw_v[None, :]
    lam = (alpha * r / one_ar) * (a_t - big_a)

    shrink = 1.0 / (1.0 + gamma * rho_v[None, :])
    b_t *= shrink[:, faces][:, None, :, :, None]
    # b_t now holds the projected momentum block B.
    diff = b_t.copy()
    diff[:, 0] -= gphi[:-1, :, None, :]
    diff[:, 1] -= gphi[1:, :, None, :]
    m -= r * diff

    resid_a = big_a + lam - dphi
    primal_a_sq = tau * float(vertex_areas @ (resid_a * resid_a).sum(axis=0))
    w_b = (diff * diff).sum(axis=-1).sum(axis=(0, 1, 3))
    primal_b_sq = tau / 6.0 * float(face_areas @ w_b)
    mu -= r * resid_a

    return {
        "A": big_a,
        "lam": lam,
        "gamma": gamma,
        "bsum": b_t.sum(axis=3),
        "msum": m.sum(axis=3),
        "primal_a_sq": primal_a_sq,
        "primal_b_sq": primal_b_sq,
        "n_fallback": n_fallback,
    }
