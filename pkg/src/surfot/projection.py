"""Projection kernel dispatch: compiled extension with NumPy fallback.

The cone-projection sweep dominates solver runtime, so it ships both as a
Cython extension and as a vectorized NumPy implementation. The extension
is preferred when importable; set ``SURFOT_NO_EXT=1`` to force the
fallback. Both expose identical semantics (a parity test holds them to
near machine agreement).
"""

from __future__ import annotations

import os

import numpy as np

from . import _projection_np

if os.environ.get("SURFOT_NO_EXT"):
    _impl = _projection_np
else:
    try:
        from . import _projection as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _projection_np

BACKEND: str = _impl.BACKEND


def solve_gamma(a_t, q_t, inv_two_wa, rho, max_iter, tol):
    """Batch KKT-multiplier solve; see ``_projection_np.solve_gamma``."""
    return _impl.solve_gamma(a_t, q_t, inv_two_wa, rho, max_iter, tol)


def vertex_incidence(faces: np.ndarray, n_vertices: int):
    """CSR listing of (face, corner slot) pairs incident to each vertex."""
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    flat = faces.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n_vertices)
    indptr = np.zeros(n_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, (order // 3).astype(np.int64), (order % 3).astype(np.int64)


class GeodesicKernel:
    """Per-mesh workspace for the projection sweep of the geodesic solver."""

    def __init__(self, faces, face_areas, vertex_areas):
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.face_areas = np.ascontiguousarray(face_areas, dtype=np.float64)
        self.vertex_areas = np.ascontiguousarray(vertex_areas, dtype=np.float64)
        self.backend = BACKEND
        if BACKEND == "cython":
            self._indptr, self._inc_face, self._inc_slot = vertex_incidence(
                self.faces, len(self.vertex_areas)
            )

    def sweep(self, dphi, gphi, mu, m, r, alpha, tau, max_iter, tol):
        """Project all constraint points and update ``mu``/``m`` in place.

        Returns a dict with the projected scalar slack ``A``, congestion
        slack ``lam``, multipliers ``gamma``, the slot-collapsed momentum
        slack ``bsum`` and multiplier ``msum``, the weighted squared primal
        residual contributions, and the bisection fallback count.
        """
        if BACKEND == "cython":
            return _impl.geodesic_sweep(
                np.ascontiguousarray(dphi),
                np.ascontiguousarray(gphi),
                mu,
                m,
                self.face_areas,
                self.vertex_areas,
                self._indptr,
                self._inc_face,
                self._inc_slot,
                r,
                alpha,
                tau,
                max_iter,
                tol,
            )
        return _impl.geodesic_sweep(
            dphi,
            gphi,
            mu,
            m,
            self.face_areas,
            self.vertex_areas,
            self.faces,
            r,
            alpha,
            tau,
            max_iter,
            tol,
        )
