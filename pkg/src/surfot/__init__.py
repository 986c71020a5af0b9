"""Optimal transport on triangulated surfaces.

Geodesics, distances and congestion-regularized interpolations in the
Wasserstein space over a surface mesh, minimizing-movement gradient
flows, and harmonic maps from a parameter domain into that space. The
discretization preserves mass and positivity by construction; solvers
share one operator-splitting core with exact factorized linear algebra
and a compiled projection kernel (NumPy fallback selected at import).
"""

from .functionals import (
    ConvergenceError,
    FlowFunctional,
    FlowSetupError,
    FlowTrace,
    evaluate_functional,
    jko_step,
    run_flow,
)
from .geodesic import (
    GeodesicResult,
    SolverConfig,
    evaluate_action,
    reconstruct_velocity,
    solve_geodesic,
    tangent_norm,
)
from .harmonic import (
    BoundaryData,
    DomainMesh,
    HarmonicResult,
    solve_harmonic,
)
from .mesh import (
    DensityField,
    MeshError,
    MeshFormatError,
    MeshOperators,
    TriangleMesh,
    average_to_faces,
    build_operators,
    load_mesh,
    save_off,
)
from .projection import BACKEND as projection_backend
from .timegrid import TimeGrid

__version__ = "0.1.0"

__all__ = [
    "BoundaryData",
    "ConvergenceError",
    "DensityField",
    "DomainMesh",
    "FlowFunctional",
    "FlowSetupError",
    "FlowTrace",
    "GeodesicResult",
    "HarmonicResult",
    "MeshError",
    "MeshFormatError",
    "MeshOperators",
    "SolverConfig",
    "TimeGrid",
    "TriangleMesh",
    "average_to_faces",
    "build_operators",
    "evaluate_action",
    "evaluate_functional",
    "jko_step",
    "load_mesh",
    "projection_backend",
    "reconstruct_velocity",
    "run_flow",
    "save_off",
    "solve_harmonic",
    "solve_geodesic",
    "tangent_norm",
    "__version__",
]
