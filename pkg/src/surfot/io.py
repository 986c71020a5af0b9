"""Run artifacts: density files, frame dumps, residual logs, manifests.

Everything is plain ASCII so downstream plotting needs no custom reader.
Densities are one value per line at 17 significant digits, which
round-trips IEEE doubles exactly; manifests are JSON with sorted keys so
reruns with identical inputs produce byte-identical files apart from the
recorded wall time.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from .geodesic import SolverConfig
from .mesh import DensityField, TriangleMesh

__all__ = [
    "IOFormatError",
    "RunManifest",
    "config_from_dict",
    "config_to_dict",
    "load_density",
    "load_manifest",
    "mesh_sha256",
    "save_density",
    "save_frames",
]


class IOFormatError(ValueError):
    """Malformed density file, index file, or manifest."""


def load_density(path, mesh: TriangleMesh) -> DensityField:
    """Read a vertex density and normalize it to unit mass.

    ``path`` is a text file with one value per vertex (blank lines
    ignored), a JSON list, or the literal ``delta:<vertex-index>`` for a
    unit spike. Values must be finite and nonnegative; the count must
    match the mesh exactly.
    """
    text = str(path)
    if text.startswith("delta:"):
        try:
            vertex = int(text[len("delta:"):])
        except ValueError:
            raise IOFormatError(f"bad delta literal: {text!r}") from None
        if not 0 <= vertex < mesh.n_vertices:
            raise IOFormatError(
                f"delta vertex {vertex} outside mesh with {mesh.n_vertices} vertices"
            )
        values = np.zeros(mesh.n_vertices)
        values[vertex] = 1.0 / mesh.vertex_areas[vertex]
        return DensityField(mesh, values)

    raw = Path(path).read_text()
    stripped = raw.lstrip()
    if stripped.startswith("["):
        try:
            entries = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise IOFormatError(f"{path}: invalid JSON density: {exc}") from None
        if not isinstance(entries, list):
            raise IOFormatError(f"{path}: JSON density must be a list")
    else:
        entries = []
        for ln, line in enumerate(raw.splitlines(), start=1):
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
        raise IOFormatError(f"{path}: density has non-finite entries")
    if (values < 0).any():
        raise IOFormatError(f"{path}: density has negative entries")
    total = mesh.vertex_areas @ values
    if not total > 0:
        raise IOFormatError(f"{path}: density has zero mass")
    return DensityField(mesh, values / total)


def save_density(path, values: np.ndarray) -> None:
    """Write one density value per line, 17 significant digits."""
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w") as handle:
        for value in values:
            handle.write(f"{value:.17g}\n")


def mesh_sha256(path) -> str:
    """Content hash of a mesh file, for manifest provenance."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_to_dict(config: SolverConfig) -> dict:
    """Solver settings as a JSON-safe dict; inverse of config_from_dict."""
    return dataclasses.asdict(config)


def config_from_dict(data: dict) -> SolverConfig:
    """Rebuild solver settings written by config_to_dict."""
    fields = {f.name for f in dataclasses.fields(SolverConfig)}
    unknown = set(data) - fields
    if unknown:
        raise IOFormatError(f"unknown config keys: {sorted(unknown)}")
    return SolverConfig(**data)


@dataclasses.dataclass
class RunManifest:
    """What a CLI run did and which files it wrote.

    ``config`` is the full solver configuration (round-trips through
    config_from_dict); ``frames`` lists density files relative to the
    output directory, in grid order. ``distance`` is None for runs that
    do not report one. ``extra`` carries per-command values (flow
    energies, harmonic energy, oracle tables).
    """

    command: str
    mesh_path: str
    mesh_hash: str
    config: dict
    iterations: int
    converged: bool
    distance: float | None
    frames: list
    residuals_path: str | None
    wall_time: float
    extra: dict = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def save_frames(out_dir, mu_curve, manifest: RunManifest, residuals=None) -> list:
    """Write density frames, the residual log, and manifest.json.

    ``mu_curve`` rows become ``frame_0000.txt`` onward; ``residuals`` is
    an (n, 3) array of per-iteration (primal, dual, penalty) written as
    ``residuals.csv``. The manifest is updated in place to reference
    exactly the files written and saved last. Returns the file names.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mu_curve = np.atleast_2d(np.asarray(mu_curve, dtype=np.float64))
    names = []
    for k, row in enumerate(mu_curve):
        name = f"frame_{k:04d}.txt"
        save_density(out / name, row)
        names.append(name)
    manifest.frames = list(names)
    if residuals is not None:
        residuals = np.asarray(residuals, dtype=np.float64)
        with open(out / "residuals.csv", "w") as handle:
            handle.write("iteration,primal,dual,r\n")
            for k, (primal, dual, penalty) in enumerate(residuals):
                handle.write(f"{k},{primal:.17g},{dual:.17g},{penalty:.17g}\n")
        manifest.residuals_path = "residuals.csv"
        names.append("residuals.csv")
    else:
        manifest.residuals_path = None
    with open(out / "manifest.json", "w") as handle:
        json.dump(manifest.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    names.append("manifest.json")
    return names


def load_manifest(path) -> RunManifest:
    """Read back a manifest written by save_frames."""
    with open(path) as handle:
        data = json.load(handle)
    fields = {f.name for f in dataclasses.fields(RunManifest)}
    unknown = set(data) - fields
    if unknown:
        raise IOFormatError(f"unknown manifest keys: {sorted(unknown)}")
    try:
        return RunManifest(**data)
    except TypeError as exc:
        raise IOFormatError(f"incomplete manifest: {exc}") from None
