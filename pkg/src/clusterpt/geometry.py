"""Geometric primitives: triangle meshes and analytic spheres.

Mesh positions are float32 (that is what travels over the wire in scene
updates); all intersection math is done in float64 after a single
well-defined cast, so every code path sees identical coordinates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from clusterpt.errors import SceneError

__all__ = ["TriangleMesh", "Sphere", "triangle_vertices", "triangle_areas"]


@dataclass
class TriangleMesh:
    """Indexed triangle mesh with one material for the whole mesh."""

    positions: np.ndarray  # (V, 3) float32
    indices: np.ndarray    # (T, 3) uint32
    material: int
    name: str = ""

    def __post_init__(self) -> None:
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.uint32)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise SceneError(f"mesh '{self.name}': positions must be (V, 3)")
        if self.indices.ndim != 2 or self.indices.shape[1] != 3:
            raise SceneError(f"mesh '{self.name}': indices must be (T, 3)")
        if self.indices.size and self.indices.max() >= len(self.positions):
            raise SceneError(f"mesh '{self.name}': index out of range")

    @property
    def triangle_count(self) -> int:
        return len(self.indices)

    def topology_key(self) -> tuple[int, str]:
        """Fingerprint of connectivity only; positions may change freely."""
        digest = hashlib.sha256(self.indices.tobytes()).hexdigest()
        return (len(self.positions), digest)


@dataclass
class Sphere:
    center: tuple[float, float, float]
    radius: float
    material: int

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise SceneError(f"sphere radius {self.radius} must be positive")


def triangle_vertices(mesh: TriangleMesh, tri_ids=None):
    """(v0, e1, e2) in float64 for the given triangles (all by default).

    Centralized so the BVH path, brute-force path and shading all gather
    and cast vertex data identically.
    """
    idx = mesh.indices if tri_ids is None else mesh.indices[tri_ids]
    pos = mesh.positions
    v0 = pos[idx[..., 0]].astype(np.float64)
    v1 = pos[idx[..., 1]].astype(np.float64)
    v2 = pos[idx[..., 2]].astype(np.float64)
    return v0, v1 - v0, v2 - v0


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    v0, e1, e2 = triangle_vertices(mesh)
    c = np.cross(e1, e2)
    return 0.5 * np.sqrt(c[:, 0] ** 2 + c[:, 1] ** 2 + c[:, 2] ** 2)
