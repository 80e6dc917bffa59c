"""Scene model: materials, primitives, lights, environment, updates.

A Scene is plain data plus a lazily built render preparation (ScenePrep)
holding the flattened arrays the integrator consumes: sphere tables, per-mesh
triangle data and BVHs, a global primitive-id space, material lookup arrays
and the light sampling table.

Global primitive ids: spheres occupy [0, S), then each mesh's triangles in
order, light quads last (each light becomes a two-triangle emissive mesh).
Nearest-hit merging across objects uses the same tie-break as the BVH, so
scenes render identically regardless of object declaration order changes
that preserve ids.

Geometry edits travel as SceneUpdate values: per-mesh disjoint, sorted
vertex ranges with replacement positions.  Every process applies the same
update bytes, so positions stay bitwise identical across the cluster; the
producer evaluates animation, consumers only ever apply deltas.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from clusterpt.bvh import Bvh, TriData, brute_nearest, build_bvh, refit_bvh, traverse_nearest
from clusterpt.camera import Camera
from clusterpt.errors import SceneError, StaleUpdateError
from clusterpt.geometry import Sphere, TriangleMesh

__all__ = [
    "Material", "KIND_DIFFUSE", "KIND_METAL", "KIND_DIELECTRIC", "KIND_EMISSIVE",
    "QuadLight", "Environment", "SineDeform", "Scene", "ScenePrep",
    "MeshDelta", "SceneUpdate", "apply_scene_update", "env_radiance",
    "BRUTE_FORCE_TRI_LIMIT",
]

KIND_DIFFUSE = 0
KIND_METAL = 1
KIND_DIELECTRIC = 2
KIND_EMISSIVE = 3

_KIND_CODES = {
    "diffuse": KIND_DIFFUSE,
    "metal": KIND_METAL,
    "dielectric": KIND_DIELECTRIC,
    "emissive": KIND_EMISSIVE,
}

# meshes at or below this many triangles are intersected by linear scan
BRUTE_FORCE_TRI_LIMIT = 64


@dataclass(frozen=True)
class Material:
    """Surface description.  Fields are interpreted per kind:

    diffuse     albedo = Lambertian reflectance
    metal       albedo = specular tint, fuzz in [0, 1) roughens the mirror
    dielectric  ior = index of refraction, albedo ignored
    emissive    emission = radiance, one-sided (front face only)
    """

    kind: str
    albedo: tuple = (0.8, 0.8, 0.8)
    emission: tuple = (0.0, 0.0, 0.0)
    fuzz: float = 0.0
    ior: float = 1.5
    name: str = ""

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise SceneError(f"unknown material kind {self.kind!r}")
        if not (0.0 <= self.fuzz < 1.0):
            raise SceneError("metal fuzz must lie in [0, 1)")
        if self.ior <= 0.0:
            raise SceneError("ior must be positive")
        if any(c < 0 for c in self.albedo) or any(c < 0 for c in self.emission):
            raise SceneError("albedo and emission must be non-negative")

    @property
    def kind_code(self) -> int:
        return _KIND_CODES[self.kind]


@dataclass(frozen=True)
class QuadLight:
    """Parallelogram area light: corner + s*edge_u + t*edge_v, s,t in [0,1].

    Emits `radiance` from the face whose normal is edge_u x edge_v.
    """

    corner: tuple
    edge_u: tuple
    edge_v: tuple
    radiance: tuple

    def __post_init__(self):
        n = np.cross(np.asarray(self.edge_u, float), np.asarray(self.edge_v, float))
        if float(n @ n) <= 0.0:
            raise SceneError("light edges are parallel or zero")
        if any(c < 0 for c in self.radiance):
            raise SceneError("light radiance must be non-negative")

    @property
    def area(self) -> float:
        n = np.cross(np.asarray(self.edge_u, float), np.asarray(self.edge_v, float))
        return float(np.sqrt(n @ n))

    def as_mesh(self, material: int) -> TriangleMesh:
        c = np.asarray(self.corner, np.float32)
        u = np.asarray(self.edge_u, np.float32)
        v = np.asarray(self.edge_v, np.float32)
        pos = np.stack([c, c + u, c + v, c + u + v])
        idx = np.array([[0, 1, 3], [0, 3, 2]], np.uint32)
        return TriangleMesh(pos, idx, material, name="light")


@dataclass(frozen=True)
class Environment:
    """Radiance for escaped rays.

    constant: `color` everywhere.
    gradient: vertical blend, `color` at the zenith, `color2` at the nadir.
    """

    kind: str = "constant"
    color: tuple = (0.0, 0.0, 0.0)
    color2: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("constant", "gradient"):
            raise SceneError(f"unknown environment kind {self.kind!r}")


def env_radiance(env: Environment, dirs: np.ndarray) -> np.ndarray:
    """Environment radiance per direction, (R, 3) float64."""
    R = len(dirs)
    top = np.asarray(env.color, np.float64)
    if env.kind == "constant":
        return np.broadcast_to(top, (R, 3)).copy()
    bottom = np.asarray(env.color2, np.float64)
    t = 0.5 * (dirs[:, 1] + 1.0)
    return (1.0 - t)[:, None] * bottom + t[:, None] * top


@dataclass(frozen=True)
class SineDeform:
    """Travelling sine displacement of one mesh.

    Displaces `axis` by amplitude * sin(2*pi * (p[along]/wavelength
    + cycles_per_frame * frame)) evaluated against the mesh's original
    positions, so any frame id maps to one exact shape.
    """

    mesh_index: int
    amplitude: float = 0.25
    wavelength: float = 2.0
    cycles_per_frame: float = 0.05
    axis: int = 1
    along: int = 0

    def __post_init__(self):
        if self.axis not in (0, 1, 2) or self.along not in (0, 1, 2):
            raise SceneError("deform axes must be 0, 1 or 2")
        if self.wavelength <= 0:
            raise SceneError("wavelength must be positive")

    def positions_at(self, base: np.ndarray, frame_id: int) -> np.ndarray:
        p = base.astype(np.float64)
        phase = 2.0 * math.pi * (p[:, self.along] / self.wavelength
                                 + self.cycles_per_frame * frame_id)
        p[:, self.axis] += self.amplitude * np.sin(phase)
        return p.astype(np.float32)


@dataclass
class MeshDelta:
    """Replacement positions for disjoint sorted vertex ranges of one mesh."""

    mesh_index: int
    ranges: list              # [(start, stop), ...] start < stop, ascending
    positions: np.ndarray     # (sum of lengths, 3) float32

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, np.float32)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise SceneError("delta positions must be (n, 3)")
        prev = 0
        total = 0
        for start, stop in self.ranges:
            if start < prev or stop <= start:
                raise SceneError("delta ranges must be sorted, disjoint, non-empty")
            prev = stop
            total += stop - start
        if total != len(self.positions):
            raise SceneError(
                f"delta carries {len(self.positions)} rows but ranges cover {total}")


@dataclass
class SceneUpdate:
    """Per-frame geometry (and optionally camera) change set."""

    frame_id: int
    deltas: list = field(default_factory=list)
    camera: Camera | None = None


class _MeshPrep:
    """Per-mesh acceleration state."""

    __slots__ = ("tri", "bvh", "material", "prim_base", "use_bvh")

    def __init__(self, mesh: TriangleMesh, prim_base: int, use_bvh: bool):
        self.tri = TriData(mesh)
        self.bvh = build_bvh(mesh) if use_bvh else None
        self.material = mesh.material
        self.prim_base = prim_base
        self.use_bvh = use_bvh

    def refresh(self, mesh: TriangleMesh) -> None:
        self.tri = TriData(mesh)
        if self.bvh is not None:
            self.bvh = refit_bvh(self.bvh, mesh)


class ScenePrep:
    """Flattened arrays and acceleration structures for rendering."""

    def __init__(self, scene: "Scene"):
        mats = list(scene.materials)
        light_meshes = []
        for light in scene.lights:
            mats.append(Material("emissive", emission=tuple(light.radiance),
                                 name=f"__light{len(light_meshes)}"))
            light_meshes.append(light.as_mesh(len(mats) - 1))
        all_meshes = list(scene.meshes) + light_meshes
        for m in all_meshes:
            if not (0 <= m.material < len(mats)):
                raise SceneError(f"mesh {m.name!r} references material {m.material}")
        for s in scene.spheres:
            if not (0 <= s.material < len(mats)):
                raise SceneError(f"sphere references material {s.material}")

        S = len(scene.spheres)
        if S:
            self.sph_center = np.stack([np.asarray(s.center, np.float64)
                                        for s in scene.spheres])
            self.sph_radius = np.array([s.radius for s in scene.spheres], np.float64)
            self.sph_mat = np.array([s.material for s in scene.spheres], np.int32)
        else:
            self.sph_center = np.zeros((0, 3))
            self.sph_radius = np.zeros(0)
            self.sph_mat = np.zeros(0, np.int32)

        total_tris = sum(m.triangle_count for m in all_meshes)
        self.total_tris = total_tris
        use_bvh = total_tris > BRUTE_FORCE_TRI_LIMIT
        self.meshes = []
        base = S
        for m in all_meshes:
            self.meshes.append(_MeshPrep(m, base, use_bvh))
            base += m.triangle_count
        self.prim_count = base
        self.n_user_meshes = len(scene.meshes)

        # material lookup tables over material ids
        self.mat_kind = np.array([m.kind_code for m in mats], np.int8)
        self.mat_albedo = np.array([m.albedo for m in mats], np.float64).reshape(-1, 3)
        self.mat_emission = np.array([m.emission for m in mats],
                                     np.float64).reshape(-1, 3)
        self.mat_fuzz = np.array([m.fuzz for m in mats], np.float64)
        self.mat_ior = np.array([m.ior for m in mats], np.float64)

        # global prim id -> material id
        pm = list(self.sph_mat)
        for mp, mesh in zip(self.meshes, all_meshes):
            pm.extend([mp.material] * mesh.triangle_count)
        self.prim_mat = np.array(pm, np.int32) if pm else np.zeros(0, np.int32)

        # light table; light quads are the last len(lights) meshes
        L = len(scene.lights)
        self.light_of_prim = np.full(self.prim_count, -1, np.int32)
        if L:
            self.light_corner = np.stack([np.asarray(l.corner, np.float64)
                                          for l in scene.lights])
            self.light_eu = np.stack([np.asarray(l.edge_u, np.float64)
                                      for l in scene.lights])
            self.light_ev = np.stack([np.asarray(l.edge_v, np.float64)
                                      for l in scene.lights])
            n = np.cross(self.light_eu, self.light_ev)
            self.light_area = np.sqrt((n * n).sum(axis=1))
            self.light_normal = n / self.light_area[:, None]
            self.light_radiance = np.stack([np.asarray(l.radiance, np.float64)
                                            for l in scene.lights])
            for i in range(L):
                mp = self.meshes[self.n_user_meshes + i]
                self.light_of_prim[mp.prim_base:mp.prim_base + 2] = i
        else:
            self.light_corner = np.zeros((0, 3))
            self.light_eu = np.zeros((0, 3))
            self.light_ev = np.zeros((0, 3))
            self.light_area = np.zeros(0)
            self.light_normal = np.zeros((0, 3))
            self.light_radiance = np.zeros((0, 3))
        self.n_lights = L

    def refresh_mesh(self, user_index: int, mesh: TriangleMesh) -> None:
        self.meshes[user_index].refresh(mesh)

    def nearest(self, origins, dirs, t_min: float = 1e-4, t_max=np.inf):
        """Nearest hit across every object.

        Returns (t, gprim, u, v): gprim is the global primitive id, -1 for
        a miss (t = +inf).  u, v are triangle barycentrics, zero for spheres.
        """
        R = len(origins)
        best_t = np.broadcast_to(np.asarray(t_max, np.float64), (R,)).copy()
        best_prim = np.full(R, 2**31 - 1, np.int64)
        best_u = np.zeros(R)
        best_v = np.zeros(R)

        for s in range(len(self.sph_radius)):
            oc = origins - self.sph_center[s]
            b = (oc * dirs).sum(axis=1)
            c = (oc * oc).sum(axis=1) - self.sph_radius[s] ** 2
            disc = b * b - c
            ok = disc > 0.0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t0 = -b - sq
            t1 = -b + sq
            t = np.where(t0 > t_min, t0, t1)
            ok &= t > t_min
            gp = np.int64(s)
            upd = ok & ((t < best_t) | ((t == best_t) & (gp < best_prim)))
            best_t[upd] = t[upd]
            best_prim[upd] = gp
            best_u[upd] = 0.0
            best_v[upd] = 0.0

        for mp in self.meshes:
            if mp.use_bvh:
                t, p, u, v = traverse_nearest(mp.bvh, mp.tri, origins, dirs,
                                              t_min, best_t)
            else:
                t, p, u, v = brute_nearest(mp.tri, origins, dirs, t_min, best_t)
            ok = p >= 0
            gp = p + mp.prim_base
            upd = ok & ((t < best_t) | ((t == best_t) & (gp < best_prim)))
            best_t[upd] = t[upd]
            best_prim[upd] = gp[upd]
            best_u[upd] = u[upd]
            best_v[upd] = v[upd]

        miss = best_prim == 2**31 - 1
        best_t = np.where(miss, np.inf, best_t)
        return best_t, np.where(miss, np.int64(-1), best_prim), best_u, best_v

    def occluded(self, origins, dirs, max_dist) -> np.ndarray:
        """True where any primitive lies strictly inside (t_min, max_dist)."""
        t, p, _, _ = self.nearest(origins, dirs, t_max=max_dist)
        return p >= 0


@dataclass
class Scene:
    """Complete renderable world.  Mutable: geometry updates edit positions
    in place and refresh the acceleration state incrementally."""

    materials: list = field(default_factory=list)
    spheres: list = field(default_factory=list)
    meshes: list = field(default_factory=list)
    lights: list = field(default_factory=list)
    environment: Environment = field(default_factory=Environment)
    camera: Camera | None = None
    animation: SineDeform | None = None
    name: str = ""

    def __post_init__(self):
        self._prep: ScenePrep | None = None
        self.applied_frame_id: int = -1

    def prep(self) -> ScenePrep:
        if self._prep is None:
            self._prep = ScenePrep(self)
        return self._prep

    def invalidate(self) -> None:
        self._prep = None

    def state_hash(self) -> str:
        """Digest of everything that determines the rendered image except
        the camera; equal hashes across processes mean equal worlds."""
        h = hashlib.sha256()
        for m in self.materials:
            h.update(repr((m.kind, m.albedo, m.emission, m.fuzz, m.ior)).encode())
        for s in self.spheres:
            h.update(np.asarray(s.center, np.float64).tobytes())
            h.update(np.float64(s.radius).tobytes())
            h.update(s.material.to_bytes(4, "little"))
        for m in self.meshes:
            h.update(np.ascontiguousarray(m.positions).tobytes())
            h.update(np.ascontiguousarray(m.indices).tobytes())
            h.update(m.material.to_bytes(4, "little"))
        for l in self.lights:
            h.update(repr((l.corner, l.edge_u, l.edge_v, l.radiance)).encode())
        h.update(repr((self.environment.kind, self.environment.color,
                       self.environment.color2)).encode())
        return h.hexdigest()


def apply_scene_update(scene: Scene, update: SceneUpdate) -> None:
    """Apply a geometry update in place.

    Rejects updates that do not move forward in frame order
    (StaleUpdateError) and structurally invalid deltas (SceneError).
    Positions are written exactly as carried (float32), then any existing
    acceleration state for the touched meshes is refreshed by refit.
    """
    if update.frame_id <= scene.applied_frame_id:
        raise StaleUpdateError(
            f"update for frame {update.frame_id} arrived after frame "
            f"{scene.applied_frame_id} was applied")
    for d in update.deltas:
        if not (0 <= d.mesh_index < len(scene.meshes)):
            raise SceneError(f"delta targets unknown mesh {d.mesh_index}")
        v = len(scene.meshes[d.mesh_index].positions)
        for start, stop in d.ranges:
            if stop > v:
                raise SceneError(
                    f"delta range [{start}, {stop}) exceeds {v} vertices")
    for d in update.deltas:
        mesh = scene.meshes[d.mesh_index]
        row = 0
        for start, stop in d.ranges:
            n = stop - start
            mesh.positions[start:stop] = d.positions[row:row + n]
            row += n
        if scene._prep is not None:
            scene._prep.refresh_mesh(d.mesh_index, mesh)
    if update.camera is not None:
        scene.camera = update.camera
    scene.applied_frame_id = update.frame_id
