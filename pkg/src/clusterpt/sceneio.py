"""Scene files: a small YAML schema and the bundled example scenes.

Schema (all vectors are 3-element lists):

    name: str
    camera:      {position, look_at, up?, fov?}
    environment: {kind: constant|gradient, color, color2?}
    materials:   {<name>: {kind: diffuse|metal|dielectric|emissive,
                           albedo?, emission?, fuzz?, ior?}, ...}
    spheres:     [{center, radius, material: <name>}, ...]
    meshes:      [{name?, material: <name>, and exactly one geometry source:
                     positions + indices   inline vertex/triangle lists
                     positions_file + indices_file   .npy paths, relative
                     grid: {nx, nz, origin, du, dv}  procedural grid}, ...]
    lights:      [{corner, edge_u, edge_v, radiance}, ...]
    animation:   {mesh: <mesh name>, axis?, along?, amplitude?,
                  wavelength?, cycles_per_frame?}

Materials are referenced by name and resolved to indices at load time.
load_scene() accepts either a bundled scene name ("gloss", "deform") or a
filesystem path to a YAML file.
"""

from __future__ import annotations

import importlib.resources
import os

import numpy as np
import yaml

from clusterpt.camera import Camera
from clusterpt.errors import SceneError
from clusterpt.geometry import Sphere, TriangleMesh
from clusterpt.scene import (Environment, Material, QuadLight, Scene,
                             SineDeform)

__all__ = ["load_scene", "scene_from_dict", "list_scenes", "make_grid_mesh"]


def make_grid_mesh(nx: int, nz: int, origin, du, dv, material: int,
                   name: str = "grid") -> TriangleMesh:
    """Regular (nx x nz)-cell grid: (nx+1)*(nz+1) vertices, 2*nx*nz triangles.

    Vertex (i, j) sits at origin + i*du + j*dv, row-major by j.
    """
    if nx < 1 or nz < 1:
        raise SceneError(f"grid must have at least one cell, got {nx}x{nz}")
    origin = np.asarray(origin, np.float64)
    du = np.asarray(du, np.float64)
    dv = np.asarray(dv, np.float64)
    i = np.arange(nx + 1)
    j = np.arange(nz + 1)
    pos = (origin
           + i[None, :, None] * du
           + j[:, None, None] * dv).reshape(-1, 3).astype(np.float32)
    jj, ii = np.mgrid[0:nz, 0:nx]
    v00 = (jj * (nx + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + (nx + 1)
    v11 = v01 + 1
    tris = np.empty((2 * nx * nz, 3), np.uint32)
    tris[0::2] = np.stack([v00, v10, v11], axis=1)
    tris[1::2] = np.stack([v00, v11, v01], axis=1)
    return TriangleMesh(pos, tris, material, name=name)


def _vec3(d, key, default=None):
    v = d.get(key, default)
    if v is None:
        raise SceneError(f"missing required field {key!r}")
    if not (isinstance(v, (list, tuple)) and len(v) == 3):
        raise SceneError(f"{key} must be a 3-element list, got {v!r}")
    return tuple(float(c) for c in v)


def _load_mesh(entry: dict, mat_index: dict, base_dir: str,
               default_name: str) -> TriangleMesh:
    name = entry.get("name", default_name)
    mat = _resolve_material(entry, mat_index, f"mesh {name!r}")
    sources = [k for k in ("positions", "positions_file", "grid") if k in entry]
    if len(sources) != 1:
        raise SceneError(
            f"mesh {name!r} needs exactly one geometry source, got {sources}")
    if "grid" in entry:
        g = entry["grid"]
        return make_grid_mesh(int(g["nx"]), int(g["nz"]), _vec3(g, "origin"),
                              _vec3(g, "du"), _vec3(g, "dv"), mat, name)
    if "positions_file" in entry:
        if "indices_file" not in entry:
            raise SceneError(f"mesh {name!r} has positions_file but no indices_file")
        pos = np.load(os.path.join(base_dir, entry["positions_file"]))
        idx = np.load(os.path.join(base_dir, entry["indices_file"]))
        return TriangleMesh(np.asarray(pos, np.float32),
                            np.asarray(idx, np.uint32), mat, name=name)
    if "indices" not in entry:
        raise SceneError(f"mesh {name!r} has positions but no indices")
    return TriangleMesh(np.asarray(entry["positions"], np.float32),
                        np.asarray(entry["indices"], np.uint32), mat, name=name)


def _resolve_material(entry: dict, mat_index: dict, what: str) -> int:
    ref = entry.get("material")
    if ref is None:
        raise SceneError(f"{what} has no material")
    if ref not in mat_index:
        raise SceneError(f"{what} references unknown material {ref!r}")
    return mat_index[ref]


def scene_from_dict(doc: dict, base_dir: str = ".") -> Scene:
    """Build a Scene from a parsed YAML document."""
    if not isinstance(doc, dict):
        raise SceneError("scene document must be a mapping")

    materials = []
    mat_index = {}
    for mname, spec in (doc.get("materials") or {}).items():
        if not isinstance(spec, dict) or "kind" not in spec:
            raise SceneError(f"material {mname!r} needs a kind")
        try:
            materials.append(Material(
                kind=spec["kind"],
                albedo=_vec3(spec, "albedo", (0.8, 0.8, 0.8)),
                emission=_vec3(spec, "emission", (0.0, 0.0, 0.0)),
                fuzz=float(spec.get("fuzz", 0.0)),
                ior=float(spec.get("ior", 1.5)),
                name=mname))
        except SceneError:
            raise
        except Exception as exc:
            raise SceneError(f"material {mname!r}: {exc}") from None
        mat_index[mname] = len(materials) - 1

    spheres = []
    for i, s in enumerate(doc.get("spheres") or []):
        spheres.append(Sphere(_vec3(s, "center"), float(s["radius"]),
                              _resolve_material(s, mat_index, f"sphere {i}")))

    meshes = []
    for i, m in enumerate(doc.get("meshes") or []):
        meshes.append(_load_mesh(m, mat_index, base_dir, f"mesh{i}"))

    lights = []
    for i, l in enumerate(doc.get("lights") or []):
        lights.append(QuadLight(_vec3(l, "corner"), _vec3(l, "edge_u"),
                                _vec3(l, "edge_v"), _vec3(l, "radiance")))

    env = Environment()
    if "environment" in doc:
        e = doc["environment"]
        env = Environment(kind=e.get("kind", "constant"),
                          color=_vec3(e, "color", (0.0, 0.0, 0.0)),
                          color2=_vec3(e, "color2", (0.0, 0.0, 0.0)))

    camera = None
    if "camera" in doc:
        c = doc["camera"]
        try:
            camera = Camera(position=_vec3(c, "position"),
                            look_at=_vec3(c, "look_at"),
                            up=_vec3(c, "up", (0.0, 1.0, 0.0)),
                            fov=float(c.get("fov", 45.0)))
        except ValueError as exc:
            raise SceneError(f"camera: {exc}") from None

    animation = None
    if "animation" in doc:
        a = doc["animation"]
        target = a.get("mesh")
        by_name = {m.name: i for i, m in enumerate(meshes)}
        if target not in by_name:
            raise SceneError(f"animation targets unknown mesh {target!r}")
        animation = SineDeform(
            mesh_index=by_name[target],
            amplitude=float(a.get("amplitude", 0.25)),
            wavelength=float(a.get("wavelength", 2.0)),
            cycles_per_frame=float(a.get("cycles_per_frame", 0.05)),
            axis=int(a.get("axis", 1)),
            along=int(a.get("along", 0)))

    return Scene(materials=materials, spheres=spheres, meshes=meshes,
                 lights=lights, environment=env, camera=camera,
                 animation=animation, name=str(doc.get("name", "")))


def _bundled_dir():
    return importlib.resources.files("clusterpt") / "scenes"


def list_scenes() -> list:
    """Names of the scenes shipped with the package."""
    return sorted(p.name[:-5] for p in _bundled_dir().iterdir()
                  if p.name.endswith(".yaml"))


def load_scene(name_or_path: str) -> Scene:
    """Load a bundled scene by name or any scene YAML by path."""
    bundled = _bundled_dir() / f"{name_or_path}.yaml"
    if ("/" not in name_or_path and not name_or_path.endswith(".yaml")
            and bundled.is_file()):
        doc = yaml.safe_load(bundled.read_text())
        return scene_from_dict(doc, base_dir=".")
    if not os.path.isfile(name_or_path):
        raise SceneError(f"no bundled scene or file named {name_or_path!r}")
    with open(name_or_path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return scene_from_dict(doc, base_dir=os.path.dirname(
        os.path.abspath(name_or_path)))
