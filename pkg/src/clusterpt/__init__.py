"""clusterpt: deterministic CPU path tracing distributed over local processes.

A master process fans frames out to worker processes over a small binary TCP
protocol, merges their partial radiance buffers, post-processes and streams
displayable frames back to a client.  Rendering is bitwise deterministic:
every sample's random stream is keyed by image position and sample index, so
any partition of the work reproduces the single-process result exactly.
"""

from clusterpt.buffers import RadianceBuffer
from clusterpt.camera import Camera, PixelTransform, Ray, sample_camera_ray
from clusterpt.scene import Material, Scene, SceneUpdate, apply_scene_update
from clusterpt.tracer import intersect, render_region
from clusterpt.bvh import Bvh, build_bvh, refit_bvh
from clusterpt.postfx import tone_map
from clusterpt.sceneio import list_scenes, load_scene
from clusterpt.client import CameraPath, ClientHarness, RunReport, run_cluster
from clusterpt.master import Master, MasterConfig
from clusterpt.worker import Worker

__version__ = "0.1.0"

__all__ = [
    "Bvh",
    "Camera",
    "CameraPath",
    "ClientHarness",
    "Master",
    "MasterConfig",
    "Material",
    "PixelTransform",
    "RadianceBuffer",
    "Ray",
    "RunReport",
    "Scene",
    "SceneUpdate",
    "Worker",
    "apply_scene_update",
    "build_bvh",
    "intersect",
    "list_scenes",
    "load_scene",
    "refit_bvh",
    "render_region",
    "run_cluster",
    "sample_camera_ray",
    "tone_map",
]
