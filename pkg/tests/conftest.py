import numpy as np
import pytest

from clusterpt import threadreg
from clusterpt.buffers import RadianceBuffer
from clusterpt.camera import Camera
from clusterpt.geometry import Sphere, TriangleMesh
from clusterpt.protocol import (CameraEvent, Config, FrameImage, Hello,
                                RadianceBufferMsg, Shutdown, StatsMsg)
from clusterpt.scene import (Environment, Material, MeshDelta, QuadLight,
                             Scene, SceneUpdate)


@pytest.fixture(autouse=True)
def _clean_thread_registry():
    # the registry is process-global; integration tests must not leak
    # principals into each other
    threadreg.clear()
    yield
    threadreg.clear()


def make_floor(material: int = 0, half: float = 4.0) -> TriangleMesh:
    s = half
    return TriangleMesh(
        positions=np.array([[-s, 0, -s], [s, 0, -s], [-s, 0, s], [s, 0, s]],
                           np.float32),
        indices=np.array([[0, 1, 3], [0, 3, 2]], np.int32),
        material=material, name="floor")


@pytest.fixture
def furnace_camera() -> Camera:
    return Camera(position=(0.0, 0.0, 4.0), look_at=(0.0, 0.0, 0.0), fov=30.0)


def furnace_scene(material: Material, camera: Camera,
                  env_color=(1.0, 1.0, 1.0)) -> Scene:
    """One sphere floating in a constant-radiance environment."""
    return Scene(
        materials=[material],
        spheres=[Sphere(center=(0.0, 0.0, 0.0), radius=1.0, material=0)],
        meshes=[], lights=[],
        environment=Environment(kind="constant", color=env_color),
        camera=camera)


def random_camera(rng: np.random.Generator) -> Camera:
    pos = tuple(rng.uniform(-50, 50, 3).tolist())
    look = tuple((np.asarray(pos) + rng.uniform(0.5, 5, 3)).tolist())
    return Camera(position=pos, look_at=look,
                  up=(0.0, 1.0, 0.0), fov=float(rng.uniform(1, 179)))


def random_protocol_message(rng: np.random.Generator):
    """One random instance of a uniformly chosen wire message type."""
    kind = int(rng.integers(0, 8))
    fid = int(rng.integers(0, 2 ** 48))
    if kind == 0:
        return Hello(role=int(rng.integers(0, 3)),
                     node_id=int(rng.integers(0, 2 ** 32)))
    if kind == 1:
        return Config(
            width=int(rng.integers(1, 4096)), height=int(rng.integers(1, 4096)),
            strategy=["stride", "sample", "tile"][int(rng.integers(0, 3))],
            stride_w=int(rng.integers(1, 16)), stride_h=int(rng.integers(1, 16)),
            tile_w=int(rng.integers(1, 256)), tile_h=int(rng.integers(1, 256)),
            per_node_spp=int(rng.integers(1, 1024)),
            participant=int(rng.integers(0, 64)),
            participant_count=int(rng.integers(1, 64)),
            max_depth=int(rng.integers(1, 32)),
            seed_root=int(rng.integers(0, 2 ** 63)),
            scene="scene-é" * int(rng.integers(0, 4)))
    if kind == 2:
        return CameraEvent(fid, random_camera(rng))
    if kind == 3:
        deltas = []
        for _ in range(int(rng.integers(0, 3))):
            n = int(rng.integers(1, 5))
            start = int(rng.integers(0, 100))
            deltas.append(MeshDelta(
                int(rng.integers(0, 8)), [(start, start + n)],
                rng.standard_normal((n, 3)).astype(np.float32)))
        cam = random_camera(rng) if rng.random() < 0.5 else None
        return SceneUpdate(fid, deltas, cam)
    if kind == 4:
        w, h = int(rng.integers(1, 24)), int(rng.integers(1, 24))
        buf = RadianceBuffer(w, h, rng.standard_normal((h, w, 3))
                             .astype(np.float32), int(rng.integers(1, 256)),
                             fid)
        return RadianceBufferMsg(fid, int(rng.integers(0, 64)), buf)
    if kind == 5:
        enc = ["raw-rgb8", "png", "jpeg", "radiance-f32"][int(rng.integers(0, 4))]
        return FrameImage(fid, enc, int(rng.integers(1, 512)),
                          int(rng.integers(1, 512)), int(rng.integers(1, 256)),
                          rng.bytes(int(rng.integers(0, 400))))
    if kind == 6:
        rows = [(f"row_{i}", float(rng.standard_normal()))
                for i in range(int(rng.integers(0, 10)))]
        return StatsMsg(fid, rows)
    return Shutdown(reason="bye ✓" * int(rng.integers(0, 5)))


def assert_messages_equal(a, b) -> None:
    """Structural equality with bitwise array comparison where it matters."""
    assert type(a) is type(b)
    if isinstance(a, RadianceBufferMsg):
        assert (a.frame_id, a.participant) == (b.frame_id, b.participant)
        for f in ("width", "height", "spp", "frame_id"):
            assert getattr(a.buffer, f) == getattr(b.buffer, f)
        assert np.array_equal(a.buffer.rgb, b.buffer.rgb)
        return
    if isinstance(a, SceneUpdate):
        assert a.frame_id == b.frame_id and a.camera == b.camera
        assert len(a.deltas) == len(b.deltas)
        for da, db in zip(a.deltas, b.deltas):
            assert da.mesh_index == db.mesh_index
            assert [tuple(r) for r in da.ranges] == [tuple(r) for r in db.ranges]
            assert np.array_equal(da.positions, db.positions)
        return
    if isinstance(a, StatsMsg):
        assert a.frame_id == b.frame_id
        assert [(n, float(v)) for n, v in a.rows] == \
               [(n, float(v)) for n, v in b.rows]
        return
    assert a == b


def direct_light_scene() -> Scene:
    """Diffuse floor under a small rectangular light, black environment.

    With nothing else in the scene, a 2-segment path budget yields exactly
    the direct illumination, which a test can integrate independently.
    """
    floor_mat = Material("diffuse", albedo=(0.6, 0.6, 0.6))
    light = QuadLight(corner=(-0.5, 2.0, -0.5), edge_u=(1.0, 0.0, 0.0),
                      edge_v=(0.0, 0.0, 1.0), radiance=(5.0, 4.0, 3.0))
    cam = Camera(position=(0.4, 1.5, 3.0), look_at=(0.3, 0.0, 0.2), fov=2.0)
    return Scene(materials=[floor_mat], spheres=[], meshes=[make_floor()],
                 lights=[light],
                 environment=Environment(kind="constant", color=(0.0, 0.0, 0.0)),
                 camera=cam)
