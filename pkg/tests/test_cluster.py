"""Full-stack integration: master + workers + client over real TCP sockets.

Everything runs in-process (spawn="thread") except one subprocess smoke
test, so the suite stays fast while still crossing genuine socket
boundaries, the wire protocol, and every steady-state thread.  Image sizes
are tiny; correctness here is bitwise or near-bitwise agreement with a
single-process render of the same frame, which is the whole point of the
distribution layer.
"""

import json
import struct
import threading
from collections import Counter

import numpy as np
import pytest

from clusterpt.client import CameraPath, run_cluster
from clusterpt.master import Master, MasterConfig
from clusterpt.postfx import decode_image
from clusterpt.protocol import FrameImage, StatsMsg, decode_frame
from clusterpt.rng import SeedNamespace
from clusterpt.scene import MeshDelta, SceneUpdate, apply_scene_update
from clusterpt.sceneio import load_scene
from clusterpt.stats import STAT_ROWS
from clusterpt.threadreg import census, expected_principals
from clusterpt.tracer import render_region
from clusterpt.ws import (OP_BINARY, OP_CLOSE, OP_TEXT, WsBridge, WsError,
                          _camera_from_json, connect_websocket, read_frame,
                          write_frame)

W, H = 48, 32
DEPTH = 4


def oracle_frame(scene_name, frame_id, *, spp, camera=None, seed_root=0,
                 width=W, height=H, max_depth=DEPTH):
    """Single-process render of the frame a cluster should produce."""
    scene = load_scene(scene_name)
    cam = camera if camera is not None else scene.camera
    anim = scene.animation
    if anim is not None:
        base = scene.meshes[anim.mesh_index].positions.copy()
        newpos = anim.positions_at(base, frame_id)
        apply_scene_update(scene, SceneUpdate(frame_id, [MeshDelta(
            anim.mesh_index, [(0, len(newpos))], newpos)]))
    return render_region(scene, cam, size=(width, height), spp=spp,
                         seed=SeedNamespace(seed_root), max_depth=max_depth,
                         frame_id=frame_id)


def cluster_config(**overrides):
    base = dict(width=W, height=H, scene="gloss", strategy="stride",
                per_node_spp=4, max_depth=DEPTH, workers=1,
                encoding="radiance-f32", seed_root=0)
    base.update(overrides)
    return MasterConfig(**base)


# -- correctness across the wire ---------------------------------------------

def test_stride_cluster_matches_monolithic_bitwise():
    cfg = cluster_config(strategy="stride", workers=1)
    report = run_cluster(cfg, frames=2)
    assert report.errors == []
    assert [r.frame_id for r in report.frames] == [0, 1]
    for fid in (0, 1):
        got = report.frame(fid).radiance()
        want = oracle_frame("gloss", fid, spp=cfg.per_node_spp)
        assert got.spp == cfg.per_node_spp
        np.testing.assert_array_equal(got.rgb, want.rgb)


def test_sample_cluster_sums_to_monolithic():
    cfg = cluster_config(strategy="sample", workers=2, per_node_spp=4)
    report = run_cluster(cfg, frames=1)
    assert report.errors == []
    got = report.frame(0).radiance()
    # sample splitting changes only the accumulation grouping
    assert got.spp == 3 * 4
    want = oracle_frame("gloss", 0, spp=12)
    rel = np.abs(got.rgb.astype(np.float64) - want.rgb.astype(np.float64))
    rel /= np.abs(want.rgb.astype(np.float64)) + 1e-6
    assert float(rel.mean()) <= 1e-5


def test_tile_cluster_matches_monolithic_bitwise():
    cfg = cluster_config(strategy="tile", workers=1, tile_size=(16, 16))
    report = run_cluster(cfg, frames=1)
    assert report.errors == []
    got = report.frame(0).radiance()
    want = oracle_frame("gloss", 0, spp=cfg.per_node_spp)
    np.testing.assert_array_equal(got.rgb, want.rgb)


def test_idle_participant_tolerated():
    # one 32x32 tile, two participants: the worker gets no tasks but must
    # still swallow events and scene updates without wedging the session
    cfg = cluster_config(strategy="tile", workers=1, width=32, height=32,
                         tile_size=(32, 32), per_node_spp=2)
    report = run_cluster(cfg, frames=2)
    assert report.errors == []
    assert len(report.frames) == 2
    want = oracle_frame("gloss", 1, spp=2, width=32, height=32)
    np.testing.assert_array_equal(report.frame(1).radiance().rgb, want.rgb)


def test_animated_scene_stays_in_lockstep():
    # a deforming mesh forces per-frame scene updates through the wire; a
    # master/worker disagreement would corrupt the stride interleave
    cfg = cluster_config(scene="deform", strategy="stride", workers=1,
                         per_node_spp=2)
    report = run_cluster(cfg, frames=3)
    assert report.errors == []
    for fid in range(3):
        want = oracle_frame("deform", fid, spp=2)
        np.testing.assert_array_equal(report.frame(fid).radiance().rgb,
                                      want.rgb)
    # the animation must actually move something between frames
    a = report.frame(0).radiance().rgb
    b = report.frame(2).radiance().rgb
    assert not np.array_equal(a, b)


def test_orbit_path_changes_view():
    cfg = cluster_config(workers=0, per_node_spp=2)
    path = CameraPath("orbit", load_scene("gloss").camera,
                      degrees_per_frame=30.0)
    report = run_cluster(cfg, frames=2, path=path)
    assert report.errors == []
    a = report.frame(0).radiance()
    b = report.frame(1).radiance()
    assert not np.array_equal(a.rgb, b.rgb)
    want = oracle_frame("gloss", 1, spp=2, camera=path.camera_at(1))
    np.testing.assert_array_equal(b.rgb, want.rgb)


# -- session mechanics --------------------------------------------------------

def test_client_pacing_respects_window():
    cfg = cluster_config(workers=0, per_node_spp=2)
    report = run_cluster(cfg, frames=6)
    assert report.errors == []
    assert report.events_sent == 6
    # window 2: event n may leave only after frame n-2 has come back
    for n in range(2, 6):
        assert report.frame(n).send_t >= report.frame(n - 2).recv_t


def test_frames_limit_shuts_session_down():
    cfg = cluster_config(workers=0, per_node_spp=2, frames_limit=3)
    report = run_cluster(cfg, frames=10, timeout_s=60.0)
    assert report.shutdown_reason == "frame limit reached"
    assert len(report.frames) == 3
    assert report.errors == []


def test_client_initiated_stop():
    cfg = cluster_config(workers=1, per_node_spp=2)
    report = run_cluster(cfg, frames=2)
    assert report.errors == []
    # the harness says goodbye once it has its frames; master relays the
    # reason to every worker
    assert report.master._stop_reason == "client done"
    assert all(w.stop_reason == "client done" for w in report.workers)
    assert all(w.frames_rendered == 2 for w in report.workers)


def test_stats_rows_complete_every_frame():
    cfg = cluster_config(workers=1, per_node_spp=2)
    report = run_cluster(cfg, frames=3)
    assert report.errors == []
    assert sorted(report.stats) == [0, 1, 2]
    for rows in report.stats.values():
        for name in STAT_ROWS:
            assert name in rows
            assert isinstance(rows[name], float) and rows[name] >= 0.0
    assert report.stat_mean("render_ms", skip=1) > 0.0
    assert report.model_fps(skip=1) > 0.0


def test_thread_census_during_run():
    snapshots = {}

    def on_frame(rec):
        snapshots[rec.frame_id] = census()

    cfg = cluster_config(workers=2, strategy="sample", per_node_spp=2)
    report = run_cluster(cfg, frames=3, on_frame=on_frame)
    assert report.errors == []
    snap = snapshots[1]  # mid-run, every principal alive
    assert len(snap) == expected_principals(2) == 10
    roles = Counter(role for role, _ in snap)
    assert roles == {"client": 2, "master": 4, "worker": 4}


def test_process_spawn_smoke():
    # the real deployment path: master, worker and client as subprocesses
    # talking through the command-line entry points
    cfg = cluster_config(workers=1, per_node_spp=2, width=32, height=24,
                         encoding="png")
    report = run_cluster(cfg, frames=2, spawn="process", timeout_s=90.0)
    assert report.errors == []
    assert len(report.frames) == 2
    img = report.frame(1).image()
    assert img.shape == (24, 32, 3) and img.dtype == np.uint8


def test_unknown_spawn_mode():
    with pytest.raises(ValueError, match="spawn"):
        run_cluster(cluster_config(), frames=1, spawn="fork")


# -- websocket bridge ---------------------------------------------------------

def test_ws_frame_roundtrip_over_socketpair():
    import socket

    a, b = socket.socketpair()
    try:
        cases = [(OP_TEXT, b'{"type":"camera"}', True),
                 (OP_BINARY, bytes(range(256)) * 300, False),  # 16-bit length
                 (OP_CLOSE, struct.pack(">H", 1000) + b"bye", False)]
        for opcode, payload, mask in cases:
            write_frame(a, opcode, payload, mask=mask)
            got_op, got_payload = read_frame(b)
            assert (got_op, got_payload) == (opcode, payload)
    finally:
        a.close()
        b.close()


def test_camera_json_decoding():
    doc = {"type": "camera", "frame_id": 7, "position": [1, 2, 3],
           "look_at": [0, 0, 0], "fov": 45.0}
    ev = _camera_from_json(doc)
    assert ev.frame_id == 7
    assert ev.camera.position == pytest.approx((1.0, 2.0, 3.0))
    assert tuple(ev.camera.up) == (0.0, 1.0, 0.0)  # default
    with pytest.raises(WsError, match="camera"):
        _camera_from_json({"type": "camera", "frame_id": 1})


def test_ws_bridge_end_to_end():
    cfg = cluster_config(workers=0, width=32, height=24, per_node_spp=2,
                         encoding="jpeg")
    master = Master(cfg)
    mt = threading.Thread(target=master.serve, daemon=True)
    mt.start()
    assert master.listening.wait(timeout=30.0)

    bridge = WsBridge("127.0.0.1", master.port)
    bt = threading.Thread(target=bridge.serve, daemon=True)
    bt.start()
    assert bridge.listening.wait(timeout=30.0)

    ws = connect_websocket("127.0.0.1", bridge.port)
    try:
        cam = load_scene("gloss").camera
        for fid in range(2):
            doc = {"type": "camera", "frame_id": fid,
                   "position": list(cam.position),
                   "look_at": list(cam.look_at),
                   "up": list(cam.up), "fov": cam.fov}
            write_frame(ws, OP_TEXT, json.dumps(doc).encode(), mask=True)

        frames, stats = {}, {}
        while len(frames) < 2 or len(stats) < 2:
            opcode, payload = read_frame(ws)
            assert opcode == OP_BINARY
            msg, offset = decode_frame(payload)
            assert offset == len(payload)  # one envelope per ws frame
            if isinstance(msg, FrameImage):
                frames[msg.frame_id] = msg
            elif isinstance(msg, StatsMsg):
                stats[msg.frame_id] = msg

        img = decode_image("jpeg", frames[1].data, 32, 24)
        assert img.shape == (24, 32, 3)
        assert {row for row, _ in stats[0].rows} == set(STAT_ROWS)

        write_frame(ws, OP_TEXT,
                    json.dumps({"type": "shutdown",
                                "reason": "viewer closed"}).encode(),
                    mask=True)
        while True:
            opcode, payload = read_frame(ws)
            if opcode == OP_CLOSE:
                break
        assert struct.unpack(">H", payload[:2])[0] == 1000
        assert payload[2:].decode("utf-8") == "viewer closed"
    finally:
        ws.close()
    mt.join(timeout=30.0)
    bt.join(timeout=30.0)
    assert not mt.is_alive() and not bt.is_alive()
    assert bridge.frames_forwarded == 2
    assert master._stop_reason == "viewer closed"
