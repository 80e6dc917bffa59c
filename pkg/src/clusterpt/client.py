"""Scripted client: drives a cluster with camera events and measures it.

The harness keeps a bounded number of camera events in flight (default 2).
Event n+1 leaves only once frame n-1 has arrived, so the master's pipeline
stays fed without the client running ahead of what it has seen; the very
first two events bootstrap the pipeline.  Measured fps is taken from frame
arrival times after the warm-up frames.

Two steady-state threads: this one (sends events, owns pacing) and the
receiver (decodes FRAME_IMAGE / STATS as they arrive).

run_cluster() stands up a whole deployment around the harness, either as
threads in this process (fast, inspectable, used by the data-flow tests) or
as real subprocesses through the command-line entry points (used by the
timing runs, where process isolation keeps the measurement honest).
"""

from __future__ import annotations

import logging
import math
import os
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from clusterpt.buffers import RadianceBuffer
from clusterpt.camera import Camera
from clusterpt.errors import PipelineError, ProtocolError
from clusterpt.postfx import decode_image
from clusterpt.protocol import (CameraEvent, Connection, FrameImage, Shutdown,
                                StatsMsg, ROLE_CLIENT, handshake_connect)
from clusterpt.sceneio import load_scene
from clusterpt.stats import predicted_fps
from clusterpt.threadreg import register_current, spawn_registered
from clusterpt.worker import Worker, connect_with_retry

__all__ = ["CameraPath", "FrameRecord", "RunReport", "ClientHarness",
           "run_cluster", "rmse"]

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 2


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    """Root-mean-square difference, accumulated in float64."""
    a64 = np.asarray(a, np.float64)
    b64 = np.asarray(b, np.float64)
    if a64.shape != b64.shape:
        raise ValueError(f"shape mismatch {a64.shape} vs {b64.shape}")
    return float(np.sqrt(np.mean((a64 - b64) ** 2)))


@dataclass(frozen=True)
class CameraPath:
    """Deterministic camera-per-frame schedule.

    kind "hold" repeats the base camera; "orbit" circles it around the
    look-at point in the horizontal plane, degrees_per_frame per frame.
    """

    kind: str
    camera: Camera
    degrees_per_frame: float = 1.5

    def __post_init__(self):
        if self.kind not in ("hold", "orbit"):
            raise ValueError(f"unknown camera path kind {self.kind!r}")

    def camera_at(self, frame_id: int) -> Camera:
        if self.kind == "hold":
            return self.camera
        target = np.asarray(self.camera.look_at, np.float64)
        rel = np.asarray(self.camera.position, np.float64) - target
        radius = math.hypot(rel[0], rel[2])
        theta = (math.atan2(rel[2], rel[0])
                 + math.radians(self.degrees_per_frame) * frame_id)
        pos = target + np.array([radius * math.cos(theta), rel[1],
                                 radius * math.sin(theta)])
        return Camera(position=tuple(pos), look_at=tuple(target),
                      up=self.camera.up, fov=self.camera.fov)


@dataclass
class FrameRecord:
    """One received frame plus its round-trip timestamps (perf_counter)."""

    frame_id: int
    message: FrameImage
    recv_t: float
    send_t: float | None

    @property
    def latency_s(self) -> float | None:
        if self.send_t is None:
            return None
        return self.recv_t - self.send_t

    def image(self) -> np.ndarray:
        """Decoded (h, w, 3) uint8; not valid for radiance-f32 payloads."""
        m = self.message
        return decode_image(m.encoding, m.data, m.width, m.height)

    def radiance(self) -> RadianceBuffer:
        """The raw merged buffer; only for radiance-f32 payloads."""
        m = self.message
        if m.encoding != "radiance-f32":
            raise ValueError(f"frame is {m.encoding}, not radiance-f32")
        return RadianceBuffer.from_bytes(m.width, m.height, m.spp, m.data,
                                         m.frame_id)


@dataclass
class RunReport:
    """Everything one client run observed."""

    frames: list = field(default_factory=list)      # FrameRecord, ordered
    stats: dict = field(default_factory=dict)       # frame_id -> {row: ms}
    events_sent: int = 0
    shutdown_reason: str = ""
    errors: list = field(default_factory=list)
    wall_s: float = 0.0

    def frame(self, frame_id: int) -> FrameRecord:
        for rec in self.frames:
            if rec.frame_id == frame_id:
                return rec
        raise KeyError(f"frame {frame_id} was never received")

    def measured_fps(self, skip: int = 2) -> float:
        """Arrival rate over the steady frames (first `skip` discarded)."""
        recs = self.frames[skip:]
        if len(recs) < 2:
            raise ValueError(f"need at least {skip + 2} frames to measure fps")
        span = recs[-1].recv_t - recs[0].recv_t
        if span <= 0:
            return float("inf")
        return (len(recs) - 1) / span

    def mean_latency_s(self, skip: int = 2) -> float:
        lats = [r.latency_s for r in self.frames[skip:]
                if r.latency_s is not None]
        if not lats:
            raise ValueError("no latency samples")
        return sum(lats) / len(lats)

    def stat_mean(self, name: str, skip: int = 2) -> float:
        vals = [rows[name] for fid, rows in sorted(self.stats.items())[skip:]
                if name in rows]
        if not vals:
            raise ValueError(f"no {name!r} stats rows")
        return sum(vals) / len(vals)

    def model_fps(self, skip: int = 2) -> float:
        """Master-reported fps prediction from its stage timings."""
        return predicted_fps(self.stat_mean("scene_update_ms", skip),
                             self.stat_mean("render_ms", skip))

    def summary(self) -> dict:
        out = {
            "frames_received": len(self.frames),
            "events_sent": self.events_sent,
            "shutdown_reason": self.shutdown_reason,
            "wall_s": round(self.wall_s, 3),
            "errors": list(self.errors),
        }
        try:
            out["measured_fps"] = round(self.measured_fps(), 3)
            out["model_fps"] = round(self.model_fps(), 3)
            out["mean_latency_ms"] = round(self.mean_latency_s() * 1e3, 3)
        except (ValueError, KeyError):
            pass
        return out


class ClientHarness:
    """Sends `frames` camera events with bounded in-flight pacing."""

    def __init__(self, host: str, port: int, frames: int,
                 path: CameraPath, *, window: int = DEFAULT_WINDOW,
                 node_id: int = 1, timeout_s: float = 600.0,
                 on_frame=None):
        if frames < 1:
            raise ValueError("frames must be >= 1")
        if window < 1:
            raise ValueError("window must be >= 1")
        self.host = host
        self.port = port
        self.frames = frames
        self.path = path
        self.window = window
        self.node_id = node_id
        self.timeout_s = timeout_s
        self.on_frame = on_frame

    def run(self) -> RunReport:
        register_current("client", "main")
        report = RunReport()
        send_times: dict = {}
        cond = threading.Condition()
        state = {"received": 0, "stopped": False}
        deadline = time.monotonic() + self.timeout_s
        t_start = time.perf_counter()

        sock = connect_with_retry(self.host, self.port)
        conn = Connection(sock, name=f"master@{self.host}:{self.port}")
        handshake_connect(conn, ROLE_CLIENT, self.node_id)

        def recv_loop() -> None:
            try:
                while True:
                    msg = conn.recv()
                    now = time.perf_counter()
                    if msg is None:
                        report.shutdown_reason = (report.shutdown_reason
                                                  or "master disconnected")
                        break
                    if isinstance(msg, Shutdown):
                        report.shutdown_reason = msg.reason
                        break
                    if isinstance(msg, FrameImage):
                        rec = FrameRecord(msg.frame_id, msg, now,
                                          send_times.get(msg.frame_id))
                        report.frames.append(rec)
                        with cond:
                            state["received"] += 1
                            cond.notify_all()
                        if self.on_frame is not None:
                            self.on_frame(rec)
                    elif isinstance(msg, StatsMsg):
                        report.stats[msg.frame_id] = dict(msg.rows)
            except (OSError, ProtocolError) as exc:
                report.errors.append(f"receive failed: {exc}")
            with cond:
                state["stopped"] = True
                cond.notify_all()

        receiver = spawn_registered("client", "recv", recv_loop)

        def remaining() -> float:
            return deadline - time.monotonic()

        try:
            sent = 0
            while sent < self.frames:
                with cond:
                    ok = cond.wait_for(
                        lambda: state["stopped"]
                        or state["received"] + self.window > sent,
                        timeout=max(0.0, remaining()))
                    if not ok:
                        raise PipelineError(
                            f"timed out pacing event {sent} "
                            f"({state['received']} frames received)")
                    if state["stopped"]:
                        break
                send_times[sent] = time.perf_counter()
                try:
                    conn.send(CameraEvent(sent, self.path.camera_at(sent)))
                except OSError as exc:
                    report.errors.append(f"event send failed: {exc}")
                    break
                sent += 1
            report.events_sent = sent

            with cond:
                ok = cond.wait_for(
                    lambda: state["stopped"] or state["received"] >= sent,
                    timeout=max(0.0, remaining()))
                if not ok:
                    raise PipelineError(
                        f"timed out waiting for frames "
                        f"({state['received']} of {sent})")
            if not state["stopped"]:
                try:
                    conn.send(Shutdown("client done"))
                except OSError:
                    pass
            receiver.join(timeout=10.0)
        finally:
            conn.close()
            receiver.join(timeout=5.0)
            report.wall_s = time.perf_counter() - t_start
        report.frames.sort(key=lambda r: r.frame_id)
        return report


# -- deployment orchestration ---------------------------------------------

def _thread_cluster(config, frames: int, path: CameraPath, timeout_s: float,
                    on_frame) -> RunReport:
    from clusterpt.master import Master

    errors: list = []
    master = Master(config)

    def run_master() -> None:
        try:
            master.serve()
        except Exception as exc:  # noqa: BLE001 - reported to the caller
            errors.append(f"master: {exc!r}")

    master_t = threading.Thread(target=run_master, name="master:serve",
                                daemon=True)
    master_t.start()
    if not master.listening.wait(timeout=30.0):
        raise PipelineError("master never started listening")

    workers = [Worker(config.host, master.port, node_id=i + 1)
               for i in range(config.workers)]

    def run_worker(w: Worker) -> None:
        try:
            w.run()
        except Exception as exc:  # noqa: BLE001
            errors.append(f"worker {w.node_id}: {exc!r}")

    worker_ts = [threading.Thread(target=run_worker, args=(w,),
                                  name=f"worker:{w.node_id}", daemon=True)
                 for w in workers]
    for t in worker_ts:
        t.start()

    harness = ClientHarness(config.host, master.port, frames, path,
                            timeout_s=timeout_s, on_frame=on_frame)
    try:
        report = harness.run()
    finally:
        master_t.join(timeout=60.0)
        for t in worker_ts:
            t.join(timeout=30.0)
    if master_t.is_alive():
        errors.append("master thread did not exit")
    for w, t in zip(workers, worker_ts):
        if t.is_alive():
            errors.append(f"worker {w.node_id} thread did not exit")
    report.errors.extend(errors)
    report.workers = workers  # inspectable post-mortem state for tests
    report.master = master
    return report


def _master_argv(config, ready_file: str) -> list:
    argv = [sys.executable, "-m", "clusterpt", "master",
            "--scene", config.scene,
            "--width", str(config.width), "--height", str(config.height),
            "--strategy", config.strategy, "--spp", str(config.per_node_spp),
            "--workers", str(config.workers),
            "--max-depth", str(config.max_depth),
            "--seed-root", str(config.seed_root),
            "--encoding", config.encoding,
            "--tile-w", str(config.tile_size[0]),
            "--tile-h", str(config.tile_size[1]),
            "--host", config.host, "--port", str(config.port),
            "--ready-file", ready_file]
    if config.denoise:
        argv.append("--denoise")
    if config.frames_limit is not None:
        argv.extend(["--frames", str(config.frames_limit)])
    return argv


def _process_cluster(config, frames: int, path: CameraPath, timeout_s: float,
                     on_frame) -> RunReport:
    procs: list = []
    errors: list = []
    with tempfile.TemporaryDirectory(prefix="clusterpt-") as td:
        ready = os.path.join(td, "ready")
        mproc = subprocess.Popen(_master_argv(config, ready),
                                 stdout=subprocess.DEVNULL,
                                 stderr=subprocess.PIPE, text=True)
        procs.append(("master", mproc))
        host, port = None, None
        deadline = time.monotonic() + 30.0
        while time.monotonic() < deadline:
            if mproc.poll() is not None:
                raise PipelineError(
                    f"master exited early: {mproc.stderr.read()[-2000:]}")
            try:
                with open(ready, encoding="utf-8") as fh:
                    text = fh.read().strip()
                if text:
                    host, port = text.split()
                    port = int(port)
                    break
            except FileNotFoundError:
                pass
            time.sleep(0.02)
        if port is None:
            raise PipelineError("master never wrote its ready file")

        for i in range(config.workers):
            wproc = subprocess.Popen(
                [sys.executable, "-m", "clusterpt", "worker",
                 "--connect", f"{host}:{port}", "--node-id", str(i + 1)],
                stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, text=True)
            procs.append((f"worker-{i + 1}", wproc))

        try:
            harness = ClientHarness(host, port, frames, path,
                                    timeout_s=timeout_s, on_frame=on_frame)
            report = harness.run()
        finally:
            for name, proc in procs:
                try:
                    proc.wait(timeout=60.0)
                except subprocess.TimeoutExpired:
                    proc.kill()
                    proc.wait()
                    errors.append(f"{name} had to be killed")
                if proc.returncode not in (0, None):
                    tail = (proc.stderr.read() or "")[-2000:]
                    errors.append(
                        f"{name} exited {proc.returncode}: {tail}")
                proc.stderr.close()
    report.errors.extend(errors)
    return report


def run_cluster(config, frames: int, *, path: CameraPath | None = None,
                spawn: str = "thread", timeout_s: float = 600.0,
                on_frame=None) -> RunReport:
    """Stand up master + workers, drive them for `frames`, tear down.

    spawn "thread" keeps every component in this process; "process" launches
    them through the command-line entry points for honest timing isolation.
    """
    if path is None:
        path = CameraPath("hold", load_scene(config.scene).camera)
    if spawn == "thread":
        return _thread_cluster(config, frames, path, timeout_s, on_frame)
    if spawn == "process":
        return _process_cluster(config, frames, path, timeout_s, on_frame)
    raise ValueError(f"unknown spawn mode {spawn!r}")
