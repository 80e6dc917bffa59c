"""Master process: owns the cluster, renders its own share, merges, streams.

Steady-state threads (census: 2 + workers):

    render loop   reads the client socket directly for camera events,
                  evaluates animation into scene updates, broadcasts
                  update + camera event to workers, renders participant 0's
                  share, collects worker buffers, merges, hands the merged
                  frame to the post queue
    post loop     denoise / tone map / compress / send FRAME_IMAGE + STATS
    reader x w    one per worker socket, feeding an SPSC queue of buffers

The render loop and post loop form a two-stage pipeline over consecutive
frames: frame f is being encoded while f+1 renders.

Camera events are forwarded to workers byte-identically: the broadcast
re-sends the exact frame the client produced, so every participant parses
the same float64 camera.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass, field

from clusterpt.buffers import RadianceBuffer
from clusterpt.distribution import STRATEGIES, merge, plan
from clusterpt.errors import PipelineError, ProtocolError
from clusterpt.pipeline import POISON, RingQueue, DEFAULT_QUEUE_CAPACITY
from clusterpt.postfx import denoise_radiance, encode_image, tone_curve
from clusterpt.protocol import (CameraEvent, Config, Connection, FrameImage,
                                Hello, RadianceBufferMsg, Shutdown, StatsMsg,
                                ROLE_CLIENT, ROLE_WORKER, encode_message,
                                handshake_accept)
from clusterpt.scene import MeshDelta, SceneUpdate, apply_scene_update
from clusterpt.sceneio import load_scene
from clusterpt.stats import FrameStats, StageTimer, StatsLog
from clusterpt.threadreg import register_current, spawn_registered
from clusterpt.tracer import render_region

__all__ = ["MasterConfig", "Master"]

log = logging.getLogger(__name__)

_COLLECT_TIMEOUT_FLOOR_S = 30.0
_RENDEZVOUS_TIMEOUT_S = 120.0


@dataclass
class MasterConfig:
    """Everything a master needs to run one cluster session."""

    width: int = 320
    height: int = 180
    scene: str = "gloss"
    strategy: str = "stride"
    per_node_spp: int = 16
    max_depth: int = 10
    seed_root: int = 0
    workers: int = 0               # worker processes to wait for
    tile_size: tuple = (32, 32)
    encoding: str = "jpeg"         # FRAME_IMAGE payload encoding
    denoise: bool = False
    frames_limit: int | None = None
    host: str = "127.0.0.1"
    port: int = 0                  # 0 = ephemeral
    ready_file: str | None = None  # write "host port" once listening
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")


class _WorkerLink:
    """Master-side state for one connected worker."""

    def __init__(self, conn: Connection, participant: int, capacity: int):
        self.conn = conn
        self.participant = participant
        self.queue = RingQueue(capacity)
        self.thread: threading.Thread | None = None


class Master:
    """One cluster session.  serve() blocks until the session ends."""

    def __init__(self, config: MasterConfig):
        self.config = config
        self.scene = load_scene(config.scene)
        self.stats_log = StatsLog()
        self.port: int | None = None
        self.listening = threading.Event()
        self.frames_sent = 0
        self._workers: list = []
        self._client: Connection | None = None
        self._post_q: RingQueue | None = None
        self._stop_reason = ""
        self._render_ms_history: list = []

    # -- setup ---------------------------------------------------------

    def _rendezvous(self, server: socket.socket) -> None:
        """Accept connections until one client and all workers are present."""
        cfg = self.config
        participant = 1  # master is participant 0
        server.settimeout(_RENDEZVOUS_TIMEOUT_S)
        while self._client is None or len(self._workers) < cfg.workers:
            try:
                sock, addr = server.accept()
            except socket.timeout:
                raise PipelineError(
                    f"rendezvous timed out with {len(self._workers)} of "
                    f"{cfg.workers} workers and "
                    f"{'a' if self._client else 'no'} client") from None
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = Connection(sock, name=f"{addr[0]}:{addr[1]}")
            try:
                hello = handshake_accept(conn, node_id=0)
            except ProtocolError as exc:
                log.warning("rejected connection from %s: %s", conn.name, exc)
                conn.close()
                continue
            if hello.role == ROLE_CLIENT:
                if self._client is not None:
                    conn.send(Shutdown("a client is already connected"))
                    conn.close()
                    continue
                self._client = conn
                log.info("client connected from %s", conn.name)
            else:
                if len(self._workers) >= cfg.workers:
                    conn.send(Shutdown("no worker slots left"))
                    conn.close()
                    continue
                link = _WorkerLink(conn, participant, cfg.queue_capacity)
                self._workers.append(link)
                log.info("worker %d connected from %s", participant, conn.name)
                participant += 1

    def _send_configs(self) -> None:
        cfg = self.config
        count = len(self._workers) + 1
        for link in self._workers:
            link.conn.send(Config(
                width=cfg.width, height=cfg.height, strategy=cfg.strategy,
                tile_w=cfg.tile_size[0], tile_h=cfg.tile_size[1],
                per_node_spp=cfg.per_node_spp,
                participant=link.participant, participant_count=count,
                max_depth=cfg.max_depth, seed_root=cfg.seed_root,
                scene=cfg.scene))

    # -- steady-state threads -------------------------------------------

    def _reader_loop(self, link: _WorkerLink) -> None:
        try:
            while True:
                msg = link.conn.recv()
                if msg is None or isinstance(msg, Shutdown):
                    break
                if isinstance(msg, RadianceBufferMsg):
                    link.queue.push(msg)
                else:
                    log.warning("worker %d sent unexpected %s",
                                link.participant, type(msg).__name__)
        except (OSError, ProtocolError) as exc:
            log.warning("worker %d reader stopped: %s", link.participant, exc)
        link.queue.push(POISON)

    def _post_loop(self) -> None:
        cfg = self.config
        while True:
            _, item = self._post_q.pop()
            if item is POISON:
                break
            fid, merged, stats = item
            try:
                mean = merged.mean()
                if cfg.denoise:
                    with StageTimer(stats, "denoise_ms"):
                        mean = denoise_radiance(mean)
                else:
                    stats.set("denoise_ms", 0.0)
                with StageTimer(stats, "tonemap_ms"):
                    rgb8 = tone_curve(mean)
                with StageTimer(stats, "compression_ms"):
                    if cfg.encoding == "radiance-f32":
                        data = merged.to_bytes()
                    else:
                        data = encode_image(rgb8, cfg.encoding)
                self._client.send(FrameImage(fid, cfg.encoding, merged.width,
                                             merged.height, merged.spp, data))
                self._client.send(StatsMsg(fid, stats.rows()))
                self.stats_log.append(stats)
                self.frames_sent += 1
            except OSError as exc:
                log.warning("client send failed on frame %d: %s", fid, exc)
                break

    # -- frame production ------------------------------------------------

    def _collect_timeout(self) -> float:
        if not self._render_ms_history:
            return _COLLECT_TIMEOUT_FLOOR_S
        mean_s = (sum(self._render_ms_history)
                  / len(self._render_ms_history)) / 1e3
        return max(10.0 * mean_s, _COLLECT_TIMEOUT_FLOOR_S)

    def _render_frame(self, fid: int, event_bytes: bytes, camera,
                      my_tasks: list, all_tasks: list) -> tuple:
        cfg = self.config
        stats = FrameStats(fid)

        with StageTimer(stats, "scene_update_ms"):
            update_bytes = None
            anim = self.scene.animation
            if anim is not None:
                base = self._anim_base
                newpos = anim.positions_at(base, fid)
                update = SceneUpdate(fid, [MeshDelta(
                    anim.mesh_index, [(0, len(newpos))], newpos)])
                update_bytes = encode_message(update)
                apply_scene_update(self.scene, update)
            for link in self._workers:
                if update_bytes is not None:
                    link.conn.sock.sendall(update_bytes)
                # forward the client's event bytes untouched
                link.conn.sock.sendall(event_bytes)

        with StageTimer(stats, "render_ms"):
            mine = [(task, render_region(
                self.scene, camera, size=task.size, spp=task.spp,
                seed=task.seed, transform=task.transform, origin=task.origin,
                grid_dims=task.grid_dims, max_depth=cfg.max_depth,
                frame_id=fid)) for task in my_tasks]
        self._render_ms_history.append(stats.values["render_ms"])
        if len(self._render_ms_history) > 5:
            self._render_ms_history.pop(0)

        with StageTimer(stats, "distribution_overhead_ms"):
            results = list(mine)
            deadline = time.monotonic() + self._collect_timeout()
            for link in self._workers:
                for task in all_tasks[link.participant]:
                    ok, msg = link.queue.pop(
                        timeout=max(0.0, deadline - time.monotonic()))
                    if not ok or msg is POISON:
                        raise PipelineError(
                            f"worker {link.participant} result missing",
                            frame_id=fid)
                    if msg.frame_id != fid:
                        raise PipelineError(
                            f"worker {link.participant} answered frame "
                            f"{msg.frame_id} during frame {fid}", frame_id=fid)
                    results.append((task, msg.buffer))

        with StageTimer(stats, "merge_ms"):
            merged = merge(cfg.strategy, (cfg.width, cfg.height),
                           len(self._workers) + 1, results)
            merged.frame_id = fid
        return merged, stats

    def _render_loop(self) -> None:
        cfg = self.config
        count = len(self._workers) + 1
        all_tasks = plan(cfg.strategy, (cfg.width, cfg.height), count,
                         cfg.per_node_spp, cfg.seed_root, cfg.tile_size)
        my_tasks = all_tasks[0]
        anim = self.scene.animation
        if anim is not None:
            self._anim_base = self.scene.meshes[anim.mesh_index].positions.copy()

        while True:
            t0 = time.perf_counter()
            try:
                msg = self._client.recv()
            except (OSError, ProtocolError) as exc:
                self._stop_reason = f"client receive failed: {exc}"
                break
            wait_ms = (time.perf_counter() - t0) * 1e3
            if msg is None or isinstance(msg, Shutdown):
                self._stop_reason = (msg.reason if isinstance(msg, Shutdown)
                                     else "client disconnected")
                break
            if not isinstance(msg, CameraEvent):
                log.warning("ignoring unexpected %s from client",
                            type(msg).__name__)
                continue

            merged, stats = self._render_frame(
                msg.frame_id, encode_message(msg), msg.camera,
                my_tasks, all_tasks)
            stats.set("event_wait_ms", wait_ms)
            self._post_q.push((msg.frame_id, merged, stats))

            if (cfg.frames_limit is not None
                    and msg.frame_id + 1 >= cfg.frames_limit):
                self._stop_reason = "frame limit reached"
                break

    # -- lifecycle -------------------------------------------------------

    def serve(self) -> None:
        """Run the full session: rendezvous, render until stop, tear down."""
        cfg = self.config
        register_current("master", "render")
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((cfg.host, cfg.port))
        server.listen(cfg.workers + 2)
        self.port = server.getsockname()[1]
        if cfg.ready_file:
            with open(cfg.ready_file, "w", encoding="utf-8") as fh:
                fh.write(f"{cfg.host} {self.port}\n")
        self.listening.set()
        log.info("master listening on %s:%d", cfg.host, self.port)

        try:
            self._rendezvous(server)
        finally:
            server.close()
        self._send_configs()

        self._post_q = RingQueue(cfg.queue_capacity)
        post_thread = spawn_registered("master", "post", self._post_loop)
        for i, link in enumerate(self._workers):
            link.thread = spawn_registered("master", f"reader-{i + 1}",
                                           self._reader_loop, (link,))
        try:
            self._render_loop()
        except PipelineError as exc:
            self._stop_reason = str(exc)
            log.error("render loop aborted: %s", exc)
            raise
        finally:
            self._post_q.push(POISON)
            post_thread.join(timeout=30.0)
            reason = self._stop_reason or "session over"
            for link in self._workers:
                try:
                    link.conn.send(Shutdown(reason))
                except OSError:
                    pass
            if self._client is not None:
                try:
                    self._client.send(Shutdown(reason))
                except OSError:
                    pass
            for link in self._workers:
                link.conn.close()
            if self._client is not None:
                self._client.close()
        log.info("master done after %d frames (%s)", self.frames_sent, reason)
