"""Worker process: renders its share of every frame the master announces.

Two steady-state threads: the render loop owns the socket's receive side
and all rendering; the sender drains a small ring queue so a slow network
never stalls the next frame's rays (and a slow render never leaves the
master starved of buffers it could already be merging).

The worker derives its task list locally from the CONFIG message: the plan
is a pure function of (strategy, image size, participant count, spp, seed),
so master and workers agree on the split without shipping task objects.
"""

from __future__ import annotations

import logging
import socket
import time

from clusterpt.distribution import plan
from clusterpt.errors import HandshakeError, ProtocolError
from clusterpt.pipeline import POISON, RingQueue, DEFAULT_QUEUE_CAPACITY
from clusterpt.protocol import (CameraEvent, Config, Connection,
                                RadianceBufferMsg, Shutdown, ROLE_WORKER,
                                handshake_connect)
from clusterpt.scene import SceneUpdate, apply_scene_update
from clusterpt.sceneio import load_scene
from clusterpt.threadreg import register_current, spawn_registered
from clusterpt.tracer import render_region

__all__ = ["Worker", "connect_with_retry"]

log = logging.getLogger(__name__)

_CONNECT_RETRY_S = 0.05


def connect_with_retry(host: str, port: int, deadline_s: float = 30.0) -> socket.socket:
    """Dial the master, retrying while it is still coming up."""
    deadline = time.monotonic() + deadline_s
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=10.0)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.settimeout(None)
            return sock
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(_CONNECT_RETRY_S)


class Worker:
    """One rendering participant.  run() blocks until the master says stop."""

    def __init__(self, host: str, port: int, node_id: int = 0,
                 queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
        self.host = host
        self.port = port
        self.node_id = node_id
        self.queue_capacity = queue_capacity
        self.scene = None
        self.config: Config | None = None
        self.frames_rendered = 0
        self.stop_reason = ""

    def _sender_loop(self, conn: Connection, queue: RingQueue) -> None:
        while True:
            _, msg = queue.pop()
            if msg is POISON:
                return
            try:
                conn.send(msg)
            except OSError as exc:
                log.warning("send to master failed: %s", exc)
                return

    def run(self) -> None:
        register_current("worker", "render")
        sock = connect_with_retry(self.host, self.port)
        conn = Connection(sock, name=f"master@{self.host}:{self.port}")
        try:
            handshake_connect(conn, ROLE_WORKER, self.node_id)
            cfg = conn.recv(timeout=60.0)
            if not isinstance(cfg, Config):
                raise HandshakeError(
                    f"expected CONFIG, got {type(cfg).__name__ if cfg else 'EOF'}")
            self.config = cfg
            self.scene = load_scene(cfg.scene)
            tasks = plan(cfg.strategy, (cfg.width, cfg.height),
                         cfg.participant_count, cfg.per_node_spp,
                         cfg.seed_root, (cfg.tile_w, cfg.tile_h))[cfg.participant]
            log.info("worker %d configured: %s %dx%d, %d task(s)",
                     cfg.participant, cfg.strategy, cfg.width, cfg.height,
                     len(tasks))

            send_q = RingQueue(self.queue_capacity)
            sender = spawn_registered("worker", "send", self._sender_loop,
                                      (conn, send_q))
            try:
                while True:
                    msg = conn.recv()
                    if msg is None:
                        self.stop_reason = "master disconnected"
                        break
                    if isinstance(msg, Shutdown):
                        self.stop_reason = msg.reason
                        break
                    if isinstance(msg, SceneUpdate):
                        apply_scene_update(self.scene, msg)
                        continue
                    if isinstance(msg, CameraEvent):
                        for task in tasks:
                            buf = render_region(
                                self.scene, msg.camera, size=task.size,
                                spp=task.spp, seed=task.seed,
                                transform=task.transform, origin=task.origin,
                                grid_dims=task.grid_dims,
                                max_depth=cfg.max_depth,
                                frame_id=msg.frame_id)
                            send_q.push(RadianceBufferMsg(
                                msg.frame_id, cfg.participant, buf))
                        self.frames_rendered += 1
                        continue
                    log.warning("ignoring unexpected %s", type(msg).__name__)
            finally:
                send_q.push(POISON)
                sender.join(timeout=30.0)
        except (OSError, ProtocolError) as exc:
            self.stop_reason = self.stop_reason or str(exc)
            log.warning("worker stopping: %s", exc)
            raise
        finally:
            conn.close()
        log.info("worker %d done after %d frames (%s)",
                 self.config.participant if self.config else -1,
                 self.frames_rendered, self.stop_reason)
