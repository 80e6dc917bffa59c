"""WebSocket bridge: lets a browser drive the cluster as the client.

The bridge dials the master over the normal TCP protocol (role: client) and
accepts one WebSocket peer.  Downstream, every FRAME_IMAGE and STATS message
is forwarded as one binary WebSocket frame carrying the exact wire envelope,
so the browser runs the same decoder as any other node.  Upstream, the
browser sends JSON text frames:

    {"type": "camera", "frame_id": n, "position": [x,y,z],
     "look_at": [x,y,z], "up": [x,y,z], "fov": degrees}
    {"type": "shutdown", "reason": "..."}

Only the parts of RFC 6455 this needs are implemented: single-fragment
text/binary frames, close, and ping/pong.  That is deliberate; both ends of
this socket are ours.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import socket
import struct
import threading

from clusterpt.camera import Camera
from clusterpt.errors import ProtocolError
from clusterpt.protocol import (CameraEvent, Connection, FrameImage, Shutdown,
                                StatsMsg, ROLE_CLIENT, encode_message,
                                handshake_connect)
from clusterpt.threadreg import register_current, spawn_registered
from clusterpt.worker import connect_with_retry

__all__ = ["WsError", "accept_websocket", "connect_websocket", "read_frame",
           "write_frame", "OP_TEXT", "OP_BINARY", "OP_CLOSE", "OP_PING",
           "OP_PONG", "WsBridge"]

log = logging.getLogger(__name__)

_GUID = b"258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_MAX_WS_PAYLOAD = 256 * 1024 * 1024

OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WsError(ProtocolError):
    """WebSocket handshake or framing violation."""


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise WsError(f"socket closed {got} bytes into a {n}-byte read")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _read_http_head(sock: socket.socket, limit: int = 65536) -> bytes:
    buf = bytearray()
    while b"\r\n\r\n" not in buf:
        if len(buf) > limit:
            raise WsError("HTTP header block too large")
        chunk = sock.recv(4096)
        if not chunk:
            raise WsError("socket closed during HTTP handshake")
        buf.extend(chunk)
    return bytes(buf)


def accept_websocket(sock: socket.socket) -> None:
    """Server side of the opening handshake on a fresh TCP connection."""
    head = _read_http_head(sock)
    lines = head.split(b"\r\n")
    key = None
    for line in lines[1:]:
        if b":" not in line:
            continue
        name, _, value = line.partition(b":")
        if name.strip().lower() == b"sec-websocket-key":
            key = value.strip()
    if key is None:
        raise WsError("no Sec-WebSocket-Key header")
    accept = base64.b64encode(hashlib.sha1(key + _GUID).digest())
    sock.sendall(b"HTTP/1.1 101 Switching Protocols\r\n"
                 b"Upgrade: websocket\r\n"
                 b"Connection: Upgrade\r\n"
                 b"Sec-WebSocket-Accept: " + accept + b"\r\n\r\n")


def connect_websocket(host: str, port: int, path: str = "/") -> socket.socket:
    """Client side of the opening handshake. Returns the upgraded socket."""
    sock = socket.create_connection((host, port), timeout=10.0)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    key = base64.b64encode(os.urandom(16))
    sock.sendall(f"GET {path} HTTP/1.1\r\n"
                 f"Host: {host}:{port}\r\n"
                 "Upgrade: websocket\r\n"
                 "Connection: Upgrade\r\n"
                 "Sec-WebSocket-Version: 13\r\n".encode("ascii")
                 + b"Sec-WebSocket-Key: " + key + b"\r\n\r\n")
    head = _read_http_head(sock)
    status = head.split(b"\r\n", 1)[0]
    if b"101" not in status:
        raise WsError(f"handshake refused: {status.decode(errors='replace')}")
    want = base64.b64encode(hashlib.sha1(key + _GUID).digest())
    if want not in head:
        raise WsError("Sec-WebSocket-Accept mismatch")
    sock.settimeout(None)
    return sock


def write_frame(sock: socket.socket, opcode: int, payload: bytes,
                mask: bool = False) -> None:
    """One complete (FIN) frame.  Clients must mask, servers must not."""
    head = bytearray([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        head.append(mask_bit | n)
    elif n < 1 << 16:
        head.append(mask_bit | 126)
        head += struct.pack(">H", n)
    else:
        head.append(mask_bit | 127)
        head += struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        head += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    sock.sendall(bytes(head) + payload)


def read_frame(sock: socket.socket) -> tuple:
    """Next (opcode, payload).  Fragmented messages are not supported."""
    b0, b1 = _recv_exact(sock, 2)
    if not b0 & 0x80:
        raise WsError("fragmented frames not supported")
    opcode = b0 & 0x0F
    masked = bool(b1 & 0x80)
    n = b1 & 0x7F
    if n == 126:
        (n,) = struct.unpack(">H", _recv_exact(sock, 2))
    elif n == 127:
        (n,) = struct.unpack(">Q", _recv_exact(sock, 8))
    if n > _MAX_WS_PAYLOAD:
        raise WsError(f"frame of {n} bytes exceeds cap")
    key = _recv_exact(sock, 4) if masked else None
    payload = _recv_exact(sock, n) if n else b""
    if key is not None:
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return opcode, payload


def _camera_from_json(doc: dict) -> CameraEvent:
    try:
        cam = Camera(position=tuple(float(v) for v in doc["position"]),
                     look_at=tuple(float(v) for v in doc["look_at"]),
                     up=tuple(float(v) for v in doc.get("up", (0.0, 1.0, 0.0))),
                     fov=float(doc["fov"]))
        return CameraEvent(int(doc["frame_id"]), cam)
    except (KeyError, TypeError, ValueError) as exc:
        raise WsError(f"bad camera message: {exc}") from None


class WsBridge:
    """One browser session bridged onto one cluster session."""

    def __init__(self, master_host: str, master_port: int,
                 ws_host: str = "127.0.0.1", ws_port: int = 0,
                 ready_file: str | None = None):
        self.master_host = master_host
        self.master_port = master_port
        self.ws_host = ws_host
        self.ws_port = ws_port
        self.ready_file = ready_file
        self.port: int | None = None
        self.listening = threading.Event()
        self.frames_forwarded = 0

    def _downstream_loop(self, conn: Connection, ws: socket.socket,
                         done: threading.Event) -> None:
        """Master messages -> binary WebSocket frames."""
        try:
            while True:
                msg = conn.recv()
                if msg is None:
                    break
                if isinstance(msg, (FrameImage, StatsMsg)):
                    write_frame(ws, OP_BINARY, encode_message(msg))
                    if isinstance(msg, FrameImage):
                        self.frames_forwarded += 1
                elif isinstance(msg, Shutdown):
                    write_frame(ws, OP_CLOSE,
                                struct.pack(">H", 1000)
                                + msg.reason.encode("utf-8")[:100])
                    break
        except (OSError, ProtocolError) as exc:
            log.info("downstream ended: %s", exc)
        done.set()

    def serve(self) -> None:
        """Accept one browser, bridge until either side hangs up."""
        register_current("client", "main")
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((self.ws_host, self.ws_port))
        server.listen(1)
        self.port = server.getsockname()[1]
        if self.ready_file:
            with open(self.ready_file, "w", encoding="utf-8") as fh:
                fh.write(f"{self.ws_host} {self.port}\n")
        self.listening.set()
        log.info("bridge listening on ws://%s:%d", self.ws_host, self.port)
        try:
            ws, addr = server.accept()
            ws.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        finally:
            server.close()
        accept_websocket(ws)
        log.info("browser connected from %s:%d", *addr)

        sock = connect_with_retry(self.master_host, self.master_port)
        conn = Connection(sock, name="master")
        handshake_connect(conn, ROLE_CLIENT, node_id=100)
        done = threading.Event()
        spawn_registered("client", "recv", self._downstream_loop,
                         (conn, ws, done))
        try:
            while not done.is_set():
                opcode, payload = read_frame(ws)
                if opcode == OP_CLOSE:
                    conn.send(Shutdown("browser closed"))
                    break
                if opcode == OP_PING:
                    write_frame(ws, OP_PONG, payload)
                    continue
                if opcode != OP_TEXT:
                    continue
                doc = json.loads(payload.decode("utf-8"))
                kind = doc.get("type")
                if kind == "camera":
                    conn.send(_camera_from_json(doc))
                elif kind == "shutdown":
                    conn.send(Shutdown(str(doc.get("reason", ""))))
                    break
                else:
                    log.warning("ignoring message type %r", kind)
        except (OSError, WsError, json.JSONDecodeError) as exc:
            log.info("upstream ended: %s", exc)
            try:
                conn.send(Shutdown("browser went away"))
            except OSError:
                pass
        finally:
            done.wait(timeout=10.0)
            conn.close()
            try:
                ws.close()
            except OSError:
                pass
        log.info("bridge done after %d frames", self.frames_forwarded)
