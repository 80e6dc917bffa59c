"""Binary wire protocol between client, master and workers.

Frame envelope, little-endian throughout:

    magic   4 bytes  b"CPT1"
    type    u8
    length  u32      payload byte count (hard cap 256 MiB)
    payload length bytes

Message payloads:

    HELLO           0x01  role u8, node_id u32, protocol_version u32
    CONFIG          0x02  width u32, height u32, strategy u8, stride_w u16,
                          stride_h u16, tile_w u16, tile_h u16,
                          per_node_spp u32, participant u16,
                          participant_count u16, max_depth u16,
                          seed_root u64, scene str
    CAMERA_EVENT    0x03  frame_id u64, camera block (10 f64: position,
                          look_at, up, vertical fov degrees)
    SCENE_UPDATE    0x04  frame_id u64, flags u8 (bit 0: camera block
                          follows), [camera block], delta_count u16, then per
                          delta: mesh_index u32, range_count u32,
                          (start u32, stop u32)*, row_count u32, rows f32*3
    RADIANCE_BUFFER 0x05  frame_id u64, participant u16, width u32,
                          height u32, spp u32, rgb f32 rows (w*h*12 bytes)
    FRAME_IMAGE     0x06  frame_id u64, encoding u8 (0 raw-rgb8, 1 png,
                          2 jpeg, 3 radiance-f32), width u32, height u32,
                          spp u32, data
    STATS           0x07  frame_id u64, row_count u16, (name str, value f64)*
    SHUTDOWN        0x08  reason str

Strings are u32 length + UTF-8 bytes.  Every decode error is a distinct
ProtocolError subclass; a truncated buffer raises IncompleteFrame, which the
streaming FrameDecoder treats as "wait for more bytes".
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from clusterpt.buffers import RadianceBuffer
from clusterpt.camera import Camera
from clusterpt.errors import (BadMagic, HandshakeError, IncompleteFrame,
                              OversizePayload, PayloadMismatch, ProtocolError,
                              UnknownMessageType)
from clusterpt.scene import MeshDelta, SceneUpdate

__all__ = [
    "PROTOCOL_VERSION", "MAGIC", "MAX_PAYLOAD", "HEADER_SIZE",
    "ROLE_WORKER", "ROLE_CLIENT", "ROLE_MASTER",
    "Hello", "Config", "CameraEvent", "RadianceBufferMsg", "FrameImage",
    "StatsMsg", "Shutdown",
    "encode_message", "decode_frame", "FrameDecoder", "Connection",
    "handshake_connect", "handshake_accept",
]

PROTOCOL_VERSION = 1
MAGIC = b"CPT1"
HEADER_SIZE = 9
MAX_PAYLOAD = 256 * 1024 * 1024

ROLE_WORKER = 0
ROLE_CLIENT = 1
ROLE_MASTER = 2

T_HELLO = 0x01
T_CONFIG = 0x02
T_CAMERA_EVENT = 0x03
T_SCENE_UPDATE = 0x04
T_RADIANCE_BUFFER = 0x05
T_FRAME_IMAGE = 0x06
T_STATS = 0x07
T_SHUTDOWN = 0x08

_KNOWN_TYPES = frozenset((T_HELLO, T_CONFIG, T_CAMERA_EVENT, T_SCENE_UPDATE,
                          T_RADIANCE_BUFFER, T_FRAME_IMAGE, T_STATS,
                          T_SHUTDOWN))

# receive-side frame-id discipline: True = strictly increasing
_MONOTONIC_STRICT = {T_CAMERA_EVENT: True, T_FRAME_IMAGE: True, T_STATS: True,
                     T_RADIANCE_BUFFER: False, T_SCENE_UPDATE: False}


@dataclass(frozen=True)
class Hello:
    role: int
    node_id: int
    version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class Config:
    width: int
    height: int
    strategy: str
    stride_w: int = 1
    stride_h: int = 1
    tile_w: int = 32
    tile_h: int = 32
    per_node_spp: int = 16
    participant: int = 0
    participant_count: int = 1
    max_depth: int = 10
    seed_root: int = 0
    scene: str = "gloss"


@dataclass(frozen=True)
class CameraEvent:
    frame_id: int
    camera: Camera


@dataclass
class RadianceBufferMsg:
    frame_id: int
    participant: int
    buffer: RadianceBuffer


@dataclass(frozen=True)
class FrameImage:
    frame_id: int
    encoding: str
    width: int
    height: int
    spp: int
    data: bytes


@dataclass
class StatsMsg:
    frame_id: int
    rows: list  # [(name, float)], order preserved


@dataclass(frozen=True)
class Shutdown:
    reason: str = ""


_ENCODING_IDS = {"raw-rgb8": 0, "png": 1, "jpeg": 2, "radiance-f32": 3}
_ENCODING_NAMES = {v: k for k, v in _ENCODING_IDS.items()}

_STRATEGY_IDS = {"stride": 0, "sample": 1, "tile": 2}
_STRATEGY_NAMES = {v: k for k, v in _STRATEGY_IDS.items()}


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    """Cursor over a payload; every read checks bounds."""

    __slots__ = ("buf", "off")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise PayloadMismatch(
                f"payload truncated: wanted {n} bytes at offset {self.off}, "
                f"have {len(self.buf) - self.off}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def string(self) -> str:
        (n,) = self.unpack("I")
        if n > MAX_PAYLOAD:
            raise PayloadMismatch(f"string length {n} is absurd")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PayloadMismatch(f"string is not valid UTF-8: {exc}") from None

    def done(self) -> None:
        if self.off != len(self.buf):
            raise PayloadMismatch(
                f"{len(self.buf) - self.off} trailing bytes after payload")


def _camera_block(camera: Camera) -> bytes:
    return struct.pack("<10d", *camera.position, *camera.look_at, *camera.up,
                       camera.fov)


def _read_camera(r: _Reader) -> Camera:
    vals = r.unpack("10d")
    try:
        return Camera(position=vals[0:3], look_at=vals[3:6], up=vals[6:9],
                      fov=vals[9])
    except ValueError as exc:
        raise PayloadMismatch(f"camera block invalid: {exc}") from None


def _payload_of(msg) -> tuple:
    if isinstance(msg, Hello):
        return T_HELLO, struct.pack("<BII", msg.role, msg.node_id, msg.version)
    if isinstance(msg, Config):
        if msg.strategy not in _STRATEGY_IDS:
            raise ProtocolError(f"unknown strategy {msg.strategy!r}")
        return T_CONFIG, struct.pack(
            "<IIB4HIHHHQ", msg.width, msg.height,
            _STRATEGY_IDS[msg.strategy], msg.stride_w, msg.stride_h,
            msg.tile_w, msg.tile_h, msg.per_node_spp, msg.participant,
            msg.participant_count, msg.max_depth,
            msg.seed_root & 0xFFFFFFFFFFFFFFFF) + _pack_str(msg.scene)
    if isinstance(msg, CameraEvent):
        return T_CAMERA_EVENT, struct.pack("<Q", msg.frame_id) + _camera_block(
            msg.camera)
    if isinstance(msg, SceneUpdate):
        flags = 1 if msg.camera is not None else 0
        parts = [struct.pack("<QB", msg.frame_id, flags)]
        if msg.camera is not None:
            parts.append(_camera_block(msg.camera))
        parts.append(struct.pack("<H", len(msg.deltas)))
        for d in msg.deltas:
            parts.append(struct.pack("<II", d.mesh_index, len(d.ranges)))
            for start, stop in d.ranges:
                parts.append(struct.pack("<II", start, stop))
            rows = np.ascontiguousarray(d.positions, dtype="<f4")
            parts.append(struct.pack("<I", len(rows)))
            parts.append(rows.tobytes())
        return T_SCENE_UPDATE, b"".join(parts)
    if isinstance(msg, RadianceBufferMsg):
        b = msg.buffer
        return T_RADIANCE_BUFFER, struct.pack(
            "<QHIII", msg.frame_id, msg.participant, b.width, b.height,
            b.spp) + b.to_bytes()
    if isinstance(msg, FrameImage):
        if msg.encoding not in _ENCODING_IDS:
            raise ProtocolError(f"unknown image encoding {msg.encoding!r}")
        return T_FRAME_IMAGE, struct.pack(
            "<QBIII", msg.frame_id, _ENCODING_IDS[msg.encoding], msg.width,
            msg.height, msg.spp) + msg.data
    if isinstance(msg, StatsMsg):
        parts = [struct.pack("<QH", msg.frame_id, len(msg.rows))]
        for name, value in msg.rows:
            parts.append(_pack_str(name))
            parts.append(struct.pack("<d", float(value)))
        return T_STATS, b"".join(parts)
    if isinstance(msg, Shutdown):
        return T_SHUTDOWN, _pack_str(msg.reason)
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def encode_message(msg) -> bytes:
    """Serialize a message object into one complete wire frame."""
    mtype, payload = _payload_of(msg)
    if len(payload) > MAX_PAYLOAD:
        raise OversizePayload(
            f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return MAGIC + struct.pack("<BI", mtype, len(payload)) + payload


def _decode_payload(mtype: int, payload: bytes):
    r = _Reader(payload)
    if mtype == T_HELLO:
        role, node_id, version = r.unpack("BII")
        r.done()
        return Hello(role, node_id, version)
    if mtype == T_CONFIG:
        (width, height, strat, sw, sh, tw, th, spp, part, count, depth,
         root) = r.unpack("IIB4HIHHHQ")
        scene = r.string()
        r.done()
        if strat not in _STRATEGY_NAMES:
            raise PayloadMismatch(f"strategy id {strat} unknown")
        return Config(width, height, _STRATEGY_NAMES[strat], sw, sh, tw, th,
                      spp, part, count, depth, root, scene)
    if mtype == T_CAMERA_EVENT:
        (frame_id,) = r.unpack("Q")
        cam = _read_camera(r)
        r.done()
        return CameraEvent(frame_id, cam)
    if mtype == T_SCENE_UPDATE:
        frame_id, flags = r.unpack("QB")
        cam = _read_camera(r) if flags & 1 else None
        (n_deltas,) = r.unpack("H")
        deltas = []
        for _ in range(n_deltas):
            mesh_index, n_ranges = r.unpack("II")
            ranges = [tuple(r.unpack("II")) for _ in range(n_ranges)]
            (n_rows,) = r.unpack("I")
            if n_rows * 12 > MAX_PAYLOAD:
                raise PayloadMismatch(f"delta row count {n_rows} is absurd")
            rows = np.frombuffer(r.take(n_rows * 12), dtype="<f4")
            try:
                deltas.append(MeshDelta(mesh_index, ranges,
                                        rows.reshape(n_rows, 3).copy()))
            except Exception as exc:
                raise PayloadMismatch(f"invalid mesh delta: {exc}") from None
        r.done()
        return SceneUpdate(frame_id, deltas, cam)
    if mtype == T_RADIANCE_BUFFER:
        frame_id, participant, width, height, spp = r.unpack("QHIII")
        if width * height * 12 != len(payload) - r.off:
            raise PayloadMismatch(
                f"radiance buffer {width}x{height} wants {width * height * 12} "
                f"bytes, payload carries {len(payload) - r.off}")
        buf = RadianceBuffer.from_bytes(width, height, spp,
                                        r.take(width * height * 12), frame_id)
        r.done()
        return RadianceBufferMsg(frame_id, participant, buf)
    if mtype == T_FRAME_IMAGE:
        frame_id, enc, width, height, spp = r.unpack("QBIII")
        if enc not in _ENCODING_NAMES:
            raise PayloadMismatch(f"image encoding id {enc} unknown")
        data = payload[r.off:]
        return FrameImage(frame_id, _ENCODING_NAMES[enc], width, height, spp,
                          bytes(data))
    if mtype == T_STATS:
        frame_id, n_rows = r.unpack("QH")
        rows = []
        for _ in range(n_rows):
            name = r.string()
            (value,) = r.unpack("d")
            rows.append((name, value))
        r.done()
        return StatsMsg(frame_id, rows)
    if mtype == T_SHUTDOWN:
        reason = r.string()
        r.done()
        return Shutdown(reason)
    raise UnknownMessageType(f"message type 0x{mtype:02x}")


def decode_frame(buf: bytes, offset: int = 0):
    """Decode one frame starting at offset.

    Returns (message, next_offset).  Raises IncompleteFrame when the buffer
    holds less than one whole frame, and other ProtocolErrors on corruption.
    """
    if len(buf) - offset < HEADER_SIZE:
        raise IncompleteFrame("header incomplete")
    if buf[offset:offset + 4] != MAGIC:
        raise BadMagic(f"bad magic {bytes(buf[offset:offset + 4])!r}")
    mtype = buf[offset + 4]
    (length,) = struct.unpack_from("<I", buf, offset + 5)
    if mtype not in _KNOWN_TYPES:
        raise UnknownMessageType(f"message type 0x{mtype:02x}")
    if length > MAX_PAYLOAD:
        raise OversizePayload(f"declared payload {length} exceeds {MAX_PAYLOAD}")
    end = offset + HEADER_SIZE + length
    if len(buf) < end:
        raise IncompleteFrame(f"payload incomplete ({len(buf) - offset} of "
                              f"{HEADER_SIZE + length} bytes)")
    msg = _decode_payload(mtype, bytes(buf[offset + HEADER_SIZE:end]))
    return msg, end


class FrameDecoder:
    """Incremental decoder for a byte stream of frames.

    feed() buffers arbitrary chunks and yields every complete message.
    Corruption raises immediately (the stream has no recovery points).
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list:
        self._buf.extend(chunk)
        out = []
        while True:
            try:
                msg, end = decode_frame(self._buf)
            except IncompleteFrame:
                break
            out.append(msg)
            del self._buf[:end]
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


class Connection:
    """Framed messages over a socket, with receive-side frame-id discipline.

    send() is thread-safe (one lock per connection); recv() must be called
    from one thread at a time.  Frame ids must advance per message type:
    camera events, frame images and stats strictly; radiance buffers and
    scene updates may repeat (several messages can belong to one frame).
    """

    def __init__(self, sock, name: str = ""):
        self.sock = sock
        self.name = name
        self._send_lock = threading.Lock()
        self._last_frame_id: dict = {}
        self._decoder = FrameDecoder()
        self._queue: list = []

    def send(self, msg) -> None:
        data = encode_message(msg)
        with self._send_lock:
            self.sock.sendall(data)

    def _check_monotonic(self, msg) -> None:
        mtype, _ = _payload_of_type(msg)
        if mtype not in _MONOTONIC_STRICT:
            return
        fid = msg.frame_id
        last = self._last_frame_id.get(mtype)
        if last is not None:
            strict = _MONOTONIC_STRICT[mtype]
            if fid < last or (strict and fid == last):
                raise ProtocolError(
                    f"{type(msg).__name__} frame id went {last} -> {fid}")
        self._last_frame_id[mtype] = fid

    def recv(self, timeout: float | None = None):
        """Next message, or None on orderly EOF."""
        if self._queue:
            msg = self._queue.pop(0)
            self._check_monotonic(msg)
            return msg
        self.sock.settimeout(timeout)
        while True:
            chunk = self.sock.recv(1 << 16)
            if not chunk:
                if self._decoder.pending_bytes:
                    raise IncompleteFrame("stream ended mid-frame")
                return None
            msgs = self._decoder.feed(chunk)
            if msgs:
                self._queue.extend(msgs[1:])
                self._check_monotonic(msgs[0])
                return msgs[0]

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


_TYPE_OF_CLASS = {
    Hello: T_HELLO, Config: T_CONFIG, CameraEvent: T_CAMERA_EVENT,
    SceneUpdate: T_SCENE_UPDATE, RadianceBufferMsg: T_RADIANCE_BUFFER,
    FrameImage: T_FRAME_IMAGE, StatsMsg: T_STATS, Shutdown: T_SHUTDOWN,
}


def _payload_of_type(msg) -> tuple:
    t = _TYPE_OF_CLASS.get(type(msg))
    if t is None:
        raise ProtocolError(f"unknown message class {type(msg).__name__}")
    return t, None


def handshake_connect(conn: Connection, role: int, node_id: int) -> Hello:
    """Dialing side: introduce ourselves, expect the acceptor's HELLO back."""
    conn.send(Hello(role=role, node_id=node_id))
    reply = conn.recv(timeout=10.0)
    if isinstance(reply, Shutdown):
        raise HandshakeError(f"rejected: {reply.reason}")
    if not isinstance(reply, Hello):
        raise HandshakeError(f"expected HELLO, got {type(reply).__name__}")
    if reply.version != PROTOCOL_VERSION:
        raise HandshakeError(
            f"peer speaks protocol {reply.version}, we speak {PROTOCOL_VERSION}")
    return reply


def handshake_accept(conn: Connection, node_id: int,
                     expected_roles: tuple = (ROLE_WORKER, ROLE_CLIENT)) -> Hello:
    """Accepting side: read the dialer's HELLO, validate, answer."""
    hello = conn.recv(timeout=10.0)
    if not isinstance(hello, Hello):
        raise HandshakeError(
            f"expected HELLO, got {type(hello).__name__ if hello else 'EOF'}")
    if hello.version != PROTOCOL_VERSION:
        conn.send(Shutdown(f"protocol version {hello.version} unsupported"))
        raise HandshakeError(
            f"peer speaks protocol {hello.version}, we speak {PROTOCOL_VERSION}")
    if hello.role not in expected_roles:
        conn.send(Shutdown(f"role {hello.role} not accepted here"))
        raise HandshakeError(f"unexpected role {hello.role}")
    conn.send(Hello(role=ROLE_MASTER, node_id=node_id))
    return hello
