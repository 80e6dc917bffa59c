import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clusterpt.buffers import RadianceBuffer
from clusterpt.camera import Camera
from clusterpt.errors import (BadMagic, HandshakeError, IncompleteFrame,
                              OversizePayload, PayloadMismatch, ProtocolError,
                              UnknownMessageType)
from clusterpt.protocol import (HEADER_SIZE, MAGIC, MAX_PAYLOAD,
                                PROTOCOL_VERSION, ROLE_CLIENT, ROLE_MASTER,
                                ROLE_WORKER, CameraEvent, Config, Connection,
                                FrameDecoder, FrameImage, Hello,
                                RadianceBufferMsg, Shutdown, StatsMsg,
                                decode_frame, encode_message,
                                handshake_accept, handshake_connect)
from clusterpt.scene import MeshDelta, SceneUpdate

from conftest import assert_messages_equal, random_protocol_message

CAM = Camera(position=(0.0, 1.0, 5.0), look_at=(0.0, 0.0, 0.0), fov=45.0)


class TestGoldenBytes:
    def test_empty_shutdown_frame(self):
        # full wire image of the smallest message, frozen by hand:
        # magic, type 0x08, length 4, one zero-length string
        assert encode_message(Shutdown("")).hex() == \
            "43505431080400000000000000"

    def test_hello_frame_against_struct(self):
        want = (b"CPT1" + struct.pack("<BI", 0x01, 9)
                + struct.pack("<BII", ROLE_CLIENT, 7, PROTOCOL_VERSION))
        assert encode_message(Hello(ROLE_CLIENT, 7)) == want

    def test_camera_event_frame_against_struct(self):
        payload = struct.pack("<Q", 3) + struct.pack(
            "<10d", 0.0, 1.0, 5.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 45.0)
        want = b"CPT1" + struct.pack("<BI", 0x03, len(payload)) + payload
        assert encode_message(CameraEvent(3, CAM)) == want

    def test_header_is_nine_bytes(self):
        frame = encode_message(Shutdown("x"))
        assert HEADER_SIZE == 9
        assert frame[:4] == MAGIC
        (length,) = struct.unpack_from("<I", frame, 5)
        assert len(frame) == HEADER_SIZE + length


def roundtrip(msg):
    decoded, end = decode_frame(encode_message(msg))
    assert end == len(encode_message(msg))
    return decoded


class TestRoundTrips:
    def test_hello(self):
        assert roundtrip(Hello(ROLE_WORKER, 42)) == Hello(ROLE_WORKER, 42)

    def test_config(self):
        cfg = Config(width=320, height=180, strategy="tile", stride_w=2,
                     stride_h=3, tile_w=16, tile_h=8, per_node_spp=12,
                     participant=2, participant_count=5, max_depth=7,
                     seed_root=123456789, scene="café")
        assert roundtrip(cfg) == cfg

    def test_camera_event(self):
        ev = CameraEvent(9, CAM)
        assert roundtrip(ev) == ev

    def test_scene_update_with_and_without_camera(self):
        delta = MeshDelta(1, [(0, 2), (4, 5)],
                          np.arange(9, dtype=np.float32).reshape(3, 3))
        for cam in (None, CAM):
            upd = SceneUpdate(5, [delta], cam)
            assert_messages_equal(roundtrip(upd), upd)

    def test_radiance_buffer(self):
        rgb = np.arange(24, dtype=np.float32).reshape(2, 4, 3)
        msg = RadianceBufferMsg(2, 1, RadianceBuffer(4, 2, rgb, 8, 2))
        assert_messages_equal(roundtrip(msg), msg)

    def test_frame_image(self):
        msg = FrameImage(4, "jpeg", 64, 48, 16, b"\xff\xd8 not really a jpeg")
        assert roundtrip(msg) == msg

    def test_stats(self):
        msg = StatsMsg(6, [("render_ms", 12.5), ("merge_ms", 0.25)])
        assert_messages_equal(roundtrip(msg), msg)

    def test_shutdown_unicode(self):
        msg = Shutdown("done ✓")
        assert roundtrip(msg) == msg

    def test_randomized_all_types(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            msg = random_protocol_message(rng)
            assert_messages_equal(roundtrip(msg), msg)


class TestEncodeValidation:
    def test_unknown_strategy(self):
        cfg = Config(width=8, height=8, strategy="stride")
        object.__setattr__(cfg, "strategy", "mosaic")
        with pytest.raises(ProtocolError):
            encode_message(cfg)

    def test_unknown_encoding(self):
        msg = FrameImage(0, "jpeg", 1, 1, 1, b"")
        object.__setattr__(msg, "encoding", "webp")
        with pytest.raises(ProtocolError):
            encode_message(msg)

    def test_unknown_class(self):
        with pytest.raises(ProtocolError):
            encode_message(object())


class TestDecodeErrors:
    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            decode_frame(b"NOPE" + bytes(20))

    def test_unknown_type(self):
        frame = b"CPT1" + struct.pack("<BI", 0x7F, 0)
        with pytest.raises(UnknownMessageType):
            decode_frame(frame)

    def test_oversize_declared_payload(self):
        frame = b"CPT1" + struct.pack("<BI", 0x08, MAX_PAYLOAD + 1)
        with pytest.raises(OversizePayload):
            decode_frame(frame)

    def test_incomplete_header_and_payload(self):
        frame = encode_message(Shutdown("hello"))
        with pytest.raises(IncompleteFrame):
            decode_frame(frame[:4])
        with pytest.raises(IncompleteFrame):
            decode_frame(frame[:-1])

    def test_trailing_payload_bytes(self):
        inner = struct.pack("<I", 0) + b"junk"
        frame = b"CPT1" + struct.pack("<BI", 0x08, len(inner)) + inner
        with pytest.raises(PayloadMismatch):
            decode_frame(frame)

    def test_string_not_utf8(self):
        inner = struct.pack("<I", 2) + b"\xff\xfe"
        frame = b"CPT1" + struct.pack("<BI", 0x08, len(inner)) + inner
        with pytest.raises(PayloadMismatch):
            decode_frame(frame)

    def test_camera_with_nan_rejected(self):
        inner = struct.pack("<Q", 0) + struct.pack(
            "<10d", *([float("nan")] * 10))
        frame = b"CPT1" + struct.pack("<BI", 0x03, len(inner)) + inner
        with pytest.raises(PayloadMismatch):
            decode_frame(frame)

    def test_bad_strategy_id(self):
        good = encode_message(Config(width=8, height=8, strategy="tile"))
        bad = bytearray(good)
        bad[HEADER_SIZE + 8] = 9  # strategy byte sits after width/height
        with pytest.raises(PayloadMismatch):
            decode_frame(bytes(bad))

    def test_bad_encoding_id(self):
        good = encode_message(FrameImage(0, "png", 1, 1, 1, b"z"))
        bad = bytearray(good)
        bad[HEADER_SIZE + 8] = 200  # encoding byte sits after frame id
        with pytest.raises(PayloadMismatch):
            decode_frame(bytes(bad))

    def test_radiance_size_mismatch(self):
        inner = struct.pack("<QHIII", 0, 0, 4, 4, 1) + bytes(10)
        frame = b"CPT1" + struct.pack("<BI", 0x05, len(inner)) + inner
        with pytest.raises(PayloadMismatch):
            decode_frame(frame)

    def test_invalid_mesh_delta_ranges(self):
        inner = (struct.pack("<QB", 0, 0) + struct.pack("<H", 1)
                 + struct.pack("<II", 0, 1)     # one delta, one range
                 + struct.pack("<II", 5, 2)     # stop < start
                 + struct.pack("<I", 0))
        frame = b"CPT1" + struct.pack("<BI", 0x04, len(inner)) + inner
        with pytest.raises(PayloadMismatch):
            decode_frame(frame)

    def test_offset_walks_concatenated_frames(self):
        blob = encode_message(Shutdown("a")) + encode_message(Hello(0, 1))
        msg1, end1 = decode_frame(blob, 0)
        msg2, end2 = decode_frame(blob, end1)
        assert msg1 == Shutdown("a")
        assert msg2 == Hello(0, 1)
        assert end2 == len(blob)


class TestFrameDecoder:
    def messages(self):
        rng = np.random.default_rng(7)
        return [random_protocol_message(rng) for _ in range(20)]

    def test_byte_at_a_time(self):
        msgs = self.messages()
        blob = b"".join(encode_message(m) for m in msgs)
        dec = FrameDecoder()
        out = []
        for i in range(len(blob)):
            out.extend(dec.feed(blob[i:i + 1]))
        assert len(out) == len(msgs)
        for a, b in zip(out, msgs):
            assert_messages_equal(a, b)
        assert dec.pending_bytes == 0

    def test_random_chunking(self):
        msgs = self.messages()
        blob = b"".join(encode_message(m) for m in msgs)
        rng = np.random.default_rng(8)
        dec = FrameDecoder()
        out = []
        i = 0
        while i < len(blob):
            j = min(len(blob), i + int(rng.integers(1, 5000)))
            out.extend(dec.feed(blob[i:j]))
            i = j
        assert len(out) == len(msgs)
        assert dec.pending_bytes == 0

    def test_corruption_raises_out_of_feed(self):
        dec = FrameDecoder()
        with pytest.raises(BadMagic):
            dec.feed(b"XXXXXXXXXXXXX")


@settings(max_examples=300, deadline=None)
@given(data=st.binary(min_size=0, max_size=300),
       prefix_magic=st.booleans())
def test_decoder_never_raises_outside_the_protocol_taxonomy(data, prefix_magic):
    blob = (MAGIC + data) if prefix_magic else data
    dec = FrameDecoder()
    try:
        dec.feed(blob)
    except ProtocolError:
        pass


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), pos=st.integers(0, 10 ** 6),
       val=st.integers(0, 255))
def test_single_byte_mutations_stay_in_taxonomy(seed, pos, val):
    rng = np.random.default_rng(seed)
    frame = bytearray(encode_message(random_protocol_message(rng)))
    frame[pos % len(frame)] = val
    try:
        decode_frame(bytes(frame))
    except ProtocolError:
        pass


def pair():
    a, b = socket.socketpair()
    return Connection(a, "a"), Connection(b, "b")


class TestConnection:
    def test_send_recv(self):
        a, b = pair()
        try:
            a.send(StatsMsg(1, [("x", 2.0)]))
            msg = b.recv(timeout=5)
            assert_messages_equal(msg, StatsMsg(1, [("x", 2.0)]))
        finally:
            a.close(); b.close()

    def test_orderly_eof_returns_none(self):
        a, b = pair()
        try:
            a.close()
            assert b.recv(timeout=5) is None
        finally:
            b.close()

    def test_eof_mid_frame_raises(self):
        a, b = pair()
        try:
            frame = encode_message(Shutdown("long goodbye"))
            a.sock.sendall(frame[:7])
            a.sock.close()
            with pytest.raises(IncompleteFrame):
                b.recv(timeout=5)
        finally:
            b.close()

    def test_strict_monotonic_types_reject_repeats(self):
        a, b = pair()
        try:
            a.send(FrameImage(2, "png", 1, 1, 1, b"z"))
            a.send(FrameImage(2, "png", 1, 1, 1, b"z"))
            assert b.recv(timeout=5).frame_id == 2
            with pytest.raises(ProtocolError):
                b.recv(timeout=5)
        finally:
            a.close(); b.close()

    def test_camera_events_must_advance(self):
        a, b = pair()
        try:
            a.send(CameraEvent(5, CAM))
            a.send(CameraEvent(4, CAM))
            assert b.recv(timeout=5).frame_id == 5
            with pytest.raises(ProtocolError):
                b.recv(timeout=5)
        finally:
            a.close(); b.close()

    def test_radiance_buffers_may_repeat_but_not_regress(self):
        buf = RadianceBuffer.zeros(1, 1, 1)
        a, b = pair()
        try:
            for fid in (3, 3, 2):
                a.send(RadianceBufferMsg(fid, 0, RadianceBuffer(
                    1, 1, buf.rgb.copy(), 1, fid)))
            assert b.recv(timeout=5).frame_id == 3
            assert b.recv(timeout=5).frame_id == 3
            with pytest.raises(ProtocolError):
                b.recv(timeout=5)
        finally:
            a.close(); b.close()

    def test_several_messages_in_one_chunk_queue_up(self):
        a, b = pair()
        try:
            blob = (encode_message(Shutdown("one"))
                    + encode_message(Shutdown("two")))
            a.sock.sendall(blob)
            assert b.recv(timeout=5) == Shutdown("one")
            assert b.recv(timeout=5) == Shutdown("two")
        finally:
            a.close(); b.close()


class TestHandshake:
    def accept_in_thread(self, conn, **kwargs):
        result = {}

        def run():
            try:
                result["hello"] = handshake_accept(conn, node_id=0, **kwargs)
            except Exception as exc:  # noqa: BLE001 - surfaced to the test
                result["error"] = exc

        t = threading.Thread(target=run)
        t.start()
        return t, result

    def test_worker_accepted(self):
        a, b = pair()
        try:
            t, result = self.accept_in_thread(b)
            reply = handshake_connect(a, ROLE_WORKER, node_id=3)
            t.join(timeout=5)
            assert result["hello"] == Hello(ROLE_WORKER, 3)
            assert reply.role == ROLE_MASTER
        finally:
            a.close(); b.close()

    def test_unexpected_role_rejected_on_both_sides(self):
        a, b = pair()
        try:
            t, result = self.accept_in_thread(b, expected_roles=(ROLE_CLIENT,))
            with pytest.raises(HandshakeError, match="rejected"):
                handshake_connect(a, ROLE_WORKER, node_id=3)
            t.join(timeout=5)
            assert isinstance(result["error"], HandshakeError)
        finally:
            a.close(); b.close()

    def test_version_mismatch_rejected(self):
        a, b = pair()
        try:
            t, result = self.accept_in_thread(b)
            a.send(Hello(ROLE_WORKER, 1, version=PROTOCOL_VERSION + 1))
            reply = a.recv(timeout=5)
            t.join(timeout=5)
            assert isinstance(reply, Shutdown)
            assert isinstance(result["error"], HandshakeError)
        finally:
            a.close(); b.close()
