import { describe, expect, it } from "vitest";

import {
  decodeForViewer,
  decodeFrameImage,
  decodeShutdown,
  decodeStats,
  FrameSplitter,
  HEADER_SIZE,
  MsgType,
  ProtocolError,
} from "../src/protocol.js";

// Captured from the cluster's own encoder; these bytes are the contract
// between the Python side and this viewer and must never drift.
const GOLDEN_FRAME = hex(
  "43505431061b000000030000000000000002040000000200000008000000ffd8756e6974",
);
const GOLDEN_STATS = hex(
  "43505431073a000000010000000000000002000f0000007363656e655f7570646174655f" +
    "6d7300000000000029400900000072656e6465725f6d730000000000204b40",
);
const GOLDEN_SHUTDOWN = hex("43505431080700000003000000627965");
const GOLDEN_HELLO = hex("435054310109000000020000000001000000");
const GOLDEN_BIG_ID = hex(
  "43505431061900000005000000020000000101000000010000000100000089504e47",
);

function hex(s: string): Uint8Array {
  const out = new Uint8Array(s.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(s.slice(2 * i, 2 * i + 2), 16);
  }
  return out;
}

function concat(...parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let at = 0;
  for (const p of parts) {
    out.set(p, at);
    at += p.length;
  }
  return out;
}

describe("golden bytes from the cluster encoder", () => {
  it("decodes a jpeg frame image", () => {
    const [env] = new FrameSplitter().feed(GOLDEN_FRAME);
    expect(env.type).toBe(MsgType.FrameImage);
    const msg = decodeFrameImage(env.payload);
    expect(msg.frameId).toBe(3);
    expect(msg.encoding).toBe("jpeg");
    expect(msg.width).toBe(4);
    expect(msg.height).toBe(2);
    expect(msg.spp).toBe(8);
    expect(Array.from(msg.data)).toEqual([
      0xff, 0xd8, 0x75, 0x6e, 0x69, 0x74,
    ]);
  });

  it("decodes stats rows in order", () => {
    const [env] = new FrameSplitter().feed(GOLDEN_STATS);
    const msg = decodeStats(env.payload);
    expect(msg.frameId).toBe(1);
    expect(msg.rows).toEqual([
      { name: "scene_update_ms", value: 12.5 },
      { name: "render_ms", value: 54.25 },
    ]);
  });

  it("decodes a shutdown reason", () => {
    const [env] = new FrameSplitter().feed(GOLDEN_SHUTDOWN);
    expect(decodeShutdown(env.payload)).toEqual({
      kind: "shutdown",
      reason: "bye",
    });
  });

  it("decodes frame ids beyond 32 bits", () => {
    const [env] = new FrameSplitter().feed(GOLDEN_BIG_ID);
    expect(decodeFrameImage(env.payload).frameId).toBe(2 ** 33 + 5);
  });
});

describe("frame splitter", () => {
  it("reassembles envelopes from byte-at-a-time delivery", () => {
    const splitter = new FrameSplitter();
    const stream = concat(GOLDEN_FRAME, GOLDEN_STATS, GOLDEN_SHUTDOWN);
    const got: number[] = [];
    for (const byte of stream) {
      for (const env of splitter.feed(new Uint8Array([byte]))) {
        got.push(env.type);
      }
    }
    expect(got).toEqual([MsgType.FrameImage, MsgType.Stats, MsgType.Shutdown]);
    expect(splitter.pendingBytes).toBe(0);
  });

  it("returns several envelopes from one chunk", () => {
    const envs = new FrameSplitter().feed(
      concat(GOLDEN_STATS, GOLDEN_FRAME),
    );
    expect(envs.map((e) => e.type)).toEqual([
      MsgType.Stats,
      MsgType.FrameImage,
    ]);
  });

  it("keeps a partial envelope pending", () => {
    const splitter = new FrameSplitter();
    expect(splitter.feed(GOLDEN_FRAME.slice(0, HEADER_SIZE + 3))).toEqual([]);
    expect(splitter.pendingBytes).toBe(HEADER_SIZE + 3);
    const envs = splitter.feed(GOLDEN_FRAME.slice(HEADER_SIZE + 3));
    expect(envs).toHaveLength(1);
  });

  it("rejects a corrupt magic", () => {
    const bad = GOLDEN_FRAME.slice();
    bad[0] ^= 0xff;
    expect(() => new FrameSplitter().feed(bad)).toThrow(ProtocolError);
  });

  it("rejects an oversize payload length", () => {
    const bad = GOLDEN_FRAME.slice();
    new DataView(bad.buffer).setUint32(5, 0xffffffff, true);
    expect(() => new FrameSplitter().feed(bad)).toThrow(/cap/);
  });
});

describe("payload validation", () => {
  it("rejects truncated payloads", () => {
    const [env] = new FrameSplitter().feed(GOLDEN_STATS);
    expect(() => decodeStats(env.payload.slice(0, 12))).toThrow(
      ProtocolError,
    );
  });

  it("rejects an unknown encoding id", () => {
    const [env] = new FrameSplitter().feed(GOLDEN_FRAME);
    const bad = env.payload.slice();
    bad[8] = 200;
    expect(() => decodeFrameImage(bad)).toThrow(/encoding/);
  });

  it("rejects trailing bytes after a complete payload", () => {
    const [env] = new FrameSplitter().feed(GOLDEN_SHUTDOWN);
    expect(() => decodeShutdown(concat(env.payload, hex("00")))).toThrow(
      /trailing/,
    );
  });
});

describe("viewer dispatch", () => {
  it("surfaces the three message kinds it displays", () => {
    const stream = concat(GOLDEN_FRAME, GOLDEN_STATS, GOLDEN_SHUTDOWN);
    const kinds = new FrameSplitter()
      .feed(stream)
      .map((env) => decodeForViewer(env)?.kind);
    expect(kinds).toEqual(["frame", "stats", "shutdown"]);
  });

  it("ignores valid envelopes of other types", () => {
    const [env] = new FrameSplitter().feed(GOLDEN_HELLO);
    expect(decodeForViewer(env)).toBeNull();
  });

  it("rejects unknown type ids", () => {
    const [env] = new FrameSplitter().feed(GOLDEN_HELLO);
    expect(() => decodeForViewer({ type: 0x7f, payload: env.payload })).toThrow(
      ProtocolError,
    );
  });
});
