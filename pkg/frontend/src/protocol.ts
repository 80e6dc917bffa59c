/** Wire format shared with the cluster, decode side only.
 *
 * Every message is one envelope: magic "CPT1", a type byte, a little-endian
 * u32 payload length, then the payload. The bridge forwards envelopes
 * verbatim as binary WebSocket frames, so this decoder sees exactly the
 * bytes the master wrote. The viewer only ever decodes FRAME_IMAGE, STATS
 * and SHUTDOWN; other types are surfaced as raw envelopes and skipped.
 */

export const HEADER_SIZE = 9;
export const MAX_PAYLOAD = 256 * 1024 * 1024;

const MAGIC = new Uint8Array([0x43, 0x50, 0x54, 0x31]); // "CPT1"

export enum MsgType {
  Hello = 0x01,
  Config = 0x02,
  CameraEvent = 0x03,
  SceneUpdate = 0x04,
  RadianceBuffer = 0x05,
  FrameImage = 0x06,
  Stats = 0x07,
  Shutdown = 0x08,
}

export type Encoding = "raw-rgb8" | "png" | "jpeg" | "radiance-f32";
const ENCODINGS: Encoding[] = ["raw-rgb8", "png", "jpeg", "radiance-f32"];

export class ProtocolError extends Error {}

const UTF8 = new TextDecoder("utf-8", { fatal: true });

export interface Envelope {
  type: number;
  payload: Uint8Array;
}

export interface FrameImageMsg {
  kind: "frame";
  frameId: number;
  encoding: Encoding;
  width: number;
  height: number;
  spp: number;
  data: Uint8Array;
}

export interface StatsRow {
  name: string;
  value: number;
}

export interface StatsMsg {
  kind: "stats";
  frameId: number;
  rows: StatsRow[];
}

export interface ShutdownMsg {
  kind: "shutdown";
  reason: string;
}

/** Re-frames an arbitrary chunking of the byte stream into envelopes. */
export class FrameSplitter {
  private buf = new Uint8Array(0);

  get pendingBytes(): number {
    return this.buf.length;
  }

  feed(chunk: Uint8Array): Envelope[] {
    if (this.buf.length === 0) {
      this.buf = chunk.slice();
    } else {
      const next = new Uint8Array(this.buf.length + chunk.length);
      next.set(this.buf);
      next.set(chunk, this.buf.length);
      this.buf = next;
    }
    const out: Envelope[] = [];
    for (;;) {
      if (this.buf.length < HEADER_SIZE) break;
      for (let i = 0; i < 4; i++) {
        if (this.buf[i] !== MAGIC[i]) {
          throw new ProtocolError("bad magic, stream is corrupt");
        }
      }
      const view = new DataView(this.buf.buffer, this.buf.byteOffset);
      const type = view.getUint8(4);
      const length = view.getUint32(5, true);
      if (length > MAX_PAYLOAD) {
        throw new ProtocolError(`payload of ${length} bytes exceeds cap`);
      }
      if (this.buf.length < HEADER_SIZE + length) break;
      out.push({
        type,
        payload: this.buf.slice(HEADER_SIZE, HEADER_SIZE + length),
      });
      this.buf = this.buf.slice(HEADER_SIZE + length);
    }
    return out;
  }
}

class Reader {
  private view: DataView;
  private pos = 0;

  constructor(private bytes: Uint8Array) {
    this.view = new DataView(bytes.buffer, bytes.byteOffset, bytes.length);
  }

  private need(n: number): void {
    if (this.pos + n > this.bytes.length) {
      throw new ProtocolError("payload truncated");
    }
  }

  u8(): number {
    this.need(1);
    return this.view.getUint8(this.pos++);
  }

  u16(): number {
    this.need(2);
    const v = this.view.getUint16(this.pos, true);
    this.pos += 2;
    return v;
  }

  u32(): number {
    this.need(4);
    const v = this.view.getUint32(this.pos, true);
    this.pos += 4;
    return v;
  }

  u64(): number {
    this.need(8);
    const v = this.view.getBigUint64(this.pos, true);
    this.pos += 8;
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new ProtocolError(`u64 ${v} exceeds the safe integer range`);
    }
    return Number(v);
  }

  f64(): number {
    this.need(8);
    const v = this.view.getFloat64(this.pos, true);
    this.pos += 8;
    return v;
  }

  str(): string {
    const n = this.u32();
    this.need(n);
    const raw = this.bytes.subarray(this.pos, this.pos + n);
    this.pos += n;
    try {
      return UTF8.decode(raw);
    } catch {
      throw new ProtocolError("string is not valid UTF-8");
    }
  }

  rest(): Uint8Array {
    const out = this.bytes.slice(this.pos);
    this.pos = this.bytes.length;
    return out;
  }

  expectDone(): void {
    if (this.pos !== this.bytes.length) {
      throw new ProtocolError(
        `${this.bytes.length - this.pos} trailing bytes in payload`,
      );
    }
  }
}

export function decodeFrameImage(payload: Uint8Array): FrameImageMsg {
  const r = new Reader(payload);
  const frameId = r.u64();
  const enc = r.u8();
  if (enc >= ENCODINGS.length) {
    throw new ProtocolError(`unknown encoding id ${enc}`);
  }
  const width = r.u32();
  const height = r.u32();
  const spp = r.u32();
  return {
    kind: "frame",
    frameId,
    encoding: ENCODINGS[enc],
    width,
    height,
    spp,
    data: r.rest(),
  };
}

export function decodeStats(payload: Uint8Array): StatsMsg {
  const r = new Reader(payload);
  const frameId = r.u64();
  const count = r.u16();
  const rows: StatsRow[] = [];
  for (let i = 0; i < count; i++) {
    const name = r.str();
    rows.push({ name, value: r.f64() });
  }
  r.expectDone();
  return { kind: "stats", frameId, rows };
}

export function decodeShutdown(payload: Uint8Array): ShutdownMsg {
  const r = new Reader(payload);
  const reason = r.str();
  r.expectDone();
  return { kind: "shutdown", reason };
}

export type ViewerMsg = FrameImageMsg | StatsMsg | ShutdownMsg;

/** Decode one envelope into the messages the viewer cares about.
 * Returns null for types the viewer deliberately ignores. */
export function decodeForViewer(env: Envelope): ViewerMsg | null {
  switch (env.type) {
    case MsgType.FrameImage:
      return decodeFrameImage(env.payload);
    case MsgType.Stats:
      return decodeStats(env.payload);
    case MsgType.Shutdown:
      return decodeShutdown(env.payload);
    case MsgType.Hello:
    case MsgType.Config:
    case MsgType.CameraEvent:
    case MsgType.SceneUpdate:
    case MsgType.RadianceBuffer:
      return null;
    default:
      throw new ProtocolError(`unknown message type 0x${env.type.toString(16)}`);
  }
}
