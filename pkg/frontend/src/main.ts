/** Page wiring: one WebSocket to the bridge, one canvas, one HUD line.
 *
 * All protocol, camera and pacing logic lives in the imported modules where
 * it is unit-tested; this file only moves bytes between them and the DOM.
 * Image decode is async (createImageBitmap) and chained so frames display
 * in order without ever blocking the event loop.
 */

import { EventGate } from "./gate.js";
import { FpsMeter, LatencyMeter, modelFps } from "./hud.js";
import { OrbitCamera } from "./orbit.js";
import {
  decodeForViewer,
  FrameImageMsg,
  FrameSplitter,
  ProtocolError,
} from "./protocol.js";

const SPIN_PIXELS_PER_FRAME = 4;
const RECONNECT_MS = 1000;
const MAX_CONNECT_ATTEMPTS = 10;

const params = new URLSearchParams(location.search);
const wsUrl = params.get("ws") ?? "ws://127.0.0.1:8765";

function num(name: string, fallback: number): number {
  const raw = params.get(name);
  const v = raw === null ? NaN : Number(raw);
  return Number.isFinite(v) ? v : fallback;
}

const canvas = document.getElementById("view") as HTMLCanvasElement;
const hudEl = document.getElementById("hud") as HTMLElement;
const statusEl = document.getElementById("status") as HTMLElement;
const ctx = canvas.getContext("2d")!;

const cam = new OrbitCamera({
  target: [num("tx", 0), num("ty", 0.6), num("tz", 0)],
  radius: num("radius", 4),
  azimuthDeg: num("azimuth", 90),
  elevationDeg: num("elevation", 15),
  fovDeg: num("fov", 40),
});
const gate = new EventGate(2);
const fpsMeter = new FpsMeter();
const latency = new LatencyMeter();
const splitter = new FrameSplitter();
const sendTimes = new Map<number, number>();

let ws: WebSocket | null = null;
let spinning = params.get("spin") === "1";
let pendingMove = false;
let skipped = 0;
let masterModelFps: number | null = null;
let sessionOver = false;
let connectAttempts = 0;
let blitChain: Promise<void> = Promise.resolve();

function setStatus(text: string): void {
  statusEl.textContent = text;
}

function hud(): void {
  const parts = [
    `fps ${fpsMeter.fps().toFixed(1)}`,
    masterModelFps === null ? "model -" : `model ${masterModelFps.toFixed(1)}`,
  ];
  const lat = latency.meanMs();
  if (lat !== null) parts.push(`latency ${lat.toFixed(0)} ms`);
  if (skipped > 0) parts.push(`skipped ${skipped}`);
  if (spinning) parts.push("spin");
  hudEl.textContent = parts.join("  |  ");
}

/** Send camera events while the pacing window has room. */
function pump(): void {
  if (sessionOver || ws === null || ws.readyState !== WebSocket.OPEN) return;
  while (gate.canSend() && (gate.eventsSent < gate.window || pendingMove)) {
    pendingMove = false;
    const frameId = gate.markSent();
    sendTimes.set(frameId, performance.now());
    ws.send(cam.cameraMessage(frameId));
  }
}

function frameDisplayed(msg: FrameImageMsg | null, frameId: number): void {
  gate.markDisplayed();
  if (msg !== null) {
    const now = performance.now();
    fpsMeter.tick(now);
    const sent = sendTimes.get(frameId);
    if (sent !== undefined) latency.add(now - sent);
  }
  sendTimes.delete(frameId);
  if (spinning) {
    cam.drag(SPIN_PIXELS_PER_FRAME, 0);
  }
  if (cam.takeDirty()) pendingMove = true;
  hud();
  pump();
}

async function blit(msg: FrameImageMsg): Promise<void> {
  if (canvas.width !== msg.width || canvas.height !== msg.height) {
    canvas.width = msg.width;
    canvas.height = msg.height;
  }
  if (msg.encoding === "jpeg" || msg.encoding === "png") {
    const mime = msg.encoding === "jpeg" ? "image/jpeg" : "image/png";
    const bitmap = await createImageBitmap(
      new Blob([msg.data.slice().buffer], { type: mime }),
    );
    ctx.drawImage(bitmap, 0, 0);
    bitmap.close();
    return;
  }
  if (msg.encoding === "raw-rgb8") {
    const rgba = new Uint8ClampedArray(msg.width * msg.height * 4);
    for (let i = 0, j = 0; i < msg.data.length; i += 3, j += 4) {
      rgba[j] = msg.data[i];
      rgba[j + 1] = msg.data[i + 1];
      rgba[j + 2] = msg.data[i + 2];
      rgba[j + 3] = 255;
    }
    ctx.putImageData(new ImageData(rgba, msg.width, msg.height), 0, 0);
    return;
  }
  throw new Error(`cannot display ${msg.encoding} frames`);
}

function onFrame(msg: FrameImageMsg): void {
  blitChain = blitChain
    .then(() => blit(msg))
    .then(
      () => frameDisplayed(msg, msg.frameId),
      () => {
        skipped += 1;
        frameDisplayed(null, msg.frameId); // keep pacing alive past a bad frame
      },
    );
}

function onSocketData(bytes: Uint8Array): void {
  for (const env of splitter.feed(bytes)) {
    const msg = decodeForViewer(env);
    if (msg === null) continue;
    if (msg.kind === "frame") {
      onFrame(msg);
    } else if (msg.kind === "stats") {
      masterModelFps = modelFps(msg.rows);
    } else {
      sessionOver = true;
      setStatus(`session over: ${msg.reason || "no reason given"}`);
    }
  }
}

function connect(): void {
  connectAttempts += 1;
  setStatus(`connecting to ${wsUrl} ...`);
  ws = new WebSocket(wsUrl);
  ws.binaryType = "arraybuffer";
  ws.onopen = () => {
    setStatus("connected, drag to orbit, wheel to zoom, s to spin");
    pump();
  };
  ws.onmessage = (ev: MessageEvent) => {
    try {
      onSocketData(new Uint8Array(ev.data as ArrayBuffer));
    } catch (err) {
      if (err instanceof ProtocolError) {
        sessionOver = true;
        setStatus(`protocol error: ${err.message}`);
        ws?.close();
      } else {
        throw err;
      }
    }
  };
  ws.onclose = () => {
    if (sessionOver) return;
    if (gate.eventsSent === 0 && connectAttempts < MAX_CONNECT_ATTEMPTS) {
      setStatus(`bridge not up yet, retry ${connectAttempts} ...`);
      setTimeout(connect, RECONNECT_MS);
    } else {
      sessionOver = true;
      setStatus("disconnected");
    }
  };
}

canvas.addEventListener("pointerdown", (ev) => {
  canvas.setPointerCapture(ev.pointerId);
});
canvas.addEventListener("pointermove", (ev) => {
  if (ev.buttons === 0) return;
  cam.drag(ev.movementX, -ev.movementY); // pointer up = camera up
  if (cam.takeDirty()) pendingMove = true;
  pump();
});
canvas.addEventListener(
  "wheel",
  (ev) => {
    ev.preventDefault();
    cam.zoom(ev.deltaY);
    if (cam.takeDirty()) pendingMove = true;
    pump();
  },
  { passive: false },
);
window.addEventListener("keydown", (ev) => {
  if (ev.key === "s") {
    spinning = !spinning;
    if (spinning) {
      cam.drag(SPIN_PIXELS_PER_FRAME, 0);
      if (cam.takeDirty()) pendingMove = true;
      pump();
    }
    hud();
  } else if (ev.key === "Escape" && ws?.readyState === WebSocket.OPEN) {
    ws.send(JSON.stringify({ type: "shutdown", reason: "viewer closed" }));
  }
});

hud();
connect();
