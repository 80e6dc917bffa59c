/** HUD numbers: displayed fps, event-to-display latency, and the master's
 * own throughput prediction recomputed from its STATS rows so the two can
 * be compared live. */

import type { StatsRow } from "./protocol.js";

/** Frame rate over a sliding window of display timestamps. */
export class FpsMeter {
  private stamps: number[] = [];

  constructor(private readonly windowSize = 30) {
    if (windowSize < 2) throw new RangeError("window must hold >= 2 stamps");
  }

  tick(nowMs: number): void {
    this.stamps.push(nowMs);
    if (this.stamps.length > this.windowSize) {
      this.stamps.shift();
    }
  }

  fps(): number {
    const n = this.stamps.length;
    if (n < 2) return 0;
    const spanMs = this.stamps[n - 1] - this.stamps[0];
    if (spanMs <= 0) return 0;
    return ((n - 1) * 1000) / spanMs;
  }
}

/** Mean over a sliding window of per-frame latency samples. */
export class LatencyMeter {
  private samples: number[] = [];

  constructor(private readonly windowSize = 10) {}

  add(ms: number): void {
    this.samples.push(ms);
    if (this.samples.length > this.windowSize) {
      this.samples.shift();
    }
  }

  meanMs(): number | null {
    if (this.samples.length === 0) return null;
    let sum = 0;
    for (const s of this.samples) sum += s;
    return sum / this.samples.length;
  }
}

/** The master's derated throughput model from its stage timings. */
export function modelFps(rows: StatsRow[]): number | null {
  let update: number | undefined;
  let render: number | undefined;
  for (const row of rows) {
    if (row.name === "scene_update_ms") update = row.value;
    if (row.name === "render_ms") render = row.value;
  }
  if (update === undefined || render === undefined) return null;
  const seconds = (update + render) / 1000;
  if (seconds <= 0) return Infinity;
  return 0.9 / seconds;
}
