/** Turntable camera: a target point, a radius and two angles.
 *
 * Dragging steers azimuth/elevation, the wheel scales the radius
 * exponentially. The camera only reports itself dirty when a change
 * actually moved it, so an idle pointer generates no traffic.
 */

export const ELEVATION_LIMIT_DEG = 89;
export const MIN_RADIUS = 0.05;
export const MAX_RADIUS = 1000;

export type Vec3 = [number, number, number];

export interface OrbitOptions {
  target?: Vec3;
  radius?: number;
  azimuthDeg?: number;
  elevationDeg?: number;
  fovDeg?: number;
  degreesPerPixel?: number;
  zoomPerUnit?: number;
}

const DEG = Math.PI / 180;

export class OrbitCamera {
  target: Vec3;
  radius: number;
  azimuthDeg: number;
  elevationDeg: number;
  fovDeg: number;
  readonly degreesPerPixel: number;
  readonly zoomPerUnit: number;
  private dirty = false;

  constructor(opts: OrbitOptions = {}) {
    this.target = opts.target ?? [0, 0.6, 0];
    this.radius = opts.radius ?? 4;
    this.azimuthDeg = opts.azimuthDeg ?? 90;
    this.elevationDeg = opts.elevationDeg ?? 15;
    this.fovDeg = opts.fovDeg ?? 40;
    this.degreesPerPixel = opts.degreesPerPixel ?? 0.3;
    this.zoomPerUnit = opts.zoomPerUnit ?? 0.0012;
    if (!(this.radius > 0)) throw new RangeError("radius must be positive");
    this.elevationDeg = clamp(this.elevationDeg,
      -ELEVATION_LIMIT_DEG, ELEVATION_LIMIT_DEG);
  }

  /** Pointer moved dx,dy pixels with the button held. */
  drag(dx: number, dy: number): void {
    const az = this.azimuthDeg + this.degreesPerPixel * dx;
    const el = clamp(this.elevationDeg + this.degreesPerPixel * dy,
      -ELEVATION_LIMIT_DEG, ELEVATION_LIMIT_DEG);
    if (az === this.azimuthDeg && el === this.elevationDeg) return;
    this.azimuthDeg = az;
    this.elevationDeg = el;
    this.dirty = true;
  }

  /** Wheel delta; positive moves away from the target. */
  zoom(dz: number): void {
    if (dz === 0) return;
    const r = clamp(this.radius * Math.exp(this.zoomPerUnit * dz),
      MIN_RADIUS, MAX_RADIUS);
    if (r === this.radius) return;
    this.radius = r;
    this.dirty = true;
  }

  position(): Vec3 {
    const az = this.azimuthDeg * DEG;
    const el = this.elevationDeg * DEG;
    const horizontal = this.radius * Math.cos(el);
    return [
      this.target[0] + horizontal * Math.cos(az),
      this.target[1] + this.radius * Math.sin(el),
      this.target[2] + horizontal * Math.sin(az),
    ];
  }

  /** True exactly once after any state change. */
  takeDirty(): boolean {
    const was = this.dirty;
    this.dirty = false;
    return was;
  }

  /** The upstream JSON schema the bridge expects, as a wire-ready string. */
  cameraMessage(frameId: number): string {
    return JSON.stringify({
      type: "camera",
      frame_id: frameId,
      position: this.position(),
      look_at: this.target,
      up: [0, 1, 0],
      fov: this.fovDeg,
    });
  }
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}
