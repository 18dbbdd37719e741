/** Orbit-camera math for the viewport: drag deltas to camera parameters. */

import { CameraParams } from "./api.js";

export interface DragState {
  startX: number;
  startY: number;
  azimuth0: number;
  elevation0: number;
}

export function beginDrag(cam: CameraParams, x: number, y: number): DragState {
  return { startX: x, startY: y, azimuth0: cam.azimuth, elevation0: cam.elevation };
}

/** 0.4 degrees per pixel, elevation clamped away from the poles. */
export function dragTo(cam: CameraParams, drag: DragState, x: number, y: number): CameraParams {
  const azimuth = norm360(drag.azimuth0 + (x - drag.startX) * 0.4);
  const elevation = clamp(drag.elevation0 - (y - drag.startY) * 0.4, -85, 85);
  return { ...cam, azimuth, elevation };
}

export function zoom(cam: CameraParams, wheelDelta: number): CameraParams {
  const radius = clamp(cam.radius * Math.exp(wheelDelta * 0.001), 1.4, 8.0);
  return { ...cam, radius };
}

export function norm360(deg: number): number {
  const d = deg % 360;
  return d < 0 ? d + 360 : d;
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/** Debounce helper for render requests while dragging. */
export function debounce<A extends unknown[]>(fn: (...args: A) => void, ms: number): (...args: A) => void {
  let handle: ReturnType<typeof setTimeout> | undefined;
  return (...args: A) => {
    if (handle !== undefined) clearTimeout(handle);
    handle = setTimeout(() => fn(...args), ms);
  };
}
