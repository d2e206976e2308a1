/**
 * Freehand stroke capture: point accumulation with monotone timestamps,
 * canvas clamping, and uniform-arclength resampling so no more than
 * MAX_STROKE_POINTS are ever transmitted.
 */

import { CANVAS_SIZE } from "./protocol.js";

export const MAX_STROKE_POINTS = 512;

export type Tool = "draw" | "erase" | "gesture";

export interface CanvasStroke {
  tool: Tool;
  points: Array<[number, number]>;
  timestamps: number[];
}

export class StrokeCapture {
  private stroke: CanvasStroke | null = null;

  begin(tool: Tool, x: number, y: number, t: number): void {
    this.stroke = { tool, points: [], timestamps: [] };
    this.extend(x, y, t);
  }

  extend(x: number, y: number, t: number): void {
    const s = this.stroke;
    if (s === null) throw new Error("extend before begin");
    const last = s.timestamps[s.timestamps.length - 1];
    if (last !== undefined && t < last) {
      throw new Error(`timestamps must not decrease (${t} after ${last})`);
    }
    s.points.push([clampToCanvas(x), clampToCanvas(y)]);
    s.timestamps.push(t);
  }

  /** Finish the stroke and return it resampled for transmission. */
  finish(): CanvasStroke {
    const s = this.stroke;
    if (s === null) throw new Error("finish before begin");
    this.stroke = null;
    return { ...s, points: resampleForWire(s.points) };
  }

  get active(): boolean {
    return this.stroke !== null;
  }
}

function clampToCanvas(v: number): number {
  return Math.min(Math.max(v, 0), CANVAS_SIZE - 1e-6);
}

/**
 * Resample a polyline to at most MAX_STROKE_POINTS, uniformly by arclength.
 * Endpoints are preserved exactly; short strokes pass through unchanged.
 */
export function resampleForWire(
  points: Array<[number, number]>,
  maxPoints: number = MAX_STROKE_POINTS,
): Array<[number, number]> {
  if (points.length <= maxPoints) return points.map((p) => [p[0], p[1]]);
  const cum = [0];
  for (let i = 1; i < points.length; i++) {
    const [x0, y0] = points[i - 1]!;
    const [x1, y1] = points[i]!;
    cum.push(cum[i - 1]! + Math.hypot(x1 - x0, y1 - y0));
  }
  const total = cum[cum.length - 1]!;
  const out: Array<[number, number]> = [];
  let j = 0;
  for (let k = 0; k < maxPoints; k++) {
    const target = (total * k) / (maxPoints - 1);
    while (j < points.length - 2 && cum[j + 1]! < target) j++;
    const span = cum[j + 1]! - cum[j]!;
    const t = span > 0 ? (target - cum[j]!) / span : 0;
    const [x0, y0] = points[j]!;
    const [x1, y1] = points[j + 1]!;
    out.push([x0 + t * (x1 - x0), y0 + t * (y1 - y0)]);
  }
  out[0] = [...points[0]!];
  out[maxPoints - 1] = [...points[points.length - 1]!];
  return out;
}
