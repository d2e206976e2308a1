/**
 * 2D sketch layer: the client-side mirror of drawn polylines with the
 * standard category coloring (silhouette red, features blue, wrinkles
 * black), plus optimistic echoes rendered in a lighter tint until the
 * server acknowledges them.
 */

import { PendingEcho } from "./client.js";

export type Category = "silhouette" | "feature" | "wrinkle";

export const CATEGORY_COLORS: Record<Category, string> = {
  silhouette: "#cc2222",
  feature: "#2244cc",
  wrinkle: "#111111",
};

export const ECHO_COLOR = "#9aa4b0";

export interface DrawCommand {
  points: Array<[number, number]>;
  color: string;
  width: number;
}

export interface SketchPolyline {
  name: string;
  category: Category;
  points: Array<[number, number]>;
}

export class SketchLayer {
  private polylines: SketchPolyline[] = [];

  /** Replace the authoritative sketch contents (e.g. after a mode switch). */
  setPolylines(polylines: SketchPolyline[]): void {
    for (const p of polylines) {
      if (!(p.category in CATEGORY_COLORS)) {
        throw new Error(`unknown category ${p.category}`);
      }
    }
    this.polylines = polylines.map((p) => ({ ...p, points: [...p.points] }));
  }

  getPolylines(): readonly SketchPolyline[] {
    return this.polylines;
  }

  /** Flat list of strokes to draw, authoritative lines first, echoes last. */
  drawCommands(echoes: readonly PendingEcho[] = []): DrawCommand[] {
    const out: DrawCommand[] = this.polylines.map((p) => ({
      points: p.points,
      color: CATEGORY_COLORS[p.category],
      width: p.category === "wrinkle" ? 1 : 2,
    }));
    for (const echo of echoes) {
      if (echo.points !== undefined) {
        out.push({ points: echo.points, color: ECHO_COLOR, width: 1 });
      }
    }
    return out;
  }
}
