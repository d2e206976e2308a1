/**
 * Mode tabs, tool selection, and the undo/redo buttons.
 *
 * Buttons mirror the arrow gestures: pressing undo sends the same wire
 * message the left-arrow gesture would produce server-side.
 */

import { SessionClient } from "./client.js";
import { Mode } from "./protocol.js";
import { Tool } from "./stroke.js";

export const MODES: Mode[] = [
  "initial_sketching",
  "followup_sketching",
  "gesture_refinement",
];

export class Controls {
  activeTool: Tool = "draw";
  requestedMode: Mode;

  constructor(private readonly client: SessionClient, startMode: Mode) {
    this.requestedMode = startMode;
  }

  selectTool(tool: Tool): void {
    if (tool === "gesture" && this.requestedMode !== "gesture_refinement") {
      throw new Error("gesture tool requires refinement mode");
    }
    this.activeTool = tool;
  }

  selectMode(mode: Mode): number {
    if (!MODES.includes(mode)) throw new Error(`unknown mode ${mode}`);
    this.requestedMode = mode;
    if (mode !== "gesture_refinement" && this.activeTool === "gesture") {
      this.activeTool = "draw";
    }
    return this.client.switchMode(mode);
  }

  undoButton(): number {
    return this.client.undo();
  }

  redoButton(): number {
    return this.client.redo();
  }
}
