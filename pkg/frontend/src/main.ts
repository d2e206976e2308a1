/**
 * Browser entry point: wires the canvas, the viewer, and the controls to a
 * WebSocket transport.  All logic lives in the imported modules; this file
 * is DOM glue only and is not unit-tested.
 */

import { SessionClient, Transport } from "./client.js";
import { Controls } from "./controls.js";
import { CANVAS_SIZE, parseObj } from "./protocol.js";
import { SketchLayer } from "./sketchLayer.js";
import { StrokeCapture } from "./stroke.js";
import { MeshViewer } from "./viewer.js";

const SERVICE = `${location.protocol}//${location.host}`;

async function start(): Promise<void> {
  const created = await fetch(`${SERVICE}/sessions`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ mode: "followup_sketching" }),
  }).then((r) => r.json());
  const sid: string = created.session;

  const wsUrl = `${SERVICE.replace(/^http/, "ws")}/sessions/${sid}/channel`;
  const ws = new WebSocket(wsUrl);
  const transport: Transport = {
    send: (data) => ws.send(data),
    get connected() {
      return ws.readyState === WebSocket.OPEN;
    },
  };

  const sketchCanvas = document.getElementById("sketch") as HTMLCanvasElement;
  const viewCanvas = document.getElementById("view") as HTMLCanvasElement;
  const banner = document.getElementById("banner") as HTMLElement;
  const toast = document.getElementById("toast") as HTMLElement;
  const sketch2d = sketchCanvas.getContext("2d")!;
  const view2d = viewCanvas.getContext("2d")!;

  const layer = new SketchLayer();
  const viewer = new MeshViewer();
  const client = new SessionClient(transport, {
    onModelUpdate: (_update, vertices) => {
      if (!viewer.updateVertices(vertices)) void fetchSnapshot();
      requestAnimationFrame(draw);
    },
    onGesture: (update) => {
      toast.textContent = `${update.action} (${update.label}, ${(
        (update.confidence ?? 0) * 100
      ).toFixed(0)}%)`;
      toast.classList.add("visible");
      setTimeout(() => toast.classList.remove("visible"), 1500);
    },
    onError: (_seq, detail) => {
      toast.textContent = detail;
      toast.classList.add("visible", "error");
    },
    onOffline: (offline) => banner.classList.toggle("visible", offline),
  });
  const controls = new Controls(client, "followup_sketching");
  const capture = new StrokeCapture();

  async function fetchSnapshot(): Promise<void> {
    const text = await fetch(`${SERVICE}/sessions/${sid}/mesh.obj`).then((r) =>
      r.text(),
    );
    const { vertices, faces } = parseObj(text);
    viewer.setTopology(vertices, faces);
    requestAnimationFrame(draw);
  }

  function draw(): void {
    sketch2d.clearRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
    for (const cmd of layer.drawCommands(client.pendingEchoes)) {
      sketch2d.strokeStyle = cmd.color;
      sketch2d.lineWidth = cmd.width;
      sketch2d.beginPath();
      cmd.points.forEach(([x, y], i) =>
        i === 0 ? sketch2d.moveTo(x, y) : sketch2d.lineTo(x, y),
      );
      sketch2d.stroke();
    }
    const w = viewCanvas.width;
    const h = viewCanvas.height;
    view2d.clearRect(0, 0, w, h);
    for (const tri of viewer.render(w, h)) {
      const g = Math.round(200 * tri.shade + 30);
      view2d.fillStyle = `rgb(${g},${g},${g})`;
      view2d.beginPath();
      view2d.moveTo(tri.screen[0]![0], tri.screen[0]![1]);
      view2d.lineTo(tri.screen[1]![0], tri.screen[1]![1]);
      view2d.lineTo(tri.screen[2]![0], tri.screen[2]![1]);
      view2d.closePath();
      view2d.fill();
    }
  }

  ws.addEventListener("open", () => {
    client.handleConnected();
    void fetchSnapshot();
  });
  ws.addEventListener("message", (ev) => client.handleMessage(String(ev.data)));

  sketchCanvas.addEventListener("pointerdown", (ev) => {
    capture.begin(controls.activeTool, ev.offsetX, ev.offsetY, ev.timeStamp);
  });
  sketchCanvas.addEventListener("pointermove", (ev) => {
    if (capture.active) capture.extend(ev.offsetX, ev.offsetY, ev.timeStamp);
  });
  sketchCanvas.addEventListener("pointerup", () => {
    if (!capture.active) return;
    const stroke = capture.finish();
    if (stroke.tool === "gesture") client.sendGesture(stroke.points);
    else if (stroke.tool === "draw") client.sendStroke(stroke.points);
    requestAnimationFrame(draw);
  });

  let dragging = false;
  viewCanvas.addEventListener("pointerdown", () => (dragging = true));
  viewCanvas.addEventListener("pointerup", () => (dragging = false));
  viewCanvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    viewer.camera.orbit(ev.movementX * 0.01, ev.movementY * 0.01);
    requestAnimationFrame(draw);
  });
  viewCanvas.addEventListener("wheel", (ev) => {
    viewer.camera.zoomBy(ev.deltaY < 0 ? 1.1 : 1 / 1.1);
    requestAnimationFrame(draw);
  });

  for (const mode of ["initial_sketching", "followup_sketching", "gesture_refinement"] as const) {
    document
      .getElementById(`mode-${mode}`)
      ?.addEventListener("click", () => controls.selectMode(mode));
  }
  document.getElementById("tool-draw")?.addEventListener("click", () => controls.selectTool("draw"));
  document.getElementById("tool-gesture")?.addEventListener("click", () => controls.selectTool("gesture"));
  document.getElementById("undo")?.addEventListener("click", () => controls.undoButton());
  document.getElementById("redo")?.addEventListener("click", () => controls.redoButton());
}

void start();
