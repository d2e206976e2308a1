/**
 * WireMessage protocol types and codecs.
 *
 * JSON messages over a persistent bidirectional channel; one strictly
 * increasing sequence number per session.  Vertex payloads travel as
 * base64-packed little-endian f32 triples.
 */

export const CANVAS_SIZE = 256;

export type ClientKind =
  | "stroke"
  | "erase"
  | "gesture"
  | "switch_mode"
  | "undo"
  | "redo"
  | "get_mesh";

export type Mode =
  | "initial_sketching"
  | "followup_sketching"
  | "gesture_refinement";

export interface ClientMessage {
  kind: ClientKind;
  seq: number;
  payload?: Record<string, unknown>;
}

export interface ModelUpdate {
  kind: "model_update";
  seq: number;
  mode: Mode;
  coeffs: { u: number[]; v: number[] };
  vertices_b64: string;
  handle_rms_px: number | null;
  state_hash: string;
  action?: string;
  label?: string;
  confidence?: number;
}

export interface CoalescedAck {
  kind: "coalesced";
  seq: number;
}

export interface ErrorReply {
  kind: "error";
  seq: number | null;
  detail: string;
}

export type ServerMessage = ModelUpdate | CoalescedAck | ErrorReply;

export function encodeMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}

export function decodeServerMessage(raw: string): ServerMessage {
  const obj = JSON.parse(raw) as Record<string, unknown>;
  const kind = obj.kind;
  if (kind !== "model_update" && kind !== "coalesced" && kind !== "error") {
    throw new Error(`unknown server message kind ${String(kind)}`);
  }
  return obj as unknown as ServerMessage;
}

/** Decode a base64-packed little-endian f32 vertex buffer to xyz triples. */
export function unpackVertices(b64: string): Float32Array {
  const bin = typeof atob === "function" ? atob(b64) : bufferAtob(b64);
  const bytes = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
  if (bytes.length % 12 !== 0) {
    throw new Error(`vertex payload is ${bytes.length} bytes, not xyz f32 triples`);
  }
  const view = new DataView(bytes.buffer);
  const out = new Float32Array(bytes.length / 4);
  for (let i = 0; i < out.length; i++) out[i] = view.getFloat32(4 * i, true);
  return out;
}

function bufferAtob(b64: string): string {
  return Buffer.from(b64, "base64").toString("binary");
}

/** Parse an OBJ snapshot (v/f lines) into flat vertex and triangle arrays. */
export function parseObj(text: string): { vertices: Float32Array; faces: Uint32Array } {
  const verts: number[] = [];
  const faces: number[] = [];
  for (const line of text.split("\n")) {
    const parts = line.trim().split(/\s+/);
    if (parts[0] === "v") {
      verts.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
    } else if (parts[0] === "f") {
      for (let i = 1; i <= 3; i++) {
        const tok = parts[i];
        if (tok === undefined) throw new Error("non-triangular face in OBJ");
        faces.push(Number(tok.split("/")[0]) - 1);
      }
    }
  }
  return { vertices: Float32Array.from(verts), faces: Uint32Array.from(faces) };
}
