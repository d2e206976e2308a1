/**
 * Session client: sequence numbering, single in-flight edit message with
 * client-side buffering, optimistic stroke echo with authoritative
 * reconciliation, and connection-loss queueing.
 *
 * The client never computes geometry locally; every mesh update originates
 * from a server model_update reply.
 */

import {
  ClientKind,
  ClientMessage,
  decodeServerMessage,
  encodeMessage,
  ModelUpdate,
  Mode,
  ServerMessage,
  unpackVertices,
} from "./protocol.js";

export interface Transport {
  send(data: string): void;
  readonly connected: boolean;
}

export interface PendingEcho {
  seq: number;
  kind: ClientKind;
  points?: Array<[number, number]>;
}

export interface ClientEvents {
  onModelUpdate?: (update: ModelUpdate, vertices: Float32Array) => void;
  onGesture?: (update: ModelUpdate) => void;
  onError?: (seq: number | null, detail: string) => void;
  /** Connection banner: true while messages are being queued offline. */
  onOffline?: (offline: boolean) => void;
}

export class SessionClient {
  private nextSeq = 1;
  private inFlight: ClientMessage | null = null;
  private queue: ClientMessage[] = [];
  /** Optimistic echoes not yet confirmed, oldest first. */
  readonly pendingEchoes: PendingEcho[] = [];
  /** Hash of the authoritative server state after the last acknowledgment. */
  serverStateHash: string | null = null;
  mode: Mode | null = null;
  vertices: Float32Array | null = null;

  constructor(
    private readonly transport: Transport,
    private readonly events: ClientEvents = {},
  ) {}

  get pendingRequest(): boolean {
    return this.inFlight !== null;
  }

  get queuedCount(): number {
    return this.queue.length;
  }

  sendStroke(points: Array<[number, number]>): number {
    return this.submit("stroke", { points }, points);
  }

  sendGesture(points: Array<[number, number]>): number {
    return this.submit("gesture", { points }, points);
  }

  sendErase(target: string, name?: string, span?: [number, number]): number {
    const payload: Record<string, unknown> = { target };
    if (name !== undefined) payload.name = name;
    if (span !== undefined) payload.span = span;
    return this.submit("erase", payload);
  }

  switchMode(mode: Mode): number {
    return this.submit("switch_mode", { mode });
  }

  undo(): number {
    return this.submit("undo");
  }

  redo(): number {
    return this.submit("redo");
  }

  requestMesh(): number {
    return this.submit("get_mesh");
  }

  private submit(
    kind: ClientKind,
    payload?: Record<string, unknown>,
    echoPoints?: Array<[number, number]>,
  ): number {
    const msg: ClientMessage = { kind, seq: this.nextSeq++ };
    if (payload !== undefined) msg.payload = payload;
    if (echoPoints !== undefined) {
      this.pendingEchoes.push({ seq: msg.seq, kind, points: echoPoints });
    }
    this.queue.push(msg);
    this.pump();
    return msg.seq;
  }

  /** Push buffered messages out, keeping at most one edit in flight. */
  private pump(): void {
    if (!this.transport.connected) {
      this.events.onOffline?.(true);
      return;
    }
    if (this.inFlight !== null) return;
    const msg = this.queue.shift();
    if (msg === undefined) return;
    this.inFlight = msg;
    this.transport.send(encodeMessage(msg));
  }

  /** Call when the transport (re)connects; flushes the offline queue. */
  handleConnected(): void {
    this.events.onOffline?.(false);
    this.pump();
  }

  handleMessage(raw: string): ServerMessage {
    const msg = decodeServerMessage(raw);
    if (this.inFlight !== null && msg.seq === this.inFlight.seq) {
      this.inFlight = null;
    }
    this.dropEchoesThrough(msg.seq);
    if (msg.kind === "model_update") {
      this.serverStateHash = msg.state_hash;
      this.mode = msg.mode;
      this.vertices = unpackVertices(msg.vertices_b64);
      this.events.onModelUpdate?.(msg, this.vertices);
      if (msg.action !== undefined) this.events.onGesture?.(msg);
    } else if (msg.kind === "error") {
      this.events.onError?.(msg.seq, msg.detail);
    }
    // coalesced acks carry no state; the burst's surviving stroke will
    this.pump();
    return msg;
  }

  private dropEchoesThrough(seq: number | null): void {
    if (seq === null) return;
    while (
      this.pendingEchoes.length > 0 &&
      this.pendingEchoes[0]!.seq <= seq
    ) {
      this.pendingEchoes.shift();
    }
  }
}
