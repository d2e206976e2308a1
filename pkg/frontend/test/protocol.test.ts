import { describe, expect, it } from "vitest";
import {
  decodeServerMessage,
  encodeMessage,
  parseObj,
  unpackVertices,
} from "../src/protocol.js";

function packF32LE(values: number[]): string {
  const arr = new Float32Array(values);
  return Buffer.from(arr.buffer).toString("base64");
}

describe("wire codecs", () => {
  it("round-trips a client message", () => {
    const raw = encodeMessage({ kind: "stroke", seq: 3, payload: { points: [[1, 2]] } });
    const obj = JSON.parse(raw);
    expect(obj).toEqual({ kind: "stroke", seq: 3, payload: { points: [[1, 2]] } });
  });

  it("decodes known server kinds and rejects others", () => {
    const msg = decodeServerMessage(JSON.stringify({ kind: "coalesced", seq: 9 }));
    expect(msg.kind).toBe("coalesced");
    expect(() => decodeServerMessage(JSON.stringify({ kind: "nope", seq: 1 }))).toThrow();
  });

  it("unpacks base64 little-endian f32 vertex triples", () => {
    const values = [1.5, -2.25, 0, 10, 20, 30];
    const out = unpackVertices(packF32LE(values));
    expect(Array.from(out)).toEqual(values);
  });

  it("rejects payloads that are not whole xyz triples", () => {
    expect(() => unpackVertices(packF32LE([1, 2]))).toThrow(/triples/);
  });

  it("parses OBJ vertices and 1-based triangular faces", () => {
    const obj = ["v 0 0 0", "v 1 0 0", "v 0 1 0", "f 1 2 3", ""].join("\n");
    const { vertices, faces } = parseObj(obj);
    expect(Array.from(vertices)).toEqual([0, 0, 0, 1, 0, 0, 0, 1, 0]);
    expect(Array.from(faces)).toEqual([0, 1, 2]);
  });

  it("parses faces with texture/normal slashes", () => {
    const { faces } = parseObj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n");
    expect(Array.from(faces)).toEqual([0, 1, 2]);
  });
});
