/**
 * 3D face viewer: mesh buffer management, an orbit camera independent of
 * the server, and a dependency-free flat-shaded painter's-algorithm
 * renderer that any 2D canvas context can draw.
 *
 * The viewer never invents geometry: topology comes from an OBJ snapshot,
 * vertex positions only from server updates.
 */

export interface RenderedTri {
  /** 2D screen coordinates of the three corners. */
  screen: [number, number][];
  /** Mean camera-space depth, used for the paint order. */
  depth: number;
  /** Lambertian intensity in [0, 1]. */
  shade: number;
}

export class OrbitCamera {
  yaw = 0;
  pitch = 0;
  zoom = 1;

  orbit(dYaw: number, dPitch: number): void {
    this.yaw += dYaw;
    this.pitch = Math.min(Math.max(this.pitch + dPitch, -1.5), 1.5);
  }

  zoomBy(factor: number): void {
    this.zoom = Math.min(Math.max(this.zoom * factor, 0.05), 50);
  }

  /** Row-major 3x3 view rotation (world -> camera). */
  rotation(): number[] {
    const cy = Math.cos(this.yaw);
    const sy = Math.sin(this.yaw);
    const cp = Math.cos(this.pitch);
    const sp = Math.sin(this.pitch);
    // pitch about x after yaw about y
    return [cy, 0, sy, sp * sy, cp, -sp * cy, -cp * sy, sp, cp * cy];
  }
}

export class MeshViewer {
  private vertices: Float32Array | null = null;
  private faces: Uint32Array | null = null;
  readonly camera = new OrbitCamera();
  /** Set when an update was discarded and a snapshot should be fetched. */
  needsSnapshot = false;

  setTopology(vertices: Float32Array, faces: Uint32Array): void {
    if (faces.length % 3 !== 0) throw new Error("faces must be triangles");
    for (const f of faces) {
      if (f >= vertices.length / 3) throw new Error("face index out of range");
    }
    this.vertices = vertices.slice();
    this.faces = faces.slice();
    this.needsSnapshot = false;
  }

  get vertexCount(): number {
    return this.vertices === null ? 0 : this.vertices.length / 3;
  }

  getVertices(): Float32Array {
    if (this.vertices === null) throw new Error("no mesh loaded");
    return this.vertices;
  }

  /**
   * Apply a server vertex update.  A length mismatch means the client
   * topology is stale: the update is discarded and needsSnapshot is set so
   * the caller re-fetches the authoritative OBJ snapshot.
   */
  updateVertices(update: Float32Array): boolean {
    if (this.vertices === null || update.length !== this.vertices.length) {
      this.needsSnapshot = true;
      return false;
    }
    this.vertices.set(update);
    return true;
  }

  /** FNV-1a hash of the raw vertex buffer bytes, for identity checks. */
  bufferHash(): string {
    if (this.vertices === null) return "empty";
    const bytes = new Uint8Array(
      this.vertices.buffer,
      this.vertices.byteOffset,
      this.vertices.byteLength,
    );
    let h = 0x811c9dc5;
    for (const b of bytes) {
      h ^= b;
      h = Math.imul(h, 0x01000193) >>> 0;
    }
    return h.toString(16).padStart(8, "0");
  }

  /**
   * Project and shade every triangle; triangles arrive sorted back-to-front
   * so painting them in order yields a correct image.
   */
  render(width: number, height: number): RenderedTri[] {
    if (this.vertices === null || this.faces === null) return [];
    const v = this.vertices;
    const rot = this.camera.rotation();
    const n = v.length / 3;
    const cam = new Float64Array(3 * n);
    let minX = Infinity;
    let maxX = -Infinity;
    let minY = Infinity;
    let maxY = -Infinity;
    for (let i = 0; i < n; i++) {
      const x = v[3 * i]!;
      const y = v[3 * i + 1]!;
      const z = v[3 * i + 2]!;
      const cx = rot[0]! * x + rot[1]! * y + rot[2]! * z;
      const cy = rot[3]! * x + rot[4]! * y + rot[5]! * z;
      const cz = rot[6]! * x + rot[7]! * y + rot[8]! * z;
      cam[3 * i] = cx;
      cam[3 * i + 1] = cy;
      cam[3 * i + 2] = cz;
      minX = Math.min(minX, cx);
      maxX = Math.max(maxX, cx);
      minY = Math.min(minY, cy);
      maxY = Math.max(maxY, cy);
    }
    const extent = Math.max(maxX - minX, maxY - minY, 1e-9);
    const scale = (0.9 * Math.min(width, height) * this.camera.zoom) / extent;
    const midX = (minX + maxX) / 2;
    const midY = (minY + maxY) / 2;

    const tris: RenderedTri[] = [];
    for (let f = 0; f < this.faces.length; f += 3) {
      const ia = this.faces[f]!;
      const ib = this.faces[f + 1]!;
      const ic = this.faces[f + 2]!;
      const ax = cam[3 * ia]!;
      const ay = cam[3 * ia + 1]!;
      const az = cam[3 * ia + 2]!;
      const bx = cam[3 * ib]!;
      const by = cam[3 * ib + 1]!;
      const bz = cam[3 * ib + 2]!;
      const cx = cam[3 * ic]!;
      const cy = cam[3 * ic + 1]!;
      const cz = cam[3 * ic + 2]!;
      // face normal; skip triangles facing away from the +z viewer
      const ux = bx - ax;
      const uy = by - ay;
      const uz = bz - az;
      const wx = cx - ax;
      const wy = cy - ay;
      const wz = cz - az;
      const nx = uy * wz - uz * wy;
      const ny = uz * wx - ux * wz;
      const nz = ux * wy - uy * wx;
      if (nz <= 0) continue;
      const len = Math.hypot(nx, ny, nz) || 1;
      // headlight plus a little ambient so silhouettes stay visible
      const shade = 0.15 + 0.85 * (nz / len);
      const toScreen = (x: number, y: number): [number, number] => [
        width / 2 + (x - midX) * scale,
        height / 2 - (y - midY) * scale,
      ];
      tris.push({
        screen: [toScreen(ax, ay), toScreen(bx, by), toScreen(cx, cy)],
        depth: (az + bz + cz) / 3,
        shade,
      });
    }
    tris.sort((a, b) => a.depth - b.depth);
    return tris;
  }
}
