/** Map drawing sessions: collect vertices, produce policy documents. */

import type { PolicyDoc } from "./api.js";

export interface Vertex {
  lat: number;
  lon: number;
}

/** One in-progress polygon; vertices are kept at full double precision. */
export class DrawingSession {
  private vertices: Vertex[] = [];
  private closed = false;

  addVertex(lat: number, lon: number): void {
    if (this.closed) {
      throw new Error("polygon already closed");
    }
    if (!Number.isFinite(lat) || !Number.isFinite(lon)) {
      throw new Error("vertex must be finite");
    }
    if (lat < -90 || lat > 90 || lon < -180 || lon > 180) {
      throw new Error("vertex out of range");
    }
    this.vertices.push({ lat, lon });
  }

  undo(): void {
    if (!this.closed) {
      this.vertices.pop();
    }
  }

  close(): void {
    if (this.vertices.length < 3) {
      throw new Error("a polygon needs at least 3 vertices");
    }
    this.closed = true;
  }

  get isClosed(): boolean {
    return this.closed;
  }

  ring(): Vertex[] {
    return this.vertices.map((v) => ({ ...v }));
  }

  /** Ring as the [[lat, lon], ...] shape the API expects. */
  serialize(): number[][] {
    if (!this.closed) {
      throw new Error("close the polygon before serializing");
    }
    return this.vertices.map((v) => [v.lat, v.lon]);
  }
}

export function lockdownPolicy(
  session: DrawingSession,
  name: string,
  start: string,
  days: number,
): PolicyDoc {
  return { kind: "lockdown", name, start, days, polygons: [session.serialize()] };
}

export function parsePolygons(doc: PolicyDoc): Vertex[][] {
  return (doc.polygons ?? []).map((ring) =>
    ring.map(([lat, lon]) => ({ lat, lon })),
  );
}

/** Largest per-coordinate deviation between two rings, in degrees. */
export function ringDeviation(a: Vertex[], b: Vertex[]): number {
  if (a.length !== b.length) {
    return Infinity;
  }
  let worst = 0;
  for (let i = 0; i < a.length; i++) {
    worst = Math.max(
      worst,
      Math.abs(a[i].lat - b[i].lat),
      Math.abs(a[i].lon - b[i].lon),
    );
  }
  return worst;
}
