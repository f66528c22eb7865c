// DOM-free UI state: waypoint placement, prompt previews, run results, and
// playback scrubbing. Navigation numbers are never recomputed here; the
// metrics panel shows tokens lifted verbatim from the server's response
// body.

import type {
  MapMeta,
  MetricKey,
  PlaybackResponse,
  PromptResponse,
  RunResponse,
  Snapshot,
  Waypoint,
} from "./types.js";
import { METRIC_KEYS } from "./types.js";

export function pixelToWorld(meta: MapMeta, px: [number, number]): [number, number] {
  const [a00, a01, a10, a11, b0, b1] = meta.affine;
  return [
    a00 * px[0] + a01 * px[1] + b0,
    a10 * px[0] + a11 * px[1] + b1,
  ];
}

export function worldToPixel(meta: MapMeta, world: [number, number]): [number, number] {
  const [a00, a01, a10, a11, b0, b1] = meta.affine;
  const det = a00 * a11 - a01 * a10;
  const dx = world[0] - b0;
  const dy = world[1] - b1;
  return [(a11 * dx - a01 * dy) / det, (-a10 * dx + a00 * dy) / det];
}

/** Pull the literal value tokens of the metrics fields out of the raw
 * response body, so the panel is byte-equal to what the server sent. */
export function extractMetricTokens(raw: string): Record<MetricKey, string> {
  const start = raw.indexOf('"metrics"');
  if (start < 0) throw new Error("response has no metrics object");
  const open = raw.indexOf("{", start);
  let depth = 0;
  let end = open;
  for (; end < raw.length; end++) {
    if (raw[end] === "{") depth++;
    else if (raw[end] === "}" && --depth === 0) break;
  }
  const body = raw.slice(open, end + 1);
  const out = {} as Record<MetricKey, string>;
  for (const key of METRIC_KEYS) {
    const match = body.match(new RegExp(`"${key}"\\s*:\\s*([^,}]+)`));
    if (!match) throw new Error(`metrics object lacks ${key}`);
    out[key] = match[1].trim();
  }
  return out;
}

export interface RunRecord {
  run: RunResponse;
  metricTokens: Record<MetricKey, string>;
}

export class CanvasState {
  sceneId: string | null = null;
  floor = 0;
  mapMeta: MapMeta | null = null;
  waypoints: Waypoint[] = [];
  preview: PromptResponse | null = null;
  lastRun: RunRecord | null = null;
  snapshots: Snapshot[] = [];
  cursor = 0;
  errorMessage: string | null = null;

  selectScene(sceneId: string, floor: number, meta: MapMeta): void {
    this.sceneId = sceneId;
    this.floor = floor;
    this.mapMeta = meta;
    this.clearWaypoints();
  }

  clearWaypoints(): void {
    this.waypoints = [];
    this.preview = null;
    this.lastRun = null;
    this.snapshots = [];
    this.cursor = 0;
    this.errorMessage = null;
  }

  /** Append a clicked waypoint; the caller passes the server echo of the
   * snapped node or an error message, in which case nothing changes. */
  placeWaypoint(
    px: [number, number],
    echo: { nodeId: number; world: [number, number] } | { error: string },
  ): Waypoint | null {
    if ("error" in echo) {
      this.errorMessage = echo.error;
      return null;
    }
    if (!this.mapMeta) throw new Error("no map loaded");
    this.errorMessage = null;
    const wp: Waypoint = {
      index: this.waypoints.length + 1,
      px,
      world: pixelToWorld(this.mapMeta, px),
      snappedNode: echo.nodeId,
      snappedWorld: echo.world,
    };
    this.waypoints = [...this.waypoints, wp];
    return wp;
  }

  get canRun(): boolean {
    return this.waypoints.length >= 2 && this.preview !== null;
  }

  setPreview(preview: PromptResponse): void {
    this.preview = preview;
    this.lastRun = null;
    this.snapshots = [];
    this.cursor = 0;
  }

  setRun(run: RunResponse, raw: string): void {
    this.lastRun = { run, metricTokens: extractMetricTokens(raw) };
  }

  setPlayback(playback: PlaybackResponse): void {
    this.snapshots = playback.snapshots;
    this.cursor = Math.max(0, this.snapshots.length - 1);
  }

  scrubTo(step: number): Snapshot | null {
    if (!this.snapshots.length) return null;
    this.cursor = Math.min(Math.max(step, 0), this.snapshots.length - 1);
    return this.snapshots[this.cursor];
  }

  currentSnapshot(): Snapshot | null {
    return this.snapshots.length ? this.snapshots[this.cursor] : null;
  }
}
