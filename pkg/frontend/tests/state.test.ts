import { describe, expect, it } from "vitest";

import {
  CanvasState,
  extractMetricTokens,
  pixelToWorld,
  worldToPixel,
} from "../src/state.js";
import type { MapMeta, PlaybackResponse, PromptResponse, RunResponse, Snapshot } from "../src/types.js";

const meta: MapMeta = {
  metersPerPixel: 0.05,
  affine: [0.05, 0, 0, 0.05, -0.475, -0.475],
  floorIndex: 0,
};

function runResponse(): { data: RunResponse; raw: string } {
  const data: RunResponse = {
    trajectory: {
      episode_id: "session-x",
      nodes: [0, 1, 2],
      positions: [[0, 0, 0], [1, 0, 0], [2, 0, 0]],
      terminated_by: "stop_action",
    },
    metrics: { TL: 12.340000000000002, NE: 0.0, SR: 1, OSR: 1, SPL: 1.0 },
    steps: 3,
  };
  // raw body exactly as the server would serialize it
  const raw = '{"trajectory":{"episode_id":"session-x","nodes":[0,1,2],'
    + '"positions":[[0,0,0],[1,0,0],[2,0,0]],"terminated_by":"stop_action"},'
    + '"metrics":{"TL":12.340000000000002,"NE":0.0,"SR":1,"OSR":1,"SPL":1.0},"steps":3}';
  return { data, raw };
}

function snapshot(step: number, current: number): Snapshot {
  return { step, current, nodes: [], edges: [] };
}

describe("coordinate transforms", () => {
  it("round-trips pixel -> world -> pixel", () => {
    const px: [number, number] = [123, 45];
    const back = worldToPixel(meta, pixelToWorld(meta, px));
    expect(back[0]).toBeCloseTo(px[0], 9);
    expect(back[1]).toBeCloseTo(px[1], 9);
  });
});

describe("metric token extraction", () => {
  it("lifts server fields verbatim, byte for byte", () => {
    const { raw } = runResponse();
    const tokens = extractMetricTokens(raw);
    expect(tokens.TL).toBe("12.340000000000002");
    expect(tokens.NE).toBe("0.0");       // not renormalized to "0"
    expect(tokens.SR).toBe("1");
    expect(tokens.SPL).toBe("1.0");
    for (const [key, token] of Object.entries(tokens)) {
      expect(raw).toContain(`"${key}":${token}`);
    }
  });

  it("rejects bodies without a metrics object", () => {
    expect(() => extractMetricTokens('{"x":1}')).toThrow();
  });
});

describe("waypoint placement", () => {
  it("appends waypoints in placement order with labels", () => {
    const state = new CanvasState();
    state.selectScene("s", 0, meta);
    state.placeWaypoint([10, 10], { nodeId: 4, world: [0, 0] });
    state.placeWaypoint([20, 30], { nodeId: 7, world: [1, 1] });
    expect(state.waypoints.map((w) => w.index)).toEqual([1, 2]);
    expect(state.waypoints[1].snappedNode).toBe(7);
    expect(state.errorMessage).toBeNull();
  });

  it("server rejection leaves the state unchanged", () => {
    const state = new CanvasState();
    state.selectScene("s", 0, meta);
    state.placeWaypoint([10, 10], { nodeId: 4, world: [0, 0] });
    const before = state.waypoints;
    const result = state.placeWaypoint([99, 99], { error: "off the map" });
    expect(result).toBeNull();
    expect(state.waypoints).toEqual(before);
    expect(state.errorMessage).toBe("off the map");
  });

  it("world echo comes from the shared affine", () => {
    const state = new CanvasState();
    state.selectScene("s", 0, meta);
    const wp = state.placeWaypoint([100, 200], { nodeId: 1, world: [0, 0] })!;
    expect(wp.world[0]).toBeCloseTo(0.05 * 100 - 0.475, 12);
    expect(wp.world[1]).toBeCloseTo(0.05 * 200 - 0.475, 12);
  });
});

describe("run and playback", () => {
  function prepared(): CanvasState {
    const state = new CanvasState();
    state.selectScene("s", 0, meta);
    state.placeWaypoint([1, 1], { nodeId: 0, world: [0, 0] });
    state.placeWaypoint([9, 9], { nodeId: 5, world: [2, 2] });
    const preview: PromptResponse = {
      snapped_nodes: [0, 5],
      full_path: [],
      previews: [],
      matches_episode: null,
    };
    state.setPreview(preview);
    return state;
  }

  it("requires two waypoints and a preview before running", () => {
    const state = new CanvasState();
    state.selectScene("s", 0, meta);
    expect(state.canRun).toBe(false);
    const ready = prepared();
    expect(ready.canRun).toBe(true);
  });

  it("playback cursor spans exactly the server snapshots", () => {
    const state = prepared();
    const { data, raw } = runResponse();
    state.setRun(data, raw);
    const playback: PlaybackResponse = {
      run: data,
      snapshots: [snapshot(0, 0), snapshot(1, 1), snapshot(2, 2)],
    };
    state.setPlayback(playback);
    expect(state.snapshots.length).toBe(data.steps);
    expect(state.cursor).toBe(2);
    state.scrubTo(-5);
    expect(state.cursor).toBe(0);
    expect(state.currentSnapshot()?.current).toBe(0);
    state.scrubTo(99);
    expect(state.cursor).toBe(2);
  });

  it("metrics panel holds tokens, not recomputed values", () => {
    const state = prepared();
    const { data, raw } = runResponse();
    state.setRun(data, raw);
    expect(state.lastRun?.metricTokens.NE).toBe("0.0");
    expect(String(state.lastRun?.run.metrics.NE)).toBe("0"); // parse would lose bytes
  });

  it("clearing resets everything", () => {
    const state = prepared();
    const { data, raw } = runResponse();
    state.setRun(data, raw);
    state.clearWaypoints();
    expect(state.waypoints).toEqual([]);
    expect(state.lastRun).toBeNull();
    expect(state.currentSnapshot()).toBeNull();
  });
});
