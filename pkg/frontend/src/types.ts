// Typed payloads of the bench service endpoints.

export interface SceneSummary {
  scene_id: string;
  floor_count: number;
  node_count: number;
}

export interface SnapResponse {
  node_id: number;
  position: [number, number, number];
  floor_index: number;
}

export interface SessionResponse {
  session_id: string;
  scene_id: string;
  policy: string;
}

export interface PromptPreview {
  floor_index: number;
  png_base64: string;
  meters_per_pixel: number;
}

export interface PromptResponse {
  snapped_nodes: number[];
  full_path: { node_id: number; position: [number, number, number] }[];
  previews: PromptPreview[];
  matches_episode: boolean | null;
}

export interface RunMetrics {
  TL: number;
  NE: number;
  SR: number;
  OSR: number;
  SPL: number;
}

export interface RunResponse {
  trajectory: {
    episode_id: string;
    nodes: number[];
    positions: [number, number, number][];
    terminated_by: string;
  };
  metrics: RunMetrics;
  steps: number;
}

export interface SnapshotNode {
  id: number;
  status: "current" | "visited" | "navigable";
  position: [number, number, number];
  floor_index: number;
  first_visit_step: number | null;
  view_count: number;
}

export interface Snapshot {
  step: number;
  current: number | null;
  nodes: SnapshotNode[];
  edges: [number, number, number][];
}

export interface PlaybackResponse {
  run: RunResponse;
  snapshots: Snapshot[];
}

export interface MapMeta {
  metersPerPixel: number;
  affine: [number, number, number, number, number, number]; // pixel -> world
  floorIndex: number;
}

export interface Waypoint {
  index: number;
  px: [number, number]; // canvas pixel (identical to raster pixel space)
  world: [number, number];
  snappedNode: number | null;
  snappedWorld: [number, number] | null;
}

export const METRIC_KEYS = ["TL", "NE", "SR", "OSR", "SPL"] as const;
export type MetricKey = (typeof METRIC_KEYS)[number];
