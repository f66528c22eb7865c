// Thin fetch client for the bench service. Every number shown in the UI
// comes from these responses; the raw body text is kept so the metrics
// panel can echo server fields byte-for-byte.

import type {
  PlaybackResponse,
  PromptResponse,
  RunResponse,
  SceneSummary,
  SessionResponse,
  SnapResponse,
} from "./types.js";

export interface RawResult<T> {
  data: T;
  raw: string;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<RawResult<T>> {
  const resp = await fetch(url, init);
  const raw = await resp.text();
  if (!resp.ok) {
    let detail = raw;
    try {
      detail = JSON.parse(raw).detail ?? raw;
    } catch {
      // non-JSON error body: show as-is
    }
    throw new ApiError(resp.status, detail);
  }
  return { data: JSON.parse(raw) as T, raw };
}

export class BenchClient {
  constructor(private base: string = "") {}

  async listScenes(): Promise<SceneSummary[]> {
    return (await request<SceneSummary[]>(`${this.base}/scenes`)).data;
  }

  mapUrl(sceneId: string, floor: number): string {
    return `${this.base}/scenes/${sceneId}/map?floor=${floor}`;
  }

  async mapMeta(sceneId: string, floor: number) {
    const resp = await fetch(this.mapUrl(sceneId, floor));
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    const affine = (resp.headers.get("X-Affine") ?? "").split(",").map(Number);
    return {
      blob: await resp.blob(),
      metersPerPixel: Number(resp.headers.get("X-Meters-Per-Pixel")),
      affine: affine as [number, number, number, number, number, number],
      floorIndex: floor,
    };
  }

  async snap(sceneId: string, x: number, y: number, floor: number): Promise<SnapResponse> {
    const url = `${this.base}/scenes/${sceneId}/snap?x=${x}&y=${y}&floor=${floor}`;
    return (await request<SnapResponse>(url)).data;
  }

  async createSession(sceneId: string, policy: string): Promise<SessionResponse> {
    return (
      await request<SessionResponse>(`${this.base}/sessions`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ scene_id: sceneId, policy }),
      })
    ).data;
  }

  async submitPrompt(
    sessionId: string,
    waypoints: number[][],
    opts: { style?: string; rotation?: number; noiseKind?: string; noiseRatio?: number;
            compareEpisode?: string } = {},
  ): Promise<RawResult<PromptResponse>> {
    return request<PromptResponse>(`${this.base}/sessions/${sessionId}/prompt`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        waypoints,
        style: opts.style ?? "e",
        rotation_quarter_turns: opts.rotation ?? 0,
        noise_kind: opts.noiseKind ?? "none",
        noise_ratio: opts.noiseRatio ?? 0,
        compare_episode: opts.compareEpisode ?? null,
      }),
    });
  }

  async run(sessionId: string): Promise<RawResult<RunResponse>> {
    return request<RunResponse>(`${this.base}/sessions/${sessionId}/run`, {
      method: "POST",
    });
  }

  async playback(sessionId: string): Promise<RawResult<PlaybackResponse>> {
    return request<PlaybackResponse>(`${this.base}/sessions/${sessionId}/playback`);
  }
}
