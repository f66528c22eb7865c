// Browser entry point: map display, click-to-place waypoints with server
// snap echoes, prompt preview, run, and step-by-step playback.

import { ApiError, BenchClient } from "./api.js";
import { CanvasState, pixelToWorld, worldToPixel } from "./state.js";
import type { MapMeta, Snapshot } from "./types.js";
import { METRIC_KEYS } from "./types.js";

const client = new BenchClient("");
const state = new CanvasState();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const sceneSelect = el<HTMLSelectElement>("scene");
const floorSelect = el<HTMLSelectElement>("floor");
const policySelect = el<HTMLSelectElement>("policy");
const styleSelect = el<HTMLSelectElement>("style");
const rotationSelect = el<HTMLSelectElement>("rotation");
const noiseSelect = el<HTMLSelectElement>("noise");
const canvas = el<HTMLCanvasElement>("map");
const previewImg = el<HTMLImageElement>("preview");
const metricsPanel = el<HTMLDivElement>("metrics");
const statusLine = el<HTMLDivElement>("status");
const slider = el<HTMLInputElement>("playback");
const stepLabel = el<HTMLSpanElement>("step-label");
const matchBadge = el<HTMLSpanElement>("match-badge");

const ctx = canvas.getContext("2d");
if (!ctx) throw new Error("2D context unavailable");
ctx.imageSmoothingEnabled = false;

let mapImage: HTMLImageElement | null = null;
let sessionId: string | null = null;

function setStatus(text: string, isError = false): void {
  statusLine.textContent = text;
  statusLine.className = isError ? "status error" : "status";
}

async function loadScenes(): Promise<void> {
  const scenes = await client.listScenes();
  sceneSelect.innerHTML = "";
  for (const scene of scenes) {
    const opt = document.createElement("option");
    opt.value = scene.scene_id;
    opt.textContent = `${scene.scene_id} (${scene.floor_count}f, ${scene.node_count} nodes)`;
    opt.dataset.floors = String(scene.floor_count);
    sceneSelect.appendChild(opt);
  }
  await selectScene();
}

async function selectScene(): Promise<void> {
  const sceneId = sceneSelect.value;
  const floors = Number(sceneSelect.selectedOptions[0]?.dataset.floors ?? 1);
  floorSelect.innerHTML = "";
  for (let f = 0; f < floors; f++) {
    const opt = document.createElement("option");
    opt.value = String(f);
    opt.textContent = `floor ${f}`;
    floorSelect.appendChild(opt);
  }
  await loadFloor();
  sessionId = null;
}

async function loadFloor(): Promise<void> {
  const sceneId = sceneSelect.value;
  const floor = Number(floorSelect.value || 0);
  const meta = await client.mapMeta(sceneId, floor);
  const mapMeta: MapMeta = {
    metersPerPixel: meta.metersPerPixel,
    affine: meta.affine,
    floorIndex: floor,
  };
  const url = URL.createObjectURL(meta.blob);
  mapImage = new Image();
  await new Promise<void>((resolve, reject) => {
    mapImage!.onload = () => resolve();
    mapImage!.onerror = () => reject(new Error("map image failed to load"));
    mapImage!.src = url;
  });
  canvas.width = mapImage.width;   // canvas pixels == raster pixels, 1:1
  canvas.height = mapImage.height;
  state.selectScene(sceneId, floor, mapMeta);
  redraw();
  setStatus(`loaded ${sceneId} floor ${floor}`);
}

function drawMarker(x: number, y: number, color: string, label?: string): void {
  if (!ctx) return;
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(x, y, 5, 0, 2 * Math.PI);
  ctx.fill();
  if (label) {
    ctx.fillStyle = "#111";
    ctx.font = "12px sans-serif";
    ctx.fillText(label, x + 7, y - 7);
  }
}

function drawSnapshot(snapshot: Snapshot): void {
  if (!ctx || !state.mapMeta) return;
  const meta = state.mapMeta;
  const colors: Record<string, string> = {
    current: "#d22", visited: "#26c", navigable: "#bbb",
  };
  for (const [a, b] of snapshot.edges) {
    const na = snapshot.nodes.find((n) => n.id === a);
    const nb = snapshot.nodes.find((n) => n.id === b);
    if (!na || !nb || na.floor_index !== meta.floorIndex
        || nb.floor_index !== meta.floorIndex) continue;
    const pa = worldToPixel(meta, [na.position[0], na.position[1]]);
    const pb = worldToPixel(meta, [nb.position[0], nb.position[1]]);
    ctx.strokeStyle = "#9993";
    ctx.beginPath();
    ctx.moveTo(pa[0], pa[1]);
    ctx.lineTo(pb[0], pb[1]);
    ctx.stroke();
  }
  for (const node of snapshot.nodes) {
    if (node.floor_index !== meta.floorIndex) continue;
    const [x, y] = worldToPixel(meta, [node.position[0], node.position[1]]);
    ctx.fillStyle = colors[node.status] ?? "#999";
    ctx.beginPath();
    ctx.arc(x, y, node.status === "current" ? 5 : 3, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function drawExecutedPath(): void {
  if (!ctx || !state.mapMeta || !state.lastRun) return;
  const meta = state.mapMeta;
  const positions = state.lastRun.run.trajectory.positions;
  ctx.strokeStyle = "#d22";
  ctx.lineWidth = 2;
  ctx.beginPath();
  let started = false;
  for (const pos of positions) {
    const [x, y] = worldToPixel(meta, [pos[0], pos[1]]);
    if (!started) {
      ctx.moveTo(x, y);
      started = true;
    } else {
      ctx.lineTo(x, y);
    }
  }
  ctx.stroke();
  ctx.lineWidth = 1;
}

function redraw(): void {
  if (!ctx || !mapImage) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(mapImage, 0, 0);
  const snapshot = state.currentSnapshot();
  if (snapshot) drawSnapshot(snapshot);
  drawExecutedPath();
  for (const wp of state.waypoints) {
    drawMarker(wp.px[0], wp.px[1], "#2a2", String(wp.index));
    if (wp.snappedWorld && state.mapMeta) {
      const [sx, sy] = worldToPixel(state.mapMeta, wp.snappedWorld);
      drawMarker(sx, sy, "#16a");
    }
  }
}

async function onCanvasClick(ev: MouseEvent): Promise<void> {
  if (!state.sceneId || !state.mapMeta) return;
  const rect = canvas.getBoundingClientRect();
  const px: [number, number] = [ev.clientX - rect.left, ev.clientY - rect.top];
  const [wx, wy] = pixelToWorld(state.mapMeta, px);
  try {
    const snap = await client.snap(state.sceneId, wx, wy, state.floor);
    state.placeWaypoint(px, {
      nodeId: snap.node_id,
      world: [snap.position[0], snap.position[1]],
    });
    setStatus(`waypoint ${state.waypoints.length} -> node ${snap.node_id}`);
  } catch (err) {
    state.placeWaypoint(px, { error: String(err) });
    setStatus(state.errorMessage ?? "rejected", true);
  }
  redraw();
}

async function submitPrompt(): Promise<void> {
  if (!state.sceneId) return;
  if (state.waypoints.length < 2) {
    setStatus("place at least two waypoints", true);
    return;
  }
  try {
    if (!sessionId) {
      sessionId = (await client.createSession(state.sceneId, policySelect.value)).session_id;
    }
    const waypoints = state.waypoints.map((wp) => [wp.world[0], wp.world[1], state.floor]);
    const result = await client.submitPrompt(sessionId, waypoints, {
      style: styleSelect.value,
      rotation: Number(rotationSelect.value),
      noiseKind: noiseSelect.value === "salt_pepper" ? "salt_pepper"
        : noiseSelect.value === "drop_first_step" ? "drop_first_step" : "none",
      noiseRatio: noiseSelect.value === "salt_pepper" ? 0.2 : 0,
    });
    state.setPreview(result.data);
    const first = result.data.previews[0];
    previewImg.src = `data:image/png;base64,${first.png_base64}`;
    matchBadge.textContent = result.data.matches_episode === null ? ""
      : result.data.matches_episode ? "matches dataset prompt" : "differs from dataset prompt";
    setStatus(`prompt over ${result.data.full_path.length} nodes ready`);
  } catch (err) {
    setStatus(err instanceof ApiError ? err.detail : String(err), true);
  }
}

async function runEpisode(): Promise<void> {
  if (!sessionId || !state.canRun) {
    setStatus("submit a prompt first", true);
    return;
  }
  try {
    const result = await client.run(sessionId);
    state.setRun(result.data, result.raw);
    const playback = await client.playback(sessionId);
    state.setPlayback(playback.data.snapshots ? playback.data : { run: result.data, snapshots: [] });
    renderMetrics();
    slider.max = String(Math.max(state.snapshots.length - 1, 0));
    slider.value = slider.max;
    stepLabel.textContent = `${state.cursor + 1}/${state.snapshots.length}`;
    const ok = result.data.metrics.SR === 1;
    setStatus(ok ? `success in ${result.data.steps} steps` : "episode failed", !ok);
    redraw();
  } catch (err) {
    setStatus(err instanceof ApiError ? err.detail : String(err), true);
  }
}

function renderMetrics(): void {
  metricsPanel.innerHTML = "";
  if (!state.lastRun) return;
  for (const key of METRIC_KEYS) {
    const row = document.createElement("div");
    row.className = "metric";
    const label = document.createElement("span");
    label.textContent = key;
    const value = document.createElement("code");
    value.textContent = state.lastRun.metricTokens[key];  // verbatim server token
    row.append(label, value);
    metricsPanel.appendChild(row);
  }
  const term = document.createElement("div");
  term.className = "metric";
  term.textContent = `terminated_by: ${state.lastRun.run.trajectory.terminated_by}`;
  metricsPanel.appendChild(term);
}

function onScrub(): void {
  state.scrubTo(Number(slider.value));
  stepLabel.textContent = state.snapshots.length
    ? `${state.cursor + 1}/${state.snapshots.length}` : "-";
  redraw();
}

function clearAll(): void {
  state.clearWaypoints();
  previewImg.removeAttribute("src");
  matchBadge.textContent = "";
  metricsPanel.innerHTML = "";
  sessionId = null;
  redraw();
  setStatus("cleared");
}

export function boot(): void {
  sceneSelect.addEventListener("change", () => void selectScene());
  floorSelect.addEventListener("change", () => void loadFloor());
  canvas.addEventListener("click", (ev) => void onCanvasClick(ev));
  el<HTMLButtonElement>("submit").addEventListener("click", () => void submitPrompt());
  el<HTMLButtonElement>("run").addEventListener("click", () => void runEpisode());
  el<HTMLButtonElement>("clear").addEventListener("click", clearAll);
  slider.addEventListener("input", onScrub);
  void loadScenes().catch((err) => setStatus(String(err), true));
}

boot();
