"""HTTP service for the companion UI: scenes, top-view maps, prompt
submission, episode execution, and step-by-step playback.

All navigation logic lives in the core modules; handlers only orchestrate,
so service runs are bit-identical to offline runs of the same inputs.
Sessions are kept in memory behind a lock, one logical owner per session.
"""

from __future__ import annotations

import io
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel
from PIL import Image

from . import agents as ag
from . import episodes as ep
from . import metrics as mt
from . import policy as pol
from . import promptmap as pm
from .world import Scene, load_scene

SNAP_RADIUS_M = 1.0


class PromptRequest(BaseModel):
    waypoints: list[list[float]]          # [[x, y], ...] world meters
    style: str = "e"
    rotation_quarter_turns: int = 0
    noise_kind: str = "none"
    noise_ratio: float = 0.0
    compare_episode: Optional[str] = None


class SessionRequest(BaseModel):
    scene_id: str
    policy: str = "oracle"               # oracle | geometric | learned


@dataclass
class Session:
    session_id: str
    scene_id: str
    policy: str
    waypoints: list[tuple[float, float]] = field(default_factory=list)
    episode: Optional[ep.Episode] = None
    prompt_seed: int = 0
    last_run: Optional[dict] = None
    snapshots: tuple = ()


def _png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _b64_png(pixels: np.ndarray) -> str:
    import base64

    return base64.b64encode(_png_bytes(pixels)).decode("ascii")


class BenchService:
    """Holds loaded scenes, dataset episodes (optional), and sessions."""

    def __init__(self, scenes: dict[str, Scene],
                 dataset_episodes: Optional[dict[str, ep.Episode]] = None,
                 params: Optional[pol.PolicyParams] = None):
        self.scenes = scenes
        self.dataset_episodes = dataset_episodes or {}
        self.params = params
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()

    @staticmethod
    def from_dir(scenes_dir: str | Path,
                 checkpoint: Optional[str | Path] = None) -> "BenchService":
        scenes: dict[str, Scene] = {}
        scenes_dir = Path(scenes_dir)
        for path in sorted(scenes_dir.glob("*.json")):
            scene = load_scene(path)
            scenes[scene.scene_id] = scene
        if not scenes:
            raise FileNotFoundError(f"no scene files in {scenes_dir}")
        params = pol.load_params(checkpoint) if checkpoint else None
        return BenchService(scenes, params=params)

    # -- session helpers ----------------------------------------------------

    def scene(self, scene_id: str) -> Scene:
        if scene_id not in self.scenes:
            raise HTTPException(404, f"unknown scene {scene_id}")
        return self.scenes[scene_id]

    def session(self, session_id: str) -> Session:
        with self.lock:
            if session_id not in self.sessions:
                raise HTTPException(404, f"unknown session {session_id}")
            return self.sessions[session_id]

    def snap_waypoints(self, scene: Scene, waypoints: list[list[float]]) -> list[int]:
        snapped: list[int] = []
        positions = scene.graph.positions()
        for i, wp in enumerate(waypoints):
            if len(wp) < 2:
                raise HTTPException(422, "waypoints must be [x, y] pairs")
            floor = 0 if len(wp) < 3 else int(wp[2])
            same_floor = [n for n in scene.graph.nodes if n.floor_index == floor]
            if not same_floor:
                raise HTTPException(422, f"floor {floor} has no nodes")
            d = [(float(np.hypot(n.position[0] - wp[0], n.position[1] - wp[1])), n.id)
                 for n in same_floor]
            dist, nid = min(d)
            bounds = scene.floors[floor].bounds
            if not (bounds[0] - 1 <= wp[0] <= bounds[2] + 1
                    and bounds[1] - 1 <= wp[1] <= bounds[3] + 1):
                raise HTTPException(422, f"waypoint {i} is off the map")
            if i == 0 and dist > SNAP_RADIUS_M:
                raise HTTPException(422,
                                    f"start waypoint is {dist:.2f} m from the nearest node")
            snapped.append(nid)
        return snapped


def build_app(service: BenchService) -> FastAPI:
    app = FastAPI(title="vpnav bench service")

    @app.get("/scenes")
    def list_scenes() -> list[dict]:
        return [
            {"scene_id": sid, "floor_count": len(scene.floors),
             "node_count": len(scene.graph)}
            for sid, scene in sorted(service.scenes.items())
        ]

    @app.get("/scenes/{scene_id}/map")
    def scene_map(scene_id: str, floor: int = Query(0)) -> Response:
        scene = service.scene(scene_id)
        if not 0 <= floor < len(scene.floors):
            raise HTTPException(404, f"floor {floor} does not exist")
        raster = ep.base_topview(scene, floor)
        a = raster.affine
        headers = {
            "X-Meters-Per-Pixel": repr(raster.meters_per_pixel),
            "X-Affine": ",".join(repr(v) for v in (a.a00, a.a01, a.a10, a.a11, a.b0, a.b1)),
            "X-Floor-Index": str(floor),
        }
        return Response(content=_png_bytes(raster.pixels), media_type="image/png",
                        headers=headers)

    @app.get("/scenes/{scene_id}/snap")
    def snap(scene_id: str, x: float, y: float, floor: int = 0) -> dict:
        scene = service.scene(scene_id)
        nid = service.snap_waypoints(scene, [[x, y, floor]])[0]
        node = scene.node(nid)
        return {"node_id": nid, "position": list(node.position),
                "floor_index": node.floor_index}

    @app.post("/sessions")
    def create_session(req: SessionRequest) -> dict:
        service.scene(req.scene_id)
        if req.policy not in ("oracle", "geometric", "learned"):
            raise HTTPException(422, f"unknown policy {req.policy}")
        if req.policy == "learned" and service.params is None:
            raise HTTPException(409, "no policy checkpoint loaded")
        sid = uuid.uuid4().hex[:12]
        with service.lock:
            service.sessions[sid] = Session(sid, req.scene_id, req.policy)
        return {"session_id": sid, "scene_id": req.scene_id, "policy": req.policy}

    @app.post("/sessions/{session_id}/prompt")
    def submit_prompt(session_id: str, req: PromptRequest) -> dict:
        session = service.session(session_id)
        scene = service.scene(session.scene_id)
        if len(req.waypoints) < 2:
            raise HTTPException(422, "need at least two waypoints")
        snapped = service.snap_waypoints(scene, req.waypoints)

        from .world import shortest_path, UnreachableError

        full_path: list[int] = [snapped[0]]
        for a, b in zip(snapped[:-1], snapped[1:]):
            if a == b:
                continue
            try:
                leg, _ = shortest_path(scene.graph, a, b)
            except UnreachableError:
                raise HTTPException(422, f"nodes {a} and {b} are not connected")
            full_path.extend(leg[1:])
        if len(full_path) < 2:
            raise HTTPException(422, "waypoints collapse to a single node")

        episode = ep.Episode(
            episode_id=f"session-{session_id}", scene_id=scene.scene_id,
            start=full_path[0], goal=full_path[-1], gt_path=tuple(full_path),
            initial_heading=0.0)
        options = ep.PromptOptions(
            style=pm.PromptStyle(req.style),
            rotation=req.rotation_quarter_turns,
            noise=pm.NoiseSpec(pm.NoiseKind(req.noise_kind), req.noise_ratio))
        rng = np.random.default_rng(session.prompt_seed)
        episode = ep.attach_prompt(scene, episode, options, rng)

        matches = None
        if req.compare_episode:
            ref = service.dataset_episodes.get(req.compare_episode)
            if ref is None or ref.prompt is None:
                raise HTTPException(404, f"unknown dataset episode {req.compare_episode}")
            matches = (
                len(ref.prompt.per_floor) == len(episode.prompt.per_floor)
                and all(np.array_equal(a[1].pixels, b[1].pixels)
                        for a, b in zip(ref.prompt.per_floor, episode.prompt.per_floor))
            )

        with service.lock:
            session.waypoints = [(w[0], w[1]) for w in req.waypoints]
            session.episode = episode
            session.last_run = None
            session.snapshots = ()
        node_path = [{"node_id": nid, "position": list(scene.node(nid).position)}
                     for nid in full_path]
        return {
            "snapped_nodes": snapped,
            "full_path": node_path,
            "previews": [
                {"floor_index": floor, "png_base64": _b64_png(raster.pixels),
                 "meters_per_pixel": raster.meters_per_pixel}
                for floor, raster in episode.prompt.per_floor
            ],
            "matches_episode": matches,
        }

    @app.post("/sessions/{session_id}/run")
    def run(session_id: str) -> dict:
        session = service.session(session_id)
        scene = service.scene(session.scene_id)
        if session.episode is None:
            raise HTTPException(409, "submit a prompt before running")
        agent = ag.make_agent(session.policy, service.params)
        result = ag.run_episode(scene, session.episode, agent, keep_scores=True)
        record = mt.path_metrics(scene, session.episode, result.record)
        payload = {
            "trajectory": {
                "episode_id": result.record.episode_id,
                "nodes": list(result.record.nodes),
                "positions": [list(scene.node(n).position) for n in result.record.nodes],
                "terminated_by": result.record.terminated_by,
            },
            "metrics": {"TL": record.tl, "NE": record.ne, "SR": record.sr,
                        "OSR": record.osr, "SPL": record.spl},
            "steps": len(result.snapshots),
        }
        with service.lock:
            session.last_run = payload
            session.snapshots = result.snapshots
        return payload

    @app.get("/sessions/{session_id}/playback")
    def playback(session_id: str) -> dict:
        session = service.session(session_id)
        if session.last_run is None:
            raise HTTPException(409, "run the episode first")
        return {"run": session.last_run, "snapshots": list(session.snapshots)}

    ui_dir = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
    if ui_dir.is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(scenes_dir: str | Path, port: int = 8000,
          checkpoint: Optional[str | Path] = None) -> None:
    """Blocking entry point used by the CLI ``serve`` verb."""
    import uvicorn

    service = BenchService.from_dir(scenes_dir, checkpoint)
    app = build_app(service)
    uvicorn.run(app, host="127.0.0.1", port=port)
