from __future__ import annotations

import base64
import io
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from vpnav import agents as A
from vpnav import episodes as E
from vpnav import metrics as M
from vpnav import world as W
from vpnav.service import BenchService, build_app


@pytest.fixture(scope="module")
def dataset_episode(scene42):
    rng = np.random.default_rng(0)
    ep = E.sample_episode(scene42, rng, E.EpisodeConfig(), episode_id="ds_0")
    # the service rebuilds prompts with its per-session seed 0
    return E.attach_prompt(scene42, ep, E.PromptOptions(), np.random.default_rng(0))


@pytest.fixture(scope="module")
def client(scene42, scene_multi, dataset_episode):
    service = BenchService({scene42.scene_id: scene42,
                            scene_multi.scene_id: scene_multi},
                           dataset_episodes={dataset_episode.episode_id: dataset_episode})
    return TestClient(build_app(service))


def make_session(client, scene_id, policy="oracle"):
    resp = client.post("/sessions", json={"scene_id": scene_id, "policy": policy})
    assert resp.status_code == 200
    return resp.json()["session_id"]


class TestScenes:
    def test_list_scenes(self, client, scene42, scene_multi):
        resp = client.get("/scenes")
        assert resp.status_code == 200
        ids = {s["scene_id"]: s for s in resp.json()}
        assert scene42.scene_id in ids and scene_multi.scene_id in ids
        assert ids[scene_multi.scene_id]["floor_count"] == 3

    def test_map_png_matches_renderer(self, client, scene42):
        resp = client.get(f"/scenes/{scene42.scene_id}/map", params={"floor": 0})
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        img = np.asarray(Image.open(io.BytesIO(resp.content)).convert("RGB"))
        expected = E.base_topview(scene42, 0)
        assert np.array_equal(img, expected.pixels)
        assert float(resp.headers["X-Meters-Per-Pixel"]) == expected.meters_per_pixel

    def test_unknown_scene_404(self, client):
        assert client.get("/scenes/nope/map").status_code == 404

    def test_snap_endpoint(self, client, scene42):
        node = scene42.node(3)
        resp = client.get(f"/scenes/{scene42.scene_id}/snap",
                          params={"x": node.position[0] + 0.2,
                                  "y": node.position[1] + 0.1, "floor": 0})
        assert resp.status_code == 200
        assert resp.json()["node_id"] == 3


class TestPromptAndRun:
    def test_single_waypoint_rejected(self, client, scene42):
        sid = make_session(client, scene42.scene_id)
        resp = client.post(f"/sessions/{sid}/prompt",
                           json={"waypoints": [[1.0, 1.0]]})
        assert resp.status_code == 422

    def test_off_map_waypoint_rejected(self, client, scene42):
        sid = make_session(client, scene42.scene_id)
        node = scene42.node(0)
        resp = client.post(f"/sessions/{sid}/prompt",
                           json={"waypoints": [[node.position[0], node.position[1]],
                                               [999.0, 999.0]]})
        assert resp.status_code == 422

    def test_snap_to_nearest_node(self, client, scene42):
        sid = make_session(client, scene42.scene_id)
        a, b = scene42.node(0), scene42.node(5)
        resp = client.post(f"/sessions/{sid}/prompt", json={
            "waypoints": [[a.position[0] + 0.4, a.position[1]],
                          [b.position[0], b.position[1] - 0.3]]})
        assert resp.status_code == 200
        assert resp.json()["snapped_nodes"] == [0, 5]

    def test_gt_waypoints_reproduce_dataset_prompt(self, client, scene42, dataset_episode):
        sid = make_session(client, scene42.scene_id)
        waypoints = [[scene42.node(n).position[0], scene42.node(n).position[1]]
                     for n in dataset_episode.gt_path]
        resp = client.post(
            f"/sessions/{sid}/prompt?",
            json={"waypoints": waypoints,
                  "compare_episode": dataset_episode.episode_id})
        assert resp.status_code == 200
        body = resp.json()
        assert body["matches_episode"] is True
        png = base64.b64decode(body["previews"][0]["png_base64"])
        img = np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))
        assert np.array_equal(img, dataset_episode.prompt.per_floor[0][1].pixels)

    def test_oracle_run_succeeds_and_matches_offline(self, client, scene42, dataset_episode):
        sid = make_session(client, scene42.scene_id, policy="oracle")
        waypoints = [[scene42.node(n).position[0], scene42.node(n).position[1]]
                     for n in dataset_episode.gt_path]
        client.post(f"/sessions/{sid}/prompt", json={"waypoints": waypoints})
        run = client.post(f"/sessions/{sid}/run")
        assert run.status_code == 200
        body = run.json()
        assert body["metrics"]["SR"] == 1 and body["metrics"]["SPL"] == 1.0

        # offline reference run of the same inputs
        result = A.run_episode(scene42, dataset_episode, A.OracleAgent())
        rec = M.path_metrics(scene42, dataset_episode, result.record)
        assert tuple(body["trajectory"]["nodes"]) == result.record.nodes
        assert body["metrics"]["TL"] == rec.tl and body["metrics"]["NE"] == rec.ne

    def test_run_deterministic(self, client, scene42):
        sid = make_session(client, scene42.scene_id, policy="geometric")
        a, b = scene42.node(0), scene42.node(len(scene42.graph) - 1)
        client.post(f"/sessions/{sid}/prompt", json={
            "waypoints": [[a.position[0], a.position[1]],
                          [b.position[0], b.position[1]]]})
        r1 = client.post(f"/sessions/{sid}/run").json()
        r2 = client.post(f"/sessions/{sid}/run").json()
        assert r1 == r2

    def test_run_before_prompt_409(self, client, scene42):
        sid = make_session(client, scene42.scene_id)
        assert client.post(f"/sessions/{sid}/run").status_code == 409

    def test_playback_snapshots(self, client, scene42):
        sid = make_session(client, scene42.scene_id, policy="geometric")
        a, b = scene42.node(0), scene42.node(len(scene42.graph) - 1)
        client.post(f"/sessions/{sid}/prompt", json={
            "waypoints": [[a.position[0], a.position[1]],
                          [b.position[0], b.position[1]]]})
        run = client.post(f"/sessions/{sid}/run").json()
        play = client.get(f"/sessions/{sid}/playback")
        assert play.status_code == 200
        body = play.json()
        assert len(body["snapshots"]) == run["steps"]
        assert body["run"]["metrics"] == run["metrics"]
        first = body["snapshots"][0]
        assert first["current"] == 0

    def test_learned_policy_needs_checkpoint(self, client, scene42):
        resp = client.post("/sessions", json={"scene_id": scene42.scene_id,
                                              "policy": "learned"})
        assert resp.status_code == 409


class TestConcurrency:
    def test_parallel_sessions_do_not_interleave(self, client, scene42, scene_multi):
        results = {}

        def worker(name, scene):
            sid = make_session(client, scene.scene_id, policy="oracle")
            a = scene.node(0)
            b = scene.node(len(scene.graph) - 1)
            client.post(f"/sessions/{sid}/prompt", json={
                "waypoints": [[a.position[0], a.position[1]],
                              [b.position[0], b.position[1]]]})
            results[name] = client.post(f"/sessions/{sid}/run").json()

        threads = [threading.Thread(target=worker, args=("a", scene42)),
                   threading.Thread(target=worker, args=("b", scene_multi))]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        # each run starts in its own scene and stays on that scene's node ids
        assert results["a"]["trajectory"]["nodes"][0] == 0
        assert results["b"]["trajectory"]["nodes"][0] == 0
        assert results["a"]["metrics"]["SR"] == 1
        assert results["b"]["metrics"]["SR"] == 1
        assert results["a"]["trajectory"]["positions"] != results["b"]["trajectory"]["positions"]


class TestFromDir:
    def test_loads_scene_files(self, tmp_path, scene42):
        W.dump_scene(scene42, tmp_path / f"{scene42.scene_id}.json")
        service = BenchService.from_dir(tmp_path)
        assert scene42.scene_id in service.scenes

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            BenchService.from_dir(tmp_path)
