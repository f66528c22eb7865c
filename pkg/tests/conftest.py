from __future__ import annotations

import numpy as np
import pytest

from vpnav import episodes as E
from vpnav import promptmap as pm
from vpnav import world as W


@pytest.fixture(scope="session")
def scene42() -> W.Scene:
    return W.generate_scene(42, W.SceneConfig(floor_count=1, rooms_per_floor=4))


@pytest.fixture(scope="session")
def scene_multi() -> W.Scene:
    return W.generate_scene(7, W.SceneConfig(floor_count=3, rooms_per_floor=3))


@pytest.fixture(scope="session")
def base_raster(scene42) -> pm.PromptRaster:
    return pm.render_topview(scene42, 0)


@pytest.fixture(scope="session")
def sample_path(scene42):
    path, length = W.shortest_path(scene42.graph, 0, len(scene42.graph) - 1)
    world_pts = np.array([scene42.node(n).position[:2] for n in path])
    return path, world_pts, length


@pytest.fixture(scope="session")
def lines_prompt(base_raster, sample_path) -> pm.PromptRaster:
    _, world_pts, _ = sample_path
    return pm.crop_pipeline(pm.overlay_trajectory(base_raster, world_pts, pm.PromptStyle.LINES))


@pytest.fixture(scope="session")
def prompted_episode(scene42):
    rng = np.random.default_rng(0)
    ep = E.sample_episode(scene42, rng, E.EpisodeConfig(), episode_id="fixture_ep")
    return E.attach_prompt(scene42, ep, E.PromptOptions(), rng)
