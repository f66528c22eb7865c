"""Canned synthetic benchmark packs used by the acceptance suite and CLI.

Pack sizes and scene scales are pinned so that every ablation arm runs on
a fixed, reproducible episode set. The style/noise arms deliberately use
large floors: a full-map prompt resized to 224px destroys the waypoint
markers there, which is the geometric analogue of the paper's observation
that uncropped maps underfit the trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import agents as ag
from . import episodes as ep
from . import metrics as mt
from . import promptmap as pm
from .world import Scene, SceneConfig, generate_scene

BIG_FLOOR_CFG = SceneConfig(floor_count=1, rooms_per_floor=9,
                            room_mean_size_m=12.0, min_room_side_m=5.0)
SMALL_FLOOR_CFG = SceneConfig(floor_count=1, rooms_per_floor=5)
MULTI_FLOOR_CFG = SceneConfig(floor_count=3, rooms_per_floor=4)


def make_scenes(seed: int, count: int, cfg: SceneConfig) -> list[Scene]:
    return [generate_scene(seed + i, cfg) for i in range(count)]


def sample_episodes(scenes: Sequence[Scene], count: int, seed: int,
                    cfg: ep.EpisodeConfig = ep.EpisodeConfig(),
                    id_prefix: str = "ep",
                    floor_quota: Optional[dict[int, int]] = None) -> list[ep.Episode]:
    """Round-robin episode sampling, optionally filled against per-floor
    quotas (keys: floors traversed by the ground-truth path)."""
    rng = np.random.default_rng(seed)
    out: list[ep.Episode] = []
    remaining = dict(floor_quota) if floor_quota else None
    guard = 0
    i = 0
    while len(out) < count:
        guard += 1
        if guard > 200 * count:
            raise ep.SamplingError("episode quotas unsatisfiable for these scenes")
        scene = scenes[i % len(scenes)]
        i += 1
        episode = ep.sample_episode(scene, rng, cfg,
                                    episode_id=f"{id_prefix}_{len(out):05d}")
        if remaining is not None:
            nf = len(ep.floor_runs(scene, episode.gt_path))
            if remaining.get(nf, 0) <= 0:
                continue
            remaining[nf] -= 1
        out.append(episode)
    return out


@dataclass(frozen=True)
class BenchmarkPack:
    name: str
    scenes: dict[str, Scene]
    episodes: list[ep.Episode]


def metric_pack(seed: int = 100) -> BenchmarkPack:
    scenes = make_scenes(seed, 3, SMALL_FLOOR_CFG) + make_scenes(seed + 50, 2, MULTI_FLOOR_CFG)
    eps = sample_episodes(scenes, 100, seed + 1,
                          ep.EpisodeConfig(min_edges=3, max_edges=8), "metric")
    return BenchmarkPack("metric", {s.scene_id: s for s in scenes}, eps)


def style_pack(seed: int = 200, count: int = 300) -> BenchmarkPack:
    """Prompt-less episodes on large single-floor scenes; the style and
    noise arms attach their own prompt variants."""
    scenes = make_scenes(seed, 12, BIG_FLOOR_CFG)
    eps = sample_episodes(scenes, count, seed + 1,
                          ep.EpisodeConfig(min_edges=4, max_edges=8), "style")
    return BenchmarkPack("style", {s.scene_id: s for s in scenes}, eps)


def rotation_pack(seed: int = 300, count: int = 100) -> BenchmarkPack:
    scenes = make_scenes(seed, 8, SMALL_FLOOR_CFG)
    eps = sample_episodes(scenes, count, seed + 1, ep.EpisodeConfig(), "rot")
    return BenchmarkPack("rotation", {s.scene_id: s for s in scenes}, eps)


def multifloor_pack(seed: int = 400) -> BenchmarkPack:
    """At least 100 episodes that traverse 2+ floors, plus a single-floor
    bucket for the floor-wise table."""
    scenes = make_scenes(seed, 6, MULTI_FLOOR_CFG)
    eps = sample_episodes(scenes, 150, seed + 1,
                          ep.EpisodeConfig(min_edges=4, max_edges=10),
                          "mf", floor_quota={1: 30, 2: 75, 3: 45})
    return BenchmarkPack("multifloor", {s.scene_id: s for s in scenes}, eps)


def training_pack(seed: int = 500) -> tuple[BenchmarkPack, BenchmarkPack]:
    """200 training episodes and a 100-episode held-out split on disjoint
    scenes, prompts attached (clean, known transforms)."""
    train_scenes = make_scenes(seed, 5, SMALL_FLOOR_CFG)
    held_scenes = make_scenes(seed + 80, 3, SMALL_FLOOR_CFG)
    rng = np.random.default_rng(seed + 2)
    train_eps = [ep.attach_prompt(find_scene(train_scenes, e.scene_id), e,
                                  ep.PromptOptions(), rng)
                 for e in sample_episodes(train_scenes, 200, seed + 1,
                                          ep.EpisodeConfig(), "train")]
    held_eps = [ep.attach_prompt(find_scene(held_scenes, e.scene_id), e,
                                 ep.PromptOptions(), rng)
                for e in sample_episodes(held_scenes, 100, seed + 3,
                                         ep.EpisodeConfig(), "held")]
    return (BenchmarkPack("train", {s.scene_id: s for s in train_scenes}, train_eps),
            BenchmarkPack("held", {s.scene_id: s for s in held_scenes}, held_eps))


def find_scene(scenes: Sequence[Scene], scene_id: str) -> Scene:
    for s in scenes:
        if s.scene_id == scene_id:
            return s
    raise KeyError(scene_id)


# --------------------------------------------------------------------------
# ablation arms

def attach_variant(pack: BenchmarkPack, options: ep.PromptOptions,
                   seed: int) -> list[ep.Episode]:
    """Attach prompt bundles for one ablation arm (its own RNG stream, so
    arms stay independent and reproducible)."""
    rng = np.random.default_rng(seed)
    return [ep.attach_prompt(pack.scenes[e.scene_id], e, options, rng)
            for e in pack.episodes]


def run_geometric_arm(pack: BenchmarkPack, episodes: Sequence[ep.Episode],
                      options: ag.GuideOptions = ag.GuideOptions(),
                      step_limit: int = mt.STEP_LIMIT):
    records, trajs = ag.evaluate_split(
        pack.scenes, episodes, lambda: ag.GeometricAgent(options), step_limit)
    return records, trajs


def style_ablation(pack: BenchmarkPack, arm_seed: int = 7000,
                   styles: Sequence[pm.PromptStyle] = tuple(pm.PromptStyle)) -> dict[str, dict]:
    """SR per prompt style with per-episode random quarter-turn rotations
    and unknown-rotation registration (the view-augmentation regime)."""
    results: dict[str, dict] = {}
    opts = ag.GuideOptions(registration_mode="unknown_rotation")
    for style in styles:
        eps = attach_variant(pack, ep.PromptOptions(style=style, rotation="random"),
                             arm_seed)
        records, _ = run_geometric_arm(pack, eps, opts)
        results[style.value] = mt.aggregate(records)
    return results


def noise_ablation(pack: BenchmarkPack, arm_seed: int = 7100) -> dict[str, dict]:
    """Clean vs salt-and-pepper 0.2 vs first-step-drop on the style-e arm."""
    specs = {
        "clean": pm.NoiseSpec(),
        "salt_pepper": pm.NoiseSpec(pm.NoiseKind.SALT_PEPPER, 0.2),
        "drop_first_step": pm.NoiseSpec(pm.NoiseKind.DROP_FIRST_STEP),
    }
    opts = ag.GuideOptions(registration_mode="unknown_rotation")
    out: dict[str, dict] = {}
    for name, spec in specs.items():
        eps = attach_variant(pack, ep.PromptOptions(rotation="random", noise=spec),
                             arm_seed)
        records, _ = run_geometric_arm(pack, eps, opts)
        out[name] = mt.aggregate(records)
    return out


def parse_success_rate(pack: BenchmarkPack, spec: pm.NoiseSpec, arm_seed: int = 7100) -> float:
    """Fraction of episodes whose prompts parse at the default chain gap."""
    from . import promptparse as pp

    eps = attach_variant(pack, ep.PromptOptions(rotation="random", noise=spec), arm_seed)
    ok = 0
    for e in eps:
        try:
            for _floor, raster in e.prompt.per_floor:
                pp.extract_polyline(raster)
            ok += 1
        except (pp.NoInkError, pp.BrokenChainError):
            pass
    return ok / len(eps)


def rotation_consistency(pack: BenchmarkPack, arm_seed: int = 7200):
    """Evaluate the same split under each global quarter-turn; returns SR
    per k and the fraction of correct rotation selections."""
    opts = ag.GuideOptions(registration_mode="unknown_rotation")
    srs: dict[int, float] = {}
    selections = {"correct": 0, "total": 0}
    for k in range(4):
        eps = attach_variant(pack, ep.PromptOptions(rotation=k), arm_seed)
        records, trajs = run_geometric_arm(pack, eps, opts)
        srs[k] = mt.aggregate(records)["SR"]
        for e in eps:
            scene = pack.scenes[e.scene_id]
            agent = ag.GeometricAgent(opts)
            agent.begin(scene, e)
            guide = agent.guides.guide_for(
                e.prompt.per_floor[0][0], scene.node(e.start).position[:2])
            selections["total"] += 1
            if guide is not None and guide.rotation_selected == k:
                selections["correct"] += 1
    return srs, selections


def oafc_vs_lastmap(pack: BenchmarkPack, arm_seed: int = 7300):
    """Floor-wise success for the full ordered bundle vs the final map only."""
    eps = attach_variant(pack, ep.PromptOptions(), arm_seed)
    out = {}
    for mode, last_only in (("oafc", False), ("last_map", True)):
        opts = ag.GuideOptions(last_map_only=last_only)
        records, _ = run_geometric_arm(pack, eps, opts)
        out[mode] = mt.floorwise_success(records, eps, pack.scenes)
    return out
