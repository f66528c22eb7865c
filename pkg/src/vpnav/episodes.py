"""Episode sampling, prompt bundle construction, and dataset splits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import promptmap as pm
from .world import Scene, canonical_json, shortest_path

MANIFEST_SCHEMA_VERSION = 1
SPLITS = ("train", "val_seen", "val_unseen", "test")


class SamplingError(RuntimeError):
    """No endpoint pair satisfied the episode constraints."""


@dataclass(frozen=True)
class EpisodeConfig:
    min_edges: int = 4
    max_edges: int = 7
    agent_view_aug: bool = False
    max_attempts: int = 4000

    def validate(self) -> None:
        if not (1 <= self.min_edges <= self.max_edges):
            raise ValueError("need 1 <= min_edges <= max_edges")


@dataclass(frozen=True)
class PromptOptions:
    """How prompt rasters are produced for an episode."""
    style: pm.PromptStyle = pm.PromptStyle.LINES
    rotation: str | int = 0          # fixed k, or "random"
    noise: pm.NoiseSpec = field(default_factory=pm.NoiseSpec)


@dataclass(frozen=True)
class PromptBundle:
    per_floor: tuple[tuple[int, pm.PromptRaster], ...]   # in first-visit order
    style: pm.PromptStyle
    rotation_quarter_turns: int
    noise: pm.NoiseSpec

    @property
    def floor_count(self) -> int:
        return len(self.per_floor)


@dataclass(frozen=True)
class Episode:
    episode_id: str
    scene_id: str
    start: int
    goal: int
    gt_path: tuple[int, ...]
    initial_heading: float
    split: str = "train"
    prompt: Optional[PromptBundle] = None


def floor_runs(scene: Scene, path: Sequence[int]) -> list[tuple[int, list[int]]]:
    """Split a node path into consecutive same-floor runs, in visit order."""
    runs: list[tuple[int, list[int]]] = []
    for nid in path:
        f = scene.node(nid).floor_index
        if runs and runs[-1][0] == f:
            runs[-1][1].append(nid)
        else:
            runs.append((f, [nid]))
    return runs


def sample_episode(scene: Scene, rng: np.random.Generator,
                   cfg: EpisodeConfig = EpisodeConfig(),
                   episode_id: str = "ep", split: str = "train") -> Episode:
    """Draw endpoints whose shortest path has an edge count within bounds
    and never returns to a floor it has left (keeps the per-floor prompt
    order well defined)."""
    cfg.validate()
    n = len(scene.graph)
    for _ in range(cfg.max_attempts):
        a = int(rng.integers(0, n))
        b = int(rng.integers(0, n))
        if a == b:
            continue
        path, _length = shortest_path(scene.graph, a, b)
        edges = len(path) - 1
        if not (cfg.min_edges <= edges <= cfg.max_edges):
            continue
        floors = [f for f, _run in floor_runs(scene, path)]
        if len(set(floors)) != len(floors):
            continue
        heading = float(rng.uniform(0.0, 2.0 * math.pi)) if cfg.agent_view_aug else 0.0
        return Episode(episode_id, scene.scene_id, a, b, tuple(path), heading, split)
    raise SamplingError(
        f"no endpoint pair with {cfg.min_edges}..{cfg.max_edges} edges after "
        f"{cfg.max_attempts} attempts")


_BASE_RASTER_CACHE: dict[tuple[str, int], pm.PromptRaster] = {}


def base_topview(scene: Scene, floor_index: int) -> pm.PromptRaster:
    """Cached uncropped floor render (episodes on a scene share it)."""
    key = (scene.scene_id, floor_index)
    if key not in _BASE_RASTER_CACHE:
        _BASE_RASTER_CACHE[key] = pm.render_topview(scene, floor_index)
    return _BASE_RASTER_CACHE[key]


def build_prompt_bundle(scene: Scene, episode: Episode, options: PromptOptions,
                        rng: np.random.Generator) -> PromptBundle:
    """Run the full prompt pipeline for every floor the path visits:
    overlay, crop (skipped for the full-map style), resize, rotation, and
    noise. The first-step-drop noise only touches the first floor's map."""
    if options.rotation == "random":
        k = int(rng.integers(0, 4))
    else:
        k = int(options.rotation) % 4

    per_floor: list[tuple[int, pm.PromptRaster]] = []
    runs = floor_runs(scene, episode.gt_path)
    for run_idx, (floor, nodes) in enumerate(runs):
        base = base_topview(scene, floor)
        pts = np.array([scene.node(nid).position[:2] for nid in nodes])
        raster = pm.overlay_trajectory(base, pts, options.style)
        if options.style == pm.PromptStyle.FULL_MAP:
            raster = pm.finalize_fullmap(raster)
        else:
            raster = pm.crop_pipeline(raster)
        raster = pm.rotate_prompt(raster, k)
        if options.noise.kind == pm.NoiseKind.SALT_PEPPER:
            raster = pm.apply_noise(raster, options.noise, rng)
        elif options.noise.kind == pm.NoiseKind.DROP_FIRST_STEP and run_idx == 0:
            raster = pm.apply_noise(raster, options.noise, rng)
        per_floor.append((floor, raster))
    return PromptBundle(tuple(per_floor), options.style, k, options.noise)


def attach_prompt(scene: Scene, episode: Episode, options: PromptOptions,
                  rng: np.random.Generator) -> Episode:
    return replace(episode, prompt=build_prompt_bundle(scene, episode, options, rng))


# --------------------------------------------------------------------------
# splits

def build_split(scenes: Sequence[Scene], counts: dict[str, int], seed: int,
                cfg: EpisodeConfig = EpisodeConfig(),
                options: PromptOptions = PromptOptions(),
                unseen_scene_count: Optional[int] = None,
                with_prompts: bool = True) -> dict[str, list[Episode]]:
    """Sample episodes per split; val_unseen and test draw from scenes that
    appear in no train or val_seen episode."""
    for split in counts:
        if split not in SPLITS:
            raise ValueError(f"unknown split: {split}")
    needs_unseen = counts.get("val_unseen", 0) + counts.get("test", 0) > 0
    if unseen_scene_count is None:
        unseen_scene_count = max(1, len(scenes) // 5) if needs_unseen else 0
    if needs_unseen and unseen_scene_count >= len(scenes):
        raise ValueError("insufficient scenes to hold out an unseen pool")
    seen_pool = list(scenes[:len(scenes) - unseen_scene_count])
    unseen_pool = list(scenes[len(scenes) - unseen_scene_count:])
    if needs_unseen and not unseen_pool:
        raise ValueError("insufficient scenes for the unseen splits")

    root = np.random.SeedSequence(seed)
    split_seqs = dict(zip(SPLITS, root.spawn(len(SPLITS))))
    out: dict[str, list[Episode]] = {}
    for split, count in counts.items():
        pool = unseen_pool if split in ("val_unseen", "test") else seen_pool
        if not pool:
            raise ValueError(f"no scenes available for split {split}")
        rng = np.random.default_rng(split_seqs[split])
        eps: list[Episode] = []
        for i in range(count):
            scene = pool[i % len(pool)]
            ep = sample_episode(scene, rng, cfg,
                                episode_id=f"{split}_{i:05d}", split=split)
            if with_prompts:
                ep = attach_prompt(scene, ep, options, rng)
            eps.append(ep)
        out[split] = eps
    return out


# --------------------------------------------------------------------------
# persistence

def episode_record(episode: Episode, raster_paths: Optional[list[str]] = None) -> dict:
    rec = {
        "episode_id": episode.episode_id,
        "scene_id": episode.scene_id,
        "start": episode.start,
        "goal": episode.goal,
        "gt_path": list(episode.gt_path),
        "initial_heading": episode.initial_heading,
        "split": episode.split,
    }
    if episode.prompt is not None:
        rec["prompt"] = {
            "style": episode.prompt.style.value,
            "rotation_quarter_turns": episode.prompt.rotation_quarter_turns,
            "noise": episode.prompt.noise.to_dict(),
            "per_floor": [
                {"floor_index": f,
                 "raster": raster_paths[i] if raster_paths else None}
                for i, (f, _r) in enumerate(episode.prompt.per_floor)
            ],
        }
    return rec


def write_split_manifest(episodes: Sequence[Episode], split: str, out_dir: str | Path,
                         seed: int, scene_ids: Sequence[str]) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "rasters").mkdir(parents=True, exist_ok=True)
    records = []
    for ep in episodes:
        paths: list[str] = []
        if ep.prompt is not None:
            for i, (floor, raster) in enumerate(ep.prompt.per_floor):
                rel = f"rasters/{ep.episode_id}_f{i}.png"
                pm.save_raster(raster, out_dir / rel)
                paths.append(rel)
        records.append(episode_record(ep, paths))
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "split": split,
        "seed": seed,
        "scenes": sorted(set(scene_ids)),
        "episodes": records,
    }
    path = out_dir / f"{split}.json"
    path.write_text(canonical_json(manifest), encoding="utf-8")
    return path


def load_split_manifest(path: str | Path) -> tuple[dict, list[Episode]]:
    import json

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ValueError("unsupported manifest schema")
    base = Path(path).parent
    episodes = []
    for rec in doc["episodes"]:
        prompt = None
        if "prompt" in rec:
            pf = []
            for entry in rec["prompt"]["per_floor"]:
                raster = pm.load_raster(base / entry["raster"])
                pf.append((entry["floor_index"], raster))
            prompt = PromptBundle(
                tuple(pf),
                pm.PromptStyle(rec["prompt"]["style"]),
                rec["prompt"]["rotation_quarter_turns"],
                pm.NoiseSpec.from_dict(rec["prompt"]["noise"]),
            )
        episodes.append(Episode(
            rec["episode_id"], rec["scene_id"], rec["start"], rec["goal"],
            tuple(rec["gt_path"]), rec["initial_heading"], rec["split"], prompt))
    return doc, episodes
