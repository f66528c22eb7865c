"""Prompt-guided agents and the episode rollout loop.

Three agents share one scoring interface: an oracle that replays the
ground-truth path, a geometric follower that parses and registers the
prompt polylines, and a log-linear learned policy over geometric candidate
features. All of them emit ScoreVectors so masking, backtrack transform,
fusion, and action selection run through the same machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import promptparse as pp
from .episodes import Episode, PromptBundle
from .geometry import project_onto_polyline, polyline_arclengths
from .metrics import STEP_LIMIT, TrajectoryRecord
from .policy import (Action, N_FEATURES, NEG_INF, PolicyParams, ScoreVector, STOP_ID,
                     act, candidate_mask, fuse, geometric_score, local_to_global)
from .topo import NAVIGABLE, TopoGraph, update_graph
from .world import Scene, observe_step

ORDER_BASE = 100.0          # per-floor offset; clears any within-floor progress
EXPLORE_BASE = -1000.0      # unguided-floor scores sit below every guided one
STOP_OFF = -1e9
STOP_MARGIN = 10.0


@dataclass(frozen=True)
class GuideOptions:
    registration_mode: str = "known_transform"   # or unknown_rotation
    last_map_only: bool = False
    beta: float = 1.0
    stop_radius_m: float = 1.5
    sigma: float = 0.5


@dataclass
class FloorGuide:
    order: int
    floor: int
    raster: object
    kind: str = "pending"            # pending | polyline | region | none
    parsed: Optional[pp.ParsedPrompt] = None
    relaxed: bool = False
    polyline: Optional[np.ndarray] = None
    region_center: Optional[tuple[float, float]] = None
    goal_guess: Optional[tuple[float, float]] = None
    rotation_selected: Optional[int] = None

    @property
    def end_point(self) -> Optional[np.ndarray]:
        if self.kind == "polyline":
            return self.polyline[-1]
        if self.kind == "region":
            return np.array(self.goal_guess if self.goal_guess is not None
                            else self.region_center)
        return None


class GuideSet:
    """Per-floor navigation guidance extracted from a prompt bundle.

    Parsing happens eagerly; registration happens lazily per floor so that
    under unknown-rotation mode a later floor's map is aligned against the
    position where the agent actually enters that floor.
    """

    def __init__(self, bundle: PromptBundle, options: GuideOptions,
                 agent_start_xy: tuple[float, float]):
        self.options = options
        self.agent_start_xy = agent_start_xy
        per_floor = bundle.per_floor[-1:] if options.last_map_only else bundle.per_floor
        self.guides: dict[int, FloorGuide] = {}
        for order, (floor, raster) in enumerate(per_floor):
            guide = FloorGuide(order, floor, raster)
            self._parse(guide)
            self.guides[floor] = guide
        self.final_floor = per_floor[-1][0]

    def _parse(self, guide: FloorGuide) -> None:
        try:
            guide.parsed = pp.extract_polyline(guide.raster)
        except pp.BrokenChainError:
            try:
                guide.parsed = pp.extract_polyline(guide.raster, gap_px=pp.RELAXED_GAP_PX)
                guide.relaxed = True
            except (pp.BrokenChainError, pp.NoInkError):
                guide.parsed = None
        except pp.NoInkError:
            guide.parsed = None
        if guide.parsed is None:
            self._fall_back_to_region(guide)

    def _fall_back_to_region(self, guide: FloorGuide) -> None:
        """Goal-region guessing: the map center is rotation-invariant, and
        trajectory-centered crops put start and goal at opposite ends, so
        reflecting the agent's entry point through the center approximates
        the goal. Uncropped maps make that reflection uninformative."""
        guide.kind = "region"
        guide.region_center = pp.map_center_world(guide.raster)
        center = np.asarray(guide.region_center)
        ref = np.asarray(self.agent_start_xy)
        guide.goal_guess = tuple(2.0 * center - ref)

    def _register(self, guide: FloorGuide, ref_xy: tuple[float, float]) -> None:
        try:
            reg = pp.register(guide.parsed, guide.raster,
                              agent_start_world=ref_xy,
                              mode=self.options.registration_mode)
            guide.polyline = reg.polyline_world
            guide.rotation_selected = reg.registration.rotation_quarter_turns
            guide.kind = "polyline"
        except pp.AmbiguousRegistrationError:
            self._fall_back_to_region(guide)

    def guide_for(self, floor: int, ref_xy: tuple[float, float]) -> Optional[FloorGuide]:
        guide = self.guides.get(floor)
        if guide is None:
            return None
        if guide.kind == "pending":
            ref = self.agent_start_xy if guide.order == 0 else ref_xy
            self._register(guide, ref)
        return guide

    def final_guide(self, ref_xy: tuple[float, float]) -> Optional[FloorGuide]:
        return self.guide_for(self.final_floor, ref_xy)


# --------------------------------------------------------------------------
# shared candidate geometry

def _graph_distance_row(graph: TopoGraph) -> Mapping[int, float]:
    ids, dist = graph.distance_matrix()
    row = dist[ids.index(graph.current)]
    return {nid: float(row[i]) for i, nid in enumerate(ids)}


def _guided_progress(guide: Optional[FloorGuide], xy: np.ndarray) -> tuple[float, float, float]:
    """(order, progress, deviation) of a point under its floor guide; a
    region guide measures deviation from the guessed goal region."""
    if guide is None or guide.kind == "none":
        return -1.0, 0.0, 0.0
    if guide.kind == "polyline":
        prog, dev = project_onto_polyline(xy[None, :], guide.polyline)
        return float(guide.order), float(prog[0]), float(dev[0])
    target = guide.end_point
    return float(guide.order), 0.0, float(np.hypot(*(xy - target)))


# --------------------------------------------------------------------------
# agents

class OracleAgent:
    """Replays the ground-truth path through the shared action machinery."""

    needs_visuals = False

    def begin(self, scene: Scene, episode: Episode) -> None:
        self._path = episode.gt_path
        self._index = {nid: i for i, nid in enumerate(episode.gt_path)}

    def score(self, graph: TopoGraph) -> ScoreVector:
        ids = graph.ordered_ids()
        mask = candidate_mask(graph, ids)
        scores = np.zeros(len(ids) + 1)
        pos = self._index.get(graph.current)
        if pos is None:
            raise RuntimeError("oracle agent left the ground-truth path")
        if pos == len(self._path) - 1:
            scores[0] = 1.0
        else:
            scores[ids.index(self._path[pos + 1]) + 1] = 1.0
        sv = ScoreVector([STOP_ID] + ids, scores, mask)
        sv.s_global = sv.masked(scores)
        return sv


class GeometricAgent:
    """Follows the registered prompt polylines: score = per-floor order
    offset + arc-length progress - beta * deviation, exploration fallback
    on unguided floors, stop once within the stop radius of the final
    guide's end."""

    needs_visuals = False

    def __init__(self, options: GuideOptions = GuideOptions()):
        self.options = options

    def begin(self, scene: Scene, episode: Episode) -> None:
        if episode.prompt is None:
            raise ValueError("geometric agent needs a prompt bundle")
        start_xy = scene.node(episode.start).position[:2]
        self.guides = GuideSet(episode.prompt, self.options, start_xy)

    def _node_score(self, graph: TopoGraph, nid: int,
                    dist_row: Mapping[int, float]) -> float:
        node = graph.nodes[nid]
        xy = np.array(node.position[:2])
        guide = self.guides.guide_for(node.floor_index, tuple(xy))
        if guide is None:
            return EXPLORE_BASE - dist_row.get(nid, 0.0)
        order, prog, dev = _guided_progress(guide, xy)
        if guide.kind == "polyline":
            return ORDER_BASE * order + prog - self.options.beta * dev
        return ORDER_BASE * order - dev

    def _stop_score(self, graph: TopoGraph) -> float:
        cur = graph.nodes[graph.current]
        xy = np.array(cur.position[:2])
        final = self.guides.final_guide(tuple(xy))
        if final is None or cur.floor_index != final.floor:
            return STOP_OFF
        end = final.end_point
        if end is None:
            return STOP_OFF
        if float(np.hypot(*(xy - end))) > self.options.stop_radius_m:
            return STOP_OFF
        reach = polyline_arclengths(final.polyline)[-1] if final.kind == "polyline" else 0.0
        return ORDER_BASE * final.order + reach + STOP_MARGIN

    def score(self, graph: TopoGraph) -> ScoreVector:
        ids = graph.ordered_ids()
        dist_row = _graph_distance_row(graph)
        s_g = np.empty(len(ids) + 1)
        stop = self._stop_score(graph)
        s_g[0] = stop
        for i, nid in enumerate(ids):
            s_g[i + 1] = self._node_score(graph, nid, dist_row)
        sv = ScoreVector([STOP_ID] + ids, s_g.copy(), candidate_mask(graph, ids))
        sv.s_global = sv.masked(s_g)
        # local branch: score view candidates relative to the current node
        baseline = self._node_score(graph, graph.current, dist_row)
        local = {nb: s_g[ids.index(nb) + 1] - baseline
                 for nb, _w in graph.neighbors(graph.current)}
        local_to_global(sv, local, stop, graph)
        return fuse(sv, self.options.sigma)


def candidate_features(graph: TopoGraph, guides: GuideSet,
                       options: GuideOptions) -> tuple[list[int], np.ndarray, np.ndarray, np.ndarray]:
    """Per-candidate feature rows for the log-linear head.

    Returns (candidate_ids, global features, effective local features,
    mask). The effective local row of a non-adjacent candidate is the sum
    of the rows of visited neighbors, which keeps the backtrack transform
    linear in the weights.
    """
    ids = graph.ordered_ids()
    dist_row = _graph_distance_row(graph)
    cur = graph.nodes[graph.current]
    cur_xy = np.array(cur.position[:2])
    cur_guide = guides.guide_for(cur.floor_index, tuple(cur_xy))
    cur_order = cur_guide.order if cur_guide is not None else -1.0

    rows = np.zeros((len(ids) + 1, N_FEATURES))
    final = guides.final_guide(tuple(cur_xy))
    gate = 0.0
    if final is not None and cur.floor_index == final.floor and final.end_point is not None:
        d_end = float(np.hypot(*(cur_xy - final.end_point)))
        gate = 1.0 / (1.0 + math.exp((d_end - options.stop_radius_m) / 0.5))
    rows[0] = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, gate]

    for i, nid in enumerate(ids, start=1):
        node = graph.nodes[nid]
        xy = np.array(node.position[:2])
        guide = guides.guide_for(node.floor_index, tuple(xy))
        order, prog, dev = _guided_progress(guide, xy)
        rows[i] = [
            1.0,
            prog / 10.0,
            dev / 3.0,
            (order - cur_order) / 2.0,
            dist_row.get(nid, 0.0) / 10.0,
            0.0,
            0.0,
        ]

    mask = candidate_mask(graph, ids)
    adjacent = {nb for nb, _w in graph.neighbors(graph.current)}
    visited_adj = [ids.index(nb) + 1 for nb in adjacent
                   if graph.nodes[nb].status != NAVIGABLE]
    backtrack_row = rows[visited_adj].sum(axis=0) if visited_adj else np.zeros(N_FEATURES)
    local_rows = np.empty_like(rows)
    local_rows[0] = rows[0]
    for i, nid in enumerate(ids, start=1):
        local_rows[i] = rows[i] if nid in adjacent else backtrack_row
    return [STOP_ID] + ids, rows, local_rows, mask


class LearnedAgent:
    """Log-linear policy over candidate features with trainable fusion."""

    needs_visuals = False

    def __init__(self, params: PolicyParams, options: GuideOptions = GuideOptions()):
        self.params = params
        self.options = options

    def begin(self, scene: Scene, episode: Episode) -> None:
        if episode.prompt is None:
            raise ValueError("learned agent needs a prompt bundle")
        start_xy = scene.node(episode.start).position[:2]
        self.guides = GuideSet(episode.prompt, self.options, start_xy)
        self.last_features = None

    def score(self, graph: TopoGraph) -> ScoreVector:
        cand_ids, phi_g, phi_l, mask = candidate_features(graph, self.guides, self.options)
        self.last_features = (cand_ids, phi_g, phi_l, mask)
        s_g = phi_g @ self.params.w
        sv = ScoreVector(cand_ids, s_g.copy(), mask)
        sv.s_global = sv.masked(s_g)
        s_l = phi_l @ self.params.w
        local = {nid: float(s_l[i]) for i, nid in enumerate(cand_ids)
                 if nid != STOP_ID and nid in {nb for nb, _ in graph.neighbors(graph.current)}}
        local_to_global(sv, local, float(s_l[0]), graph)
        return fuse(sv, self.params.sigma)


# --------------------------------------------------------------------------
# rollout loop

@dataclass(frozen=True)
class RolloutResult:
    record: TrajectoryRecord
    snapshots: tuple[dict, ...]


def run_episode(scene: Scene, episode: Episode, agent,
                step_limit: int = STEP_LIMIT,
                keep_scores: bool = False,
                on_step: Optional[Callable] = None) -> RolloutResult:
    """Observe, update the topological graph, score, and move until the
    agent stops or the step limit is hit; every traversed edge lands in the
    executed node sequence."""
    agent.begin(scene, episode)
    graph = TopoGraph()
    pos = episode.start
    executed: list[int] = [episode.start]
    snapshots: list[dict] = []
    scores: list[tuple[float, ...]] = []
    terminated = "step_limit"
    for _step in range(step_limit):
        obs = observe_step(scene, pos, episode.initial_heading,
                           with_visuals=agent.needs_visuals)
        update_graph(graph, obs)
        sv = agent.score(graph)
        action = act(sv, graph)
        if on_step is not None:
            on_step(graph, sv, action)
        snapshots.append(graph.snapshot())
        if keep_scores:
            scores.append(tuple(float(x) for x in sv.final))
        if action.kind == "stop":
            terminated = "stop_action"
            break
        if graph.nodes[action.target].status != NAVIGABLE:
            raise RuntimeError(f"masking violated: moved to {action.target} "
                               f"({graph.nodes[action.target].status})")
        executed.extend(action.path[1:])
        graph.move_to(action.target)
        pos = action.target
    record = TrajectoryRecord(
        episode.episode_id, tuple(executed), terminated,
        tuple(scores) if keep_scores else None)
    return RolloutResult(record, tuple(snapshots))


def make_agent(policy: str, params: Optional[PolicyParams] = None,
               options: GuideOptions = GuideOptions()):
    if policy == "oracle":
        return OracleAgent()
    if policy == "geometric":
        return GeometricAgent(options)
    if policy == "learned":
        if params is None:
            raise ValueError("learned policy needs parameters")
        return LearnedAgent(params, options)
    raise ValueError(f"unknown policy: {policy}")


def evaluate_split(scenes: Mapping[str, Scene], episodes: Sequence[Episode],
                   agent_factory: Callable[[], object],
                   step_limit: int = STEP_LIMIT):
    """Run one agent per episode; returns (metrics records, trajectories)."""
    from .metrics import path_metrics

    records, trajs = [], []
    for ep in episodes:
        scene = scenes[ep.scene_id]
        result = run_episode(scene, ep, agent_factory(), step_limit=step_limit)
        records.append(path_metrics(scene, ep, result.record))
        trajs.append(result.record)
    return records, trajs
