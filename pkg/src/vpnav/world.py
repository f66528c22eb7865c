"""Procedural multi-floor indoor worlds with navigation graphs.

A floor is a BSP partition of a rectangle into rooms joined by door
openings. Navigable nodes are grid samples of free space plus one node per
door; edges join mutually visible nodes within a radius, and consecutive
floors are joined by fixed-length stair edges. Panoramic observations are
deterministic: ray-cast depth plus room-class statistics projected to a
fixed-dimension descriptor.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import TWO_PI, segments_cross, wrap_heading

SCHEMA_VERSION = 1
STAIR_LENGTH_M = 3.0
FLOOR_HEIGHT_M = 3.0
ROOM_CLASS_COUNT = 8
RAYS_PER_VIEW = 8
MAX_RAY_DEPTH_M = 15.0

# Seed for the model-side constants (codebooks, projections). These are
# shared by every scene so that embeddings are comparable across worlds.
FEATURE_SEED = 0x5EEDED


class GenerationError(RuntimeError):
    """Raised when a scene cannot satisfy its invariants for a config."""


class UnreachableError(RuntimeError):
    """Raised by shortest_path when the target is not connected."""


@dataclass(frozen=True)
class SceneConfig:
    floor_count: int = 1
    rooms_per_floor: int = 5
    node_spacing_m: float = 2.0
    room_mean_size_m: float = 6.0
    min_room_side_m: float = 3.0
    door_width_m: float = 1.2
    edge_radius_factor: float = 2.5
    n_views: int = 12
    visual_dim: int = 32
    embed_dim: int = 64
    stairs_per_pair: int = 1

    def validate(self) -> None:
        if self.floor_count < 1 or self.rooms_per_floor < 1:
            raise ValueError("floor_count and rooms_per_floor must be >= 1")
        if self.node_spacing_m <= 0:
            raise ValueError("node_spacing_m must be positive")


@dataclass(frozen=True)
class Room:
    x0: float
    y0: float
    x1: float
    y1: float
    room_class: int

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (self.x0 + margin <= x <= self.x1 - margin
                and self.y0 + margin <= y <= self.y1 - margin)


@dataclass(frozen=True)
class Door:
    room_a: int
    room_b: int
    x: float
    y: float
    axis: int          # 0: opening along x (wall runs in x), 1: along y
    width: float


@dataclass(frozen=True)
class FloorPlan:
    floor_index: int
    rooms: tuple[Room, ...]
    doors: tuple[Door, ...]
    bounds: tuple[float, float, float, float]

    def wall_segments(self) -> np.ndarray:
        """All wall segments of this floor with door gaps removed, (m, 4)."""
        return _wall_segments(self)

    def room_at(self, x: float, y: float) -> Optional[int]:
        for i, r in enumerate(self.rooms):
            if r.x0 <= x <= r.x1 and r.y0 <= y <= r.y1:
                return i
        return None


@dataclass(frozen=True)
class NavNode:
    id: int
    position: tuple[float, float, float]
    floor_index: int


class NavGraph:
    """Undirected graph of navigable nodes with geodesic edge lengths."""

    def __init__(self, nodes: Sequence[NavNode], edges: dict[tuple[int, int], float]):
        self.nodes = list(nodes)
        self.edges = dict(edges)
        self.adj: dict[int, list[tuple[int, float]]] = {n.id: [] for n in nodes}
        for (a, b), w in sorted(self.edges.items()):
            self.adj[a].append((b, w))
            self.adj[b].append((a, w))
        for k in self.adj:
            self.adj[k].sort()

    def __len__(self) -> int:
        return len(self.nodes)

    def neighbors(self, nid: int) -> list[tuple[int, float]]:
        return self.adj[nid]

    def edge_length(self, a: int, b: int) -> float:
        return self.edges[(min(a, b), max(a, b))]

    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes])


@dataclass(frozen=True)
class Scene:
    scene_id: str
    floors: tuple[FloorPlan, ...]
    graph: NavGraph
    rng_seed: int
    config: SceneConfig

    def node(self, nid: int) -> NavNode:
        return self.graph.nodes[nid]


@dataclass(frozen=True)
class ViewObservation:
    view_index: int
    heading: float
    visual: np.ndarray            # visual_dim descriptor
    direction_embed: np.ndarray   # embed_dim, relative-orientation features
    navigable_embed: np.ndarray   # embed_dim codebook entry
    leads_to: Optional[int]


@dataclass(frozen=True)
class StepObservation:
    """Everything a rollout needs about one node: views plus the neighbor
    coordinates/edge lengths the simulator exposes for navigable views."""
    node_id: int
    position: tuple[float, float, float]
    floor_index: int
    views: tuple[ViewObservation, ...]
    neighbors: dict[int, tuple[tuple[float, float, float], float]]


# --------------------------------------------------------------------------
# model-side constant embeddings

def _feature_rng() -> np.random.Generator:
    return np.random.default_rng(FEATURE_SEED)


class _Codebooks:
    def __init__(self, visual_dim: int, embed_dim: int):
        rng = _feature_rng()
        self.visual_proj = rng.normal(0.0, 1.0 / math.sqrt(RAYS_PER_VIEW + ROOM_CLASS_COUNT),
                                      size=(RAYS_PER_VIEW + ROOM_CLASS_COUNT, visual_dim))
        nav = rng.normal(0.0, 1.0, size=(2, embed_dim))
        self.navigable = nav[0] / np.linalg.norm(nav[0])
        self.not_navigable = nav[1] / np.linalg.norm(nav[1])
        self.embed_dim = embed_dim


_CODEBOOK_CACHE: dict[tuple[int, int], _Codebooks] = {}


def codebooks(visual_dim: int = 32, embed_dim: int = 64) -> _Codebooks:
    key = (visual_dim, embed_dim)
    if key not in _CODEBOOK_CACHE:
        _CODEBOOK_CACHE[key] = _Codebooks(visual_dim, embed_dim)
    return _CODEBOOK_CACHE[key]


def direction_embedding(rel_angle: float, dim: int = 64) -> np.ndarray:
    """Fourier features of a relative view angle."""
    freqs = np.arange(1, dim // 2 + 1)
    return np.concatenate([np.sin(freqs * rel_angle), np.cos(freqs * rel_angle)]) / math.sqrt(dim)


def fourier_features(values: Sequence[float], scales: Sequence[float], dim: int) -> np.ndarray:
    """Sin/cos features of scaled scalars, tiled and truncated to ``dim``."""
    parts = []
    for v in values:
        for s in scales:
            parts.append(math.sin(v * s))
            parts.append(math.cos(v * s))
    base = np.array(parts)
    reps = int(np.ceil(dim / len(base)))
    return np.tile(base, reps)[:dim] / math.sqrt(dim)


# --------------------------------------------------------------------------
# floor generation

def _bsp_rooms(rng: np.random.Generator, cfg: SceneConfig) -> tuple[tuple[float, float, float, float], list[Room]]:
    n = cfg.rooms_per_floor
    side = math.ceil(math.sqrt(n)) * cfg.room_mean_size_m
    w = side * rng.uniform(0.9, 1.25)
    h = side * rng.uniform(0.9, 1.25)
    bounds = (0.0, 0.0, round(w, 3), round(h, 3))
    leaves = [(bounds[0], bounds[1], bounds[2], bounds[3])]
    min_side = cfg.min_room_side_m
    guard = 0
    while len(leaves) < n:
        guard += 1
        if guard > 500:
            raise GenerationError("room placement failed: config too dense for bounds")
        order = sorted(range(len(leaves)),
                       key=lambda i: -(leaves[i][2] - leaves[i][0]) * (leaves[i][3] - leaves[i][1]))
        split_done = False
        for idx in order:
            x0, y0, x1, y1 = leaves[idx]
            horiz = (x1 - x0) >= (y1 - y0)
            span = (x1 - x0) if horiz else (y1 - y0)
            if span < 2 * min_side:
                continue
            frac = rng.uniform(0.38, 0.62)
            cut = span * frac
            cut = min(max(cut, min_side), span - min_side)
            if horiz:
                a = (x0, y0, round(x0 + cut, 3), y1)
                b = (round(x0 + cut, 3), y0, x1, y1)
            else:
                a = (x0, y0, x1, round(y0 + cut, 3))
                b = (x0, round(y0 + cut, 3), x1, y1)
            leaves[idx] = a
            leaves.append(b)
            split_done = True
            break
        if not split_done:
            raise GenerationError("room placement failed: cannot split further")
    rooms = [Room(x0, y0, x1, y1, int(rng.integers(0, ROOM_CLASS_COUNT)))
             for (x0, y0, x1, y1) in leaves]
    rooms.sort(key=lambda r: (r.y0, r.x0))
    return bounds, rooms


def _shared_wall(a: Room, b: Room, min_overlap: float) -> Optional[tuple[int, float, float, float]]:
    """Shared wall between rooms as (axis, fixed_coord, lo, hi) or None."""
    tol = 1e-6
    if abs(a.x1 - b.x0) < tol or abs(b.x1 - a.x0) < tol:
        x = a.x1 if abs(a.x1 - b.x0) < tol else a.x0
        lo, hi = max(a.y0, b.y0), min(a.y1, b.y1)
        if hi - lo >= min_overlap:
            return (1, x, lo, hi)
    if abs(a.y1 - b.y0) < tol or abs(b.y1 - a.y0) < tol:
        y = a.y1 if abs(a.y1 - b.y0) < tol else a.y0
        lo, hi = max(a.x0, b.x0), min(a.x1, b.x1)
        if hi - lo >= min_overlap:
            return (0, y, lo, hi)
    return None


def _make_doors(rng: np.random.Generator, rooms: list[Room], cfg: SceneConfig) -> list[Door]:
    walls: dict[tuple[int, int], tuple[int, float, float, float]] = {}
    min_overlap = cfg.door_width_m + 0.4
    for i in range(len(rooms)):
        for j in range(i + 1, len(rooms)):
            shared = _shared_wall(rooms[i], rooms[j], min_overlap)
            if shared is not None:
                walls[(i, j)] = shared
    if not walls and len(rooms) > 1:
        raise GenerationError("rooms share no walls wide enough for doors")

    # Spanning tree first (keeps every room reachable), then extra doors.
    parent = list(range(len(rooms)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    doors: list[Door] = []

    def add_door(pair: tuple[int, int]) -> None:
        axis, fixed, lo, hi = walls[pair]
        margin = cfg.door_width_m / 2 + 0.2
        pos = rng.uniform(lo + margin, hi - margin)
        if axis == 1:
            doors.append(Door(pair[0], pair[1], fixed, pos, 1, cfg.door_width_m))
        else:
            doors.append(Door(pair[0], pair[1], pos, fixed, 0, cfg.door_width_m))

    for pair in sorted(walls):
        ra, rb = find(pair[0]), find(pair[1])
        if ra != rb:
            parent[ra] = rb
            add_door(pair)
    roots = {find(i) for i in range(len(rooms))}
    if len(roots) > 1:
        raise GenerationError("room adjacency graph is disconnected")
    for pair in sorted(walls):
        if rng.random() < 0.3 and not any(d.room_a == pair[0] and d.room_b == pair[1] for d in doors):
            add_door(pair)
    return doors


def _wall_segments(floor: FloorPlan) -> np.ndarray:
    """Wall segments (x0, y0, x1, y1) with door openings cut out."""
    cuts: dict[tuple[int, float], list[tuple[float, float]]] = {}
    for d in floor.doors:
        if d.axis == 1:       # wall runs in y at x = d.x
            key = (1, round(d.x, 6))
            cuts.setdefault(key, []).append((d.y - d.width / 2, d.y + d.width / 2))
        else:
            key = (0, round(d.y, 6))
            cuts.setdefault(key, []).append((d.x - d.width / 2, d.x + d.width / 2))

    segs: list[tuple[float, float, float, float]] = []

    def emit(axis: int, fixed: float, lo: float, hi: float) -> None:
        spans = [(lo, hi)]
        for (clo, chi) in cuts.get((axis, round(fixed, 6)), []):
            nxt = []
            for (slo, shi) in spans:
                if chi <= slo or clo >= shi:
                    nxt.append((slo, shi))
                    continue
                if clo > slo:
                    nxt.append((slo, clo))
                if chi < shi:
                    nxt.append((chi, shi))
            spans = nxt
        for (slo, shi) in spans:
            if shi - slo > 1e-9:
                if axis == 1:
                    segs.append((fixed, slo, fixed, shi))
                else:
                    segs.append((slo, fixed, shi, fixed))

    seen: set[tuple[float, float, float, float]] = set()
    for r in floor.rooms:
        for axis, fixed, lo, hi in ((1, r.x0, r.y0, r.y1), (1, r.x1, r.y0, r.y1),
                                    (0, r.y0, r.x0, r.x1), (0, r.y1, r.x0, r.x1)):
            key = (axis, round(fixed, 6), round(lo, 6), round(hi, 6))
            if key in seen:
                continue
            seen.add(key)
            emit(axis, fixed, lo, hi)
    return np.array(segs, dtype=float).reshape(-1, 4)


def _floor_nodes(rng: np.random.Generator, floor: FloorPlan, cfg: SceneConfig) -> list[tuple[float, float]]:
    pts: list[tuple[float, float]] = []
    margin = 0.45
    s = cfg.node_spacing_m
    for r in floor.rooms:
        xs = np.arange(r.x0 + margin + (r.x1 - r.x0 - 2 * margin) % s / 2, r.x1 - margin + 1e-9, s)
        ys = np.arange(r.y0 + margin + (r.y1 - r.y0 - 2 * margin) % s / 2, r.y1 - margin + 1e-9, s)
        if len(xs) == 0:
            xs = np.array([0.5 * (r.x0 + r.x1)])
        if len(ys) == 0:
            ys = np.array([0.5 * (r.y0 + r.y1)])
        for y in ys:
            for x in xs:
                pts.append((round(float(x), 6), round(float(y), 6)))
    for d in floor.doors:
        pts.append((round(d.x, 6), round(d.y, 6)))
    return pts


def _visible_pairs(points: np.ndarray, walls: np.ndarray, radius: float) -> list[tuple[int, int, float]]:
    n = len(points)
    if n == 0:
        return []
    diff = points[:, None, :] - points[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    ii, jj = np.where(np.triu(dist <= radius, k=1) & (dist > 1e-9))
    if len(ii) == 0:
        return []
    if len(walls) == 0:
        return [(int(a), int(b), float(dist[a, b])) for a, b in zip(ii, jj)]
    blocked = segments_cross(points[ii], points[jj], walls[:, :2], walls[:, 2:]).any(axis=1)
    return [(int(a), int(b), float(dist[a, b]))
            for a, b, bl in zip(ii, jj, blocked) if not bl]


def _cap_degrees(nodes: list[NavNode], edges: dict[tuple[int, int], float], max_degree: int) -> None:
    """Prune longest removable edges until every node has degree <= max_degree.

    Removal keeps the graph connected; needed so each panoramic view can
    carry at most one navigable neighbor.
    """
    adj: dict[int, set[int]] = {n.id: set() for n in nodes}
    for (a, b) in edges:
        adj[a].add(b)
        adj[b].add(a)

    def connected_without(a: int, b: int) -> bool:
        seen = {a}
        stack = [a]
        while stack:
            u = stack.pop()
            if u == b:
                return True
            for v in adj[u]:
                if (u, v) in ((a, b), (b, a)):
                    continue
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return False

    guard = 0
    while True:
        guard += 1
        if guard > 20000:
            raise GenerationError("degree capping did not converge")
        over = [(len(adj[i]), i) for i in adj if len(adj[i]) > max_degree]
        if not over:
            return
        _, node = max(over)
        cands = sorted(((edges[(min(node, v), max(node, v))], max(node, v), v)
                        for v in adj[node] if len(adj[v]) > 1), reverse=True)
        removed = False
        for _, _, v in cands:
            adj[node].discard(v)
            adj[v].discard(node)
            if connected_without(node, v):
                del edges[(min(node, v), max(node, v))]
                removed = True
                break
            adj[node].add(v)
            adj[v].add(node)
        if not removed:
            raise GenerationError("cannot cap node degree without disconnecting graph")


def generate_scene(seed: int, cfg: SceneConfig = SceneConfig()) -> Scene:
    """Build a scene; identical (seed, cfg) gives a bit-identical result."""
    cfg.validate()
    root = np.random.SeedSequence(seed)
    floor_seqs = root.spawn(cfg.floor_count + 1)
    stair_rng = np.random.default_rng(floor_seqs[-1])

    floors: list[FloorPlan] = []
    for f in range(cfg.floor_count):
        rng = np.random.default_rng(floor_seqs[f])
        for attempt in range(8):
            try:
                bounds, rooms = _bsp_rooms(rng, cfg)
                doors = _make_doors(rng, rooms, cfg)
                floors.append(FloorPlan(f, tuple(rooms), tuple(doors), bounds))
                break
            except GenerationError:
                if attempt == 7:
                    raise
        else:  # pragma: no cover
            raise GenerationError("floor generation failed")

    nodes: list[NavNode] = []
    edges: dict[tuple[int, int], float] = {}
    for floor in floors:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 1000 + floor.floor_index)))
        pts2d = _floor_nodes(rng, floor, cfg)
        pts2d = sorted(set(pts2d), key=lambda p: (p[1], p[0]))
        walls = floor.wall_segments()
        offset = len(nodes)
        z = floor.floor_index * FLOOR_HEIGHT_M
        for (x, y) in pts2d:
            nodes.append(NavNode(len(nodes), (x, y, z), floor.floor_index))
        pts = np.array(pts2d, dtype=float)
        for a, b, w in _visible_pairs(pts, walls, cfg.edge_radius_factor * cfg.node_spacing_m):
            edges[(offset + a, offset + b)] = w

    # stairs between consecutive floors
    for f in range(cfg.floor_count - 1):
        lower = [n for n in nodes if n.floor_index == f]
        upper = [n for n in nodes if n.floor_index == f + 1]
        for _ in range(cfg.stairs_per_pair):
            fl = floors[f]
            room = fl.rooms[int(stair_rng.integers(0, len(fl.rooms)))]
            cx, cy = room.center
            lo = min(lower, key=lambda n: (np.hypot(n.position[0] - cx, n.position[1] - cy), n.id))
            up = min(upper, key=lambda n: (np.hypot(n.position[0] - lo.position[0],
                                                    n.position[1] - lo.position[1]), n.id))
            key = (min(lo.id, up.id), max(lo.id, up.id))
            edges[key] = STAIR_LENGTH_M

    _cap_degrees(nodes, edges, cfg.n_views)

    graph = NavGraph(nodes, edges)
    if not _connected(graph):
        raise GenerationError("navigation graph is disconnected")
    scene_id = f"vpn-{seed:x}-{cfg.floor_count}f{cfg.rooms_per_floor}r"
    return Scene(scene_id, tuple(floors), graph, seed, cfg)


def _connected(graph: NavGraph) -> bool:
    if not graph.nodes:
        return False
    seen = {graph.nodes[0].id}
    stack = [graph.nodes[0].id]
    while stack:
        u = stack.pop()
        for v, _ in graph.neighbors(u):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(graph.nodes)


# --------------------------------------------------------------------------
# shortest paths

def shortest_path(graph: NavGraph, a: int, b: int) -> tuple[list[int], float]:
    """Minimal-length path from a to b; ties broken by the lexicographically
    smallest node-id sequence.

    Heap priorities carry whole paths with exactly-rounded (fsum) lengths,
    which makes the returned length identical in both directions: a path
    and its reverse sum the same multiset of edge weights.
    """
    if a == b:
        return [a], 0.0
    heap: list[tuple[float, tuple[int, ...], tuple[float, ...]]] = [(0.0, (a,), ())]
    done: set[int] = set()
    while heap:
        dist, path, weights = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == b:
            return list(path), dist
        for v, w in graph.neighbors(u):
            if v not in done:
                new_weights = weights + (w,)
                heapq.heappush(heap, (math.fsum(new_weights), path + (v,), new_weights))
    raise UnreachableError(f"node {b} unreachable from {a}")


def geodesic_distances(graph: NavGraph, source: int) -> dict[int, float]:
    """Dijkstra distances from ``source`` to every reachable node."""
    dist = {source: 0.0}
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist.get(u, math.inf):
            continue
        for v, w in graph.neighbors(u):
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


# --------------------------------------------------------------------------
# panoramic observation

def _assign_view_slots(rel_angles: dict[int, float], n: int) -> dict[int, int]:
    """Give each neighbor its own view slot, nearest-sector first."""
    sector = TWO_PI / n
    order = sorted(rel_angles, key=lambda nid: (
        min(abs(rel_angles[nid] / sector - round(rel_angles[nid] / sector)), 0.5), nid))
    taken: dict[int, int] = {}
    for nid in order:
        ideal = int(round(rel_angles[nid] / sector)) % n
        if ideal not in taken:
            taken[ideal] = nid
            continue
        for step in range(1, n):
            for cand in ((ideal + step) % n, (ideal - step) % n):
                if cand not in taken:
                    taken[cand] = nid
                    break
            else:
                continue
            break
    return {nid: slot for slot, nid in taken.items()}


def _ray_features(scene: Scene, nid: int, headings: np.ndarray) -> np.ndarray:
    """Per-ray depth and room-class one-hot, vectorized over all rays."""
    node = scene.node(nid)
    floor = scene.floors[node.floor_index]
    walls = floor.wall_segments()
    x, y = node.position[0], node.position[1]
    origins = np.tile([x, y], (len(headings), 1))
    ends = origins + MAX_RAY_DEPTH_M * np.stack([np.cos(headings), np.sin(headings)], axis=1)

    depths = np.full(len(headings), MAX_RAY_DEPTH_M)
    if len(walls):
        p0 = origins[:, None, :]
        d1 = (ends - origins)[:, None, :]
        q0 = walls[None, :, :2]
        d2 = (walls[:, 2:] - walls[:, :2])[None, :, :]
        denom = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        diff = q0 - p0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (diff[..., 0] * d2[..., 1] - diff[..., 1] * d2[..., 0]) / denom
            u = (diff[..., 0] * d1[..., 1] - diff[..., 1] * d1[..., 0]) / denom
        valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= -1e-9) & (u <= 1 + 1e-9)
        t = np.where(valid, t, np.inf)
        tmin = t.min(axis=1)
        depths = np.minimum(depths, np.where(np.isfinite(tmin), tmin * MAX_RAY_DEPTH_M, MAX_RAY_DEPTH_M))

    classes = np.zeros((len(headings), ROOM_CLASS_COUNT))
    mid = origins + 0.5 * depths[:, None] * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    for k, (mx, my) in enumerate(mid):
        ri = floor.room_at(float(mx), float(my))
        if ri is not None:
            classes[k, floor.rooms[ri].room_class] = 1.0
    return np.concatenate([depths[:, None] / MAX_RAY_DEPTH_M, classes], axis=1)


def observe(scene: Scene, node_id: int, initial_heading: float,
            with_visuals: bool = True) -> list[ViewObservation]:
    """Deterministic panorama at a node: ``n_views`` sector descriptors with
    per-neighbor navigability annotations. ``with_visuals=False`` skips the
    ray-cast descriptor (zeros) for policies that never read it."""
    cfg = scene.config
    n = cfg.n_views
    books = codebooks(cfg.visual_dim, cfg.embed_dim)
    offset = wrap_heading(initial_heading)
    node = scene.node(node_id)
    x, y = node.position[0], node.position[1]

    rel = {}
    for nb, _w in scene.graph.neighbors(node_id):
        p = scene.node(nb).position
        rel[nb] = wrap_heading(math.atan2(p[1] - y, p[0] - x) - offset)
    slots = _assign_view_slots(rel, n)
    slot_of = {slot: nid for nid, slot in slots.items()}

    sector = TWO_PI / n
    visuals = np.zeros((n, cfg.visual_dim))
    if with_visuals:
        sub = (np.arange(RAYS_PER_VIEW) + 0.5) / RAYS_PER_VIEW - 0.5
        all_headings = np.concatenate([
            wrap_heading(offset + i * sector) + sub * sector for i in range(n)])
        feats = _ray_features(scene, node_id, all_headings)
        for i in range(n):
            raw = feats[i * RAYS_PER_VIEW:(i + 1) * RAYS_PER_VIEW]
            stats = np.concatenate([raw[:, 0], raw[:, 1:].mean(axis=0)])
            visuals[i] = stats @ books.visual_proj * math.sqrt(RAYS_PER_VIEW + ROOM_CLASS_COUNT)

    views: list[ViewObservation] = []
    for i in range(n):
        leads = slot_of.get(i)
        views.append(ViewObservation(
            view_index=i,
            heading=wrap_heading(offset + i * sector),
            visual=visuals[i],
            direction_embed=direction_embedding(i * sector, cfg.embed_dim),
            navigable_embed=(books.navigable if leads is not None else books.not_navigable).copy(),
            leads_to=leads,
        ))
    return views


def observe_step(scene: Scene, node_id: int, initial_heading: float,
                 with_visuals: bool = True) -> StepObservation:
    """Rollout-facing observation: the panorama plus the neighbor
    coordinates and edge lengths the simulator exposes for navigable views."""
    node = scene.node(node_id)
    neighbors = {
        nb: (scene.node(nb).position, w)
        for nb, w in scene.graph.neighbors(node_id)
    }
    views = tuple(observe(scene, node_id, initial_heading, with_visuals))
    return StepObservation(node_id, node.position, node.floor_index, views, neighbors)


# --------------------------------------------------------------------------
# serialization

def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "rng_seed": scene.rng_seed,
        "config": asdict(scene.config),
        "floors": [
            {
                "floor_index": fl.floor_index,
                "bounds": list(fl.bounds),
                "rooms": [asdict(r) for r in fl.rooms],
                "doors": [asdict(d) for d in fl.doors],
            }
            for fl in scene.floors
        ],
        "graph": {
            "nodes": [
                {"id": n.id, "position": list(n.position), "floor_index": n.floor_index}
                for n in scene.graph.nodes
            ],
            "edges": [[a, b, w] for (a, b), w in sorted(scene.graph.edges.items())],
        },
    }


def scene_from_dict(doc: dict) -> Scene:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported scene schema: {doc.get('schema_version')}")
    cfg = SceneConfig(**doc["config"])
    floors = tuple(
        FloorPlan(
            fl["floor_index"],
            tuple(Room(**r) for r in fl["rooms"]),
            tuple(Door(**d) for d in fl["doors"]),
            tuple(fl["bounds"]),
        )
        for fl in doc["floors"]
    )
    nodes = [NavNode(n["id"], tuple(n["position"]), n["floor_index"]) for n in doc["graph"]["nodes"]]
    edges = {(a, b): w for a, b, w in doc["graph"]["edges"]}
    return Scene(doc["scene_id"], floors, NavGraph(nodes, edges), doc["rng_seed"], cfg)


def dump_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(canonical_json(scene_to_dict(scene)), encoding="utf-8")


def load_scene(path: str | Path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def canonical_json(doc: object) -> str:
    """Deterministic JSON used for every artifact we byte-compare."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"
