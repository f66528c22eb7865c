"""Agent-side incremental topological graph and node embeddings.

The graph holds one current node, visited nodes with full panoramas, and
navigable frontier nodes that accumulate the partial views they were seen
from. Node embeddings sum a step embedding, a relative-position embedding,
and the mean of attention-contextualized view features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .world import (FEATURE_SEED, StepObservation, ViewObservation,
                    direction_embedding, fourier_features)

LN_EPS = 1e-5
MAX_STEP_EMBEDDINGS = 64

CURRENT = "current"
VISITED = "visited"
NAVIGABLE = "navigable"


class _EmbedConstants:
    """Fixed seeded projection/codebook tensors shared by all graphs."""

    def __init__(self, visual_dim: int, d: int):
        rng = np.random.default_rng(FEATURE_SEED + 1)
        self.view_proj = rng.normal(0.0, 1.0 / math.sqrt(visual_dim), (visual_dim, d))
        self.step_codebook = rng.normal(0.0, 1.0 / math.sqrt(d), (MAX_STEP_EMBEDDINGS, d))
        self.stop_token = rng.normal(0.0, 1.0 / math.sqrt(d), d)
        self.d = d


_CONST_CACHE: dict[tuple[int, int], _EmbedConstants] = {}


def embed_constants(visual_dim: int = 32, d: int = 64) -> _EmbedConstants:
    key = (visual_dim, d)
    if key not in _CONST_CACHE:
        _CONST_CACHE[key] = _EmbedConstants(visual_dim, d)
    return _CONST_CACHE[key]


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


@dataclass
class TopoNode:
    id: int
    status: str
    position: tuple[float, float, float]
    floor_index: int
    views: list[ViewObservation] = field(default_factory=list)
    first_visit_step: Optional[int] = None


class TopoGraph:
    """Incrementally built map; single-writer, snapshots are plain dicts."""

    def __init__(self) -> None:
        self.nodes: dict[int, TopoNode] = {}
        self.edges: dict[tuple[int, int], float] = {}
        self.current: Optional[int] = None
        self.step_counter: int = 0
        self._dist: Optional[np.ndarray] = None
        self._dist_ids: list[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def ordered_ids(self) -> list[int]:
        return sorted(self.nodes)

    def neighbors(self, nid: int) -> list[tuple[int, float]]:
        out = []
        for (a, b), w in self.edges.items():
            if a == nid:
                out.append((b, w))
            elif b == nid:
                out.append((a, w))
        return sorted(out)

    def status_counts(self) -> dict[str, int]:
        counts = {CURRENT: 0, VISITED: 0, NAVIGABLE: 0}
        for n in self.nodes.values():
            counts[n.status] += 1
        return counts

    # -- growth -----------------------------------------------------------

    def move_to(self, nid: int) -> None:
        if nid not in self.nodes:
            raise KeyError(f"move to unknown node {nid}")
        if self.current is not None:
            self.nodes[self.current].status = VISITED
        self.nodes[nid].status = CURRENT
        self.current = nid

    def distance_matrix(self) -> tuple[list[int], np.ndarray]:
        """Pairwise geodesic distances over the partial graph's edges,
        recomputed lazily after growth (Floyd-Warshall, unreachable=inf)."""
        ids = self.ordered_ids()
        if self._dist is not None and self._dist_ids == ids:
            return ids, self._dist
        index = {nid: i for i, nid in enumerate(ids)}
        n = len(ids)
        d = np.full((n, n), np.inf)
        np.fill_diagonal(d, 0.0)
        for (a, b), w in self.edges.items():
            i, j = index[a], index[b]
            d[i, j] = min(d[i, j], w)
            d[j, i] = min(d[j, i], w)
        for k in range(n):
            d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
        self._dist = d
        self._dist_ids = ids
        return ids, d

    def shortest_path(self, a: int, b: int) -> tuple[list[int], float]:
        """Same contract as the world planner, over the partial edges."""
        from .world import NavGraph, NavNode, shortest_path as sp

        nodes = [NavNode(nid, self.nodes[nid].position, self.nodes[nid].floor_index)
                 for nid in self.ordered_ids()]
        return sp(NavGraph(nodes, dict(self.edges)), a, b)

    def snapshot(self) -> dict:
        return {
            "step": self.step_counter,
            "current": self.current,
            "nodes": [
                {"id": n.id, "status": n.status,
                 "position": list(n.position),
                 "floor_index": n.floor_index,
                 "first_visit_step": n.first_visit_step,
                 "view_count": len(n.views)}
                for _, n in sorted(self.nodes.items())
            ],
            "edges": [[a, b, w] for (a, b), w in sorted(self.edges.items())],
        }


def update_graph(graph: TopoGraph, obs: StepObservation) -> TopoGraph:
    """Fold one panorama into the graph: the observed node becomes current
    with full views, every navigable view's neighbor is inserted or gains
    the new partial view, and the distance matrix is invalidated."""
    nid = obs.node_id
    if graph.current is None:
        graph.nodes[nid] = TopoNode(nid, CURRENT, obs.position, obs.floor_index)
        graph.current = nid
    elif graph.current != nid:
        raise ValueError(f"observation at {nid} but graph current is {graph.current}")

    node = graph.nodes[nid]
    node.status = CURRENT
    node.views = list(obs.views)
    if node.first_visit_step is None:
        node.first_visit_step = graph.step_counter

    for view in obs.views:
        if view.leads_to is None:
            continue
        nb = view.leads_to
        pos, length = obs.neighbors[nb]
        if nb not in graph.nodes:
            floor = round(pos[2] / 3.0)
            graph.nodes[nb] = TopoNode(nb, NAVIGABLE, pos, floor, views=[view])
        elif graph.nodes[nb].status == NAVIGABLE:
            graph.nodes[nb].views.append(view)
        graph.edges[(min(nid, nb), max(nid, nb))] = length
    graph.step_counter += 1
    graph._dist = None
    return graph


# --------------------------------------------------------------------------
# embeddings

def embed_views(views: list[ViewObservation], attn_weights,
                visual_dim: int = 32, d: int = 64) -> np.ndarray:
    """Per-view LN(visual + direction + navigability) followed by one
    single-head self-attention pass over the node's views."""
    if not views:
        raise ValueError("need at least one view")
    const = embed_constants(visual_dim, d)
    raw = np.stack([
        v.visual @ const.view_proj + v.direction_embed + v.navigable_embed
        for v in views
    ])
    x = layer_norm(raw)
    q = x @ attn_weights.view_wq
    k = x @ attn_weights.view_wk
    v = x @ attn_weights.view_wv
    scores = q @ k.T / math.sqrt(d)
    scores -= scores.max(axis=-1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=-1, keepdims=True)
    return attn @ v


def position_embedding(rel_dist: float, rel_bearing: float, d: int = 64) -> np.ndarray:
    half = d // 2
    bearing = direction_embedding(rel_bearing, half)
    dist = fourier_features([rel_dist], [0.25, 0.5, 1.0, 2.0], d - half)
    return np.concatenate([bearing, dist])


def embed_node(node: TopoNode, contextual_views: np.ndarray,
               current_position: tuple[float, float, float],
               visual_dim: int = 32, d: int = 64) -> np.ndarray:
    """Mean of available contextual views plus step and relative-position
    embeddings; unexplored nodes get a zero step component."""
    const = embed_constants(visual_dim, d)
    if node.first_visit_step is None:
        step = np.zeros(d)
    else:
        step = const.step_codebook[min(node.first_visit_step, MAX_STEP_EMBEDDINGS - 1)]
    dx = node.position[0] - current_position[0]
    dy = node.position[1] - current_position[1]
    pos = position_embedding(float(np.hypot(dx, dy)), math.atan2(dy, dx), d)
    return step + pos + contextual_views.mean(axis=0)


def stop_embedding(visual_dim: int = 32, d: int = 64) -> np.ndarray:
    return embed_constants(visual_dim, d).stop_token.copy()


def embed_graph(graph: TopoGraph, attn_weights, visual_dim: int = 32,
                d: int = 64) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Embed every node plus the stop token (row 0) and return the matching
    distance-bias matrix padded with zeros for stop."""
    ids, dist = graph.distance_matrix()
    cur = graph.nodes[graph.current]
    rows = [stop_embedding(visual_dim, d)]
    for nid in ids:
        node = graph.nodes[nid]
        ctx = embed_views(node.views, attn_weights, visual_dim, d)
        rows.append(embed_node(node, ctx, cur.position, visual_dim, d))
    n = len(ids) + 1
    e = np.zeros((n, n))
    finite = np.where(np.isfinite(dist), dist, 0.0)
    e[1:, 1:] = finite
    return ids, np.stack(rows), e
