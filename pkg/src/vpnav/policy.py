"""Action scoring: prompt tokenization with order-aware concatenation,
cross-modal and graph-aware attention, global/local score fusion with
backtrack transformation, and deterministic action selection.

The attention stack runs forward-only with fixed seeded weights; the
trainable surface of the learned agent is the log-linear feature head and
the fusion logit (see training.py).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import project_onto_polyline
from .promptmap import OUTPUT_SIZE, PromptRaster
from .topo import NAVIGABLE, TopoGraph, embed_graph
from .world import FEATURE_SEED, fourier_features

PATCH_PX = 16
TOKENS_PER_MAP = (OUTPUT_SIZE // PATCH_PX) ** 2
STOP_ID = -1
NEG_INF = -np.inf

WEIGHTS_SEED = 0xA77E17
CHECKPOINT_VERSION = 1

# log-linear candidate features (see candidate_features in agents.py)
FEATURE_NAMES = (
    "bias",
    "progress_gain",
    "deviation",
    "floor_order_gain",
    "graph_distance",
    "is_stop",
    "stop_gate",
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass
class AttentionWeights:
    view_wq: np.ndarray
    view_wk: np.ndarray
    view_wv: np.ndarray
    cross_wq: np.ndarray
    cross_wk: np.ndarray
    cross_wv: np.ndarray
    gasa_wq: np.ndarray
    gasa_wk: np.ndarray
    gasa_wv: np.ndarray
    gasa_wd: float
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: float
    d: int

    @staticmethod
    def seeded(d: int = 64, seed: int = WEIGHTS_SEED) -> "AttentionWeights":
        rng = np.random.default_rng(seed)
        s = 1.0 / math.sqrt(d)

        def mat() -> np.ndarray:
            return rng.normal(0.0, s, (d, d))

        return AttentionWeights(
            view_wq=mat(), view_wk=mat(), view_wv=mat(),
            cross_wq=mat(), cross_wk=mat(), cross_wv=mat(),
            gasa_wq=mat(), gasa_wk=mat(), gasa_wv=mat(),
            gasa_wd=-0.1,
            ffn_w1=mat(), ffn_b1=rng.normal(0.0, s, d),
            ffn_w2=rng.normal(0.0, s, d), ffn_b2=0.0,
            d=d,
        )


@dataclass
class PolicyParams:
    w: np.ndarray
    sigma_logit: float = 0.0
    lam: float = 0.5
    attention: AttentionWeights = field(default_factory=AttentionWeights.seeded)

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    @property
    def sigma(self) -> float:
        x = self.sigma_logit
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)

    @staticmethod
    def initial(seed: int = 0, d: int = 64, lam: float = 0.5) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        return PolicyParams(w=rng.normal(0.0, 0.1, N_FEATURES), sigma_logit=0.0,
                            lam=lam, attention=AttentionWeights.seeded(d))


def save_params(params: PolicyParams, path: str | Path) -> None:
    a = params.attention
    doc = {
        "version": CHECKPOINT_VERSION,
        "w": params.w.tolist(),
        "sigma_logit": params.sigma_logit,
        "lambda": params.lam,
        "attention": {
            "d": a.d, "gasa_wd": a.gasa_wd, "ffn_b2": a.ffn_b2,
            **{name: getattr(a, name).tolist()
               for name in ("view_wq", "view_wk", "view_wv", "cross_wq", "cross_wk",
                            "cross_wv", "gasa_wq", "gasa_wk", "gasa_wv", "ffn_w1",
                            "ffn_b1", "ffn_w2")},
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> PolicyParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version")
    att = doc["attention"]
    weights = AttentionWeights(
        d=att["d"], gasa_wd=att["gasa_wd"], ffn_b2=att["ffn_b2"],
        **{name: np.array(att[name])
           for name in ("view_wq", "view_wk", "view_wv", "cross_wq", "cross_wk",
                        "cross_wv", "gasa_wq", "gasa_wk", "gasa_wv", "ffn_w1",
                        "ffn_b1", "ffn_w2")},
    )
    return PolicyParams(w=np.array(doc["w"]), sigma_logit=doc["sigma_logit"],
                        lam=doc["lambda"], attention=weights)


# --------------------------------------------------------------------------
# prompt tokenization and order-aware concatenation

@dataclass(frozen=True)
class PromptTokens:
    tokens: np.ndarray          # (k * TOKENS_PER_MAP, d) with order embeds added
    floor_order: tuple[int, ...]
    order_embeds: np.ndarray    # (k * TOKENS_PER_MAP, d), block-constant


class _TokenProjection:
    def __init__(self, d: int):
        rng = np.random.default_rng(FEATURE_SEED + 2)
        self.proj = rng.normal(0.0, 1.0 / math.sqrt(5), (5, d))


_TOKEN_PROJ: dict[int, _TokenProjection] = {}


def _token_projection(d: int) -> np.ndarray:
    if d not in _TOKEN_PROJ:
        _TOKEN_PROJ[d] = _TokenProjection(d)
    return _TOKEN_PROJ[d].proj


def encode_prompt_map(raster: PromptRaster, d: int = 64) -> np.ndarray:
    """Patch-pooled prompt encoding: the 14x14 grid of 16px cells each
    yields (mean RGB, ink fraction, occupancy fraction) projected to d."""
    px = raster.pixels
    if px.shape[0] != OUTPUT_SIZE or px.shape[1] != OUTPUT_SIZE:
        raise ValueError("prompt raster must be finalized to 224x224")
    g = OUTPUT_SIZE // PATCH_PX
    cells = px.reshape(g, PATCH_PX, g, PATCH_PX, 3).astype(float)
    mean_rgb = cells.mean(axis=(1, 3)) / 255.0                    # (14, 14, 3)

    r, gch, b = px[:, :, 0].astype(int), px[:, :, 1].astype(int), px[:, :, 2].astype(int)
    ink = ((r > 200) & (gch < 60) & (b < 60)) | ((gch > 200) & (r < 60) & (b < 60)) \
        | ((b > 200) & (r < 60) & (gch < 60))
    occ = (r < 60) & (gch < 60) & (b < 60)
    ink_frac = ink.reshape(g, PATCH_PX, g, PATCH_PX).mean(axis=(1, 3))
    occ_frac = occ.reshape(g, PATCH_PX, g, PATCH_PX).mean(axis=(1, 3))
    stats = np.concatenate([mean_rgb, ink_frac[..., None], occ_frac[..., None]], axis=-1)
    return stats.reshape(-1, 5) @ _token_projection(d)


def order_embedding(order_index: int, d: int = 64) -> np.ndarray:
    return fourier_features([float(order_index + 1)], [0.5, 1.0, 2.0, 4.0], d)


def oafc_concat(per_map_tokens: Sequence[np.ndarray], floor_visit_order: Sequence[int],
                last_map_only: bool = False) -> PromptTokens:
    """Concatenate per-floor token blocks in traversal order, each offset by
    its order embedding; the last-map ablation keeps only the final block."""
    if len(per_map_tokens) != len(floor_visit_order) or not per_map_tokens:
        raise ValueError("need one token block per visited floor")
    blocks = list(per_map_tokens)
    order = list(floor_visit_order)
    if last_map_only:
        blocks, order = blocks[-1:], order[-1:]
    d = blocks[0].shape[1]
    toks, embeds = [], []
    for i, block in enumerate(blocks):
        b_i = order_embedding(i, d)
        toks.append(block + b_i)
        embeds.append(np.tile(b_i, (block.shape[0], 1)))
    return PromptTokens(np.vstack(toks), tuple(order), np.vstack(embeds))


# --------------------------------------------------------------------------
# attention forward passes

def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def cross_attention_forward(node_embeds: np.ndarray, prompt: PromptTokens,
                            weights: AttentionWeights,
                            return_attn: bool = False):
    """Scaled dot-product cross-attention with nodes as queries and prompt
    tokens as keys/values."""
    q = node_embeds @ weights.cross_wq
    k = prompt.tokens @ weights.cross_wk
    v = prompt.tokens @ weights.cross_wv
    attn = _softmax_rows(q @ k.T / math.sqrt(weights.d))
    out = attn @ v
    return (out, attn) if return_attn else out


def gasa_forward(x: np.ndarray, e: np.ndarray, weights: AttentionWeights,
                 w_d: Optional[float] = None, return_attn: bool = False):
    """Graph-aware self-attention: softmax(XWq(XWk)^T / sqrt(d) + E*w_d) XWv."""
    if e.shape != (x.shape[0], x.shape[0]):
        raise ValueError("distance matrix must match the embedding count")
    if not np.allclose(e, e.T) or np.abs(np.diag(e)).max() > 1e-12:
        raise ValueError("distance matrix must be symmetric with zero diagonal")
    wd = weights.gasa_wd if w_d is None else w_d
    q = x @ weights.gasa_wq
    k = x @ weights.gasa_wk
    attn = _softmax_rows(q @ k.T / math.sqrt(weights.d) + e * wd)
    out = attn @ (x @ weights.gasa_wv)
    return (out, attn) if return_attn else out


# --------------------------------------------------------------------------
# score vectors

@dataclass
class ScoreVector:
    """Per-candidate action scores over {stop} + G_t nodes (stop index 0)."""

    candidate_ids: list[int]          # STOP_ID first, then node ids ascending
    s_global: np.ndarray
    mask: np.ndarray                  # True = excluded (visited / current)
    s_local_global: Optional[np.ndarray] = None
    backtrack_score: float = 0.0
    fused: Optional[np.ndarray] = None

    def masked(self, scores: np.ndarray) -> np.ndarray:
        out = scores.astype(float).copy()
        out[self.mask] = NEG_INF
        return out

    @property
    def final(self) -> np.ndarray:
        if self.fused is not None:
            return self.fused
        return self.masked(self.s_global)


def candidate_mask(graph: TopoGraph, ids: Sequence[int]) -> np.ndarray:
    """Visited and current nodes are masked; stop (index 0) never is."""
    mask = np.zeros(len(ids) + 1, dtype=bool)
    for i, nid in enumerate(ids):
        mask[i + 1] = graph.nodes[nid].status != NAVIGABLE
    return mask


def global_scores(refined: np.ndarray, graph: TopoGraph, ids: Sequence[int],
                  weights: AttentionWeights) -> ScoreVector:
    """FFN scores over refined node embeddings (stop at row 0), with the
    revisit mask applied."""
    if refined.shape[0] != len(ids) + 1:
        raise ValueError("refined embeddings must include the stop row")
    hidden = np.maximum(refined @ weights.ffn_w1 + weights.ffn_b1, 0.0)
    raw = hidden @ weights.ffn_w2 + weights.ffn_b2
    mask = candidate_mask(graph, ids)
    sv = ScoreVector([STOP_ID] + list(ids), raw, mask)
    sv.s_global = sv.masked(raw)
    return sv


def neural_global_scores(graph: TopoGraph, prompt: PromptTokens,
                         params: PolicyParams, visual_dim: int = 32) -> ScoreVector:
    """Full forward pass: node embedding, cross-attention over prompt
    tokens, GASA with distance bias, FFN scoring."""
    ids, embeds, e = embed_graph(graph, params.attention, visual_dim, params.attention.d)
    x = cross_attention_forward(embeds, prompt, params.attention)
    refined = gasa_forward(x, e, params.attention)
    return global_scores(refined, graph, ids, params.attention)


def local_to_global(sv: ScoreVector, local_scores: Mapping[int, float],
                    stop_score: float, graph: TopoGraph) -> ScoreVector:
    """Lift current-node view scores into the global candidate space.

    Candidates adjacent to the current node keep their view scores; every
    other node receives the backtrack score (the sum of the local scores of
    visited neighbors), so retracing stays expressible.
    """
    adjacent = {nb: w for nb, w in graph.neighbors(graph.current)}
    unknown = set(local_scores) - set(adjacent)
    if unknown:
        raise ValueError(f"local scores for non-adjacent nodes: {sorted(unknown)}")
    s_b = sum(score for nid, score in local_scores.items()
              if graph.nodes[nid].status != NAVIGABLE)
    out = np.empty(len(sv.candidate_ids))
    out[0] = stop_score
    for i, nid in enumerate(sv.candidate_ids[1:], start=1):
        if nid in local_scores:
            out[i] = local_scores[nid]
        else:
            out[i] = s_b
    sv.s_local_global = out
    sv.backtrack_score = s_b
    return sv


def fuse(sv: ScoreVector, sigma: float) -> ScoreVector:
    """Dynamic fusion s = sigma * s_global + (1 - sigma) * s_local'; the
    global mask governs which entries stay selectable."""
    if sv.s_local_global is None:
        raise ValueError("transform local scores before fusing")
    fused = sigma * np.where(sv.mask, 0.0, sv.s_global) \
        + (1.0 - sigma) * sv.s_local_global
    sv.fused = sv.masked(fused)
    return sv


@dataclass(frozen=True)
class Action:
    kind: str                 # "stop" | "move"
    target: Optional[int]
    path: tuple[int, ...]     # every node traversed, including endpoints


def act(sv: ScoreVector, graph: TopoGraph) -> Action:
    """Pick the highest-scoring unmasked candidate (ties: stop first, then
    lowest node id) and, for moves, plan the shortest path in G_t."""
    scores = sv.final
    if not np.isfinite(scores).any():
        raise ValueError("no unmasked candidate to act on")
    best = int(np.argmax(scores))     # first maximum: stop, then ascending ids
    if sv.candidate_ids[best] == STOP_ID:
        return Action("stop", None, (graph.current,))
    target = sv.candidate_ids[best]
    path, _ = graph.shortest_path(graph.current, target)
    return Action("move", target, tuple(path))


# --------------------------------------------------------------------------
# geometric scoring and pseudo labels

def geometric_score(candidate_xy: tuple[float, float], polyline_world: np.ndarray,
                    beta: float = 1.0) -> float:
    """Projected arc-length progress along the registered polyline minus
    beta times the perpendicular deviation from it."""
    prog, dev = project_onto_polyline(np.array([candidate_xy]), polyline_world)
    return float(prog[0] - beta * dev[0])


def pseudo_label(graph: TopoGraph, goal: int, dist_to_goal: Mapping[int, float]) -> int:
    """DAgger teacher: the frontier candidate minimizing partial-graph
    distance from the current node plus remaining geodesic to the goal;
    stop when already at the goal."""
    if graph.current == goal:
        return STOP_ID
    ids, dist = graph.distance_matrix()
    index = {nid: i for i, nid in enumerate(ids)}
    cur = index[graph.current]
    best_id, best_cost = None, math.inf
    for nid in ids:
        if graph.nodes[nid].status != NAVIGABLE:
            continue
        cost = float(dist[cur, index[nid]]) + float(dist_to_goal.get(nid, math.inf))
        if cost < best_cost - 1e-12 or (abs(cost - best_cost) <= 1e-12
                                        and (best_id is None or nid < best_id)):
            best_id, best_cost = nid, cost
    return STOP_ID if best_id is None else best_id
