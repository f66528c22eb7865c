"""Recover waypoint polylines from prompt rasters and register them to
world coordinates.

Parsing skeletonizes the trajectory ink, prunes arrowhead spurs, and
chains the centerline pixels from the start marker with a greedy
nearest-unvisited walk, then simplifies with Douglas-Peucker. Registration
either applies the raster's known transform or tests the four quarter-turn
hypotheses against the agent's start.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from skimage.morphology import skeletonize

from .geometry import AffineMap, douglas_peucker
from .promptmap import PromptRaster, _rot_map

INK_GAP_PX = 5.0
RELAXED_GAP_PX = 64.0
SIMPLIFY_EPS_PX = 2.0
SPUR_LENGTH_PX = 6
RESIDUE_RADIUS_PX = 8.0
MIN_MARKER_AREA_PX = 8
AMBIGUITY_RADIUS_M = 0.25


class NoInkError(ValueError):
    """No usable trajectory ink or ordering markers on the raster."""


class BrokenChainError(ValueError):
    """Trajectory ink exists but has gaps wider than the chain threshold."""


class AmbiguousRegistrationError(ValueError):
    """Two rotation hypotheses land too close together to separate."""


@dataclass(frozen=True)
class ParsedPrompt:
    polyline_px: np.ndarray          # (m, 2) float pixel points
    start_px: tuple[float, float]
    goal_px: tuple[float, float]
    confidence: float


@dataclass(frozen=True)
class Registration:
    mode: str                        # known_transform | unknown_rotation
    rotation_quarter_turns: int
    pixel_to_world: AffineMap


@dataclass(frozen=True)
class RegisteredPrompt:
    polyline_world: np.ndarray       # (m, 2) world meters
    registration: Registration
    confidence: float


def _dilate(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1)
    out = np.zeros_like(mask)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out |= padded[1 + dy:1 + dy + mask.shape[0], 1 + dx:1 + dx + mask.shape[1]]
    return out


def _neighbor_count(skel: np.ndarray) -> np.ndarray:
    padded = np.pad(skel.astype(np.int8), 1)
    total = np.zeros(skel.shape, dtype=np.int8)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            total += padded[1 + dy:1 + dy + skel.shape[0], 1 + dx:1 + dx + skel.shape[1]]
    return total


def _prune_spurs(skel: np.ndarray, max_len: int = SPUR_LENGTH_PX) -> np.ndarray:
    """Delete short branches that dead-end off a junction (arrowhead arms).

    Open line ends and isolated blobs are left alone so noise-fragmented
    strokes and waypoint discs survive.
    """
    skel = skel.copy()
    h, w = skel.shape
    counts = _neighbor_count(skel)
    for (y, x) in np.argwhere(skel & (counts == 1)):
        path = [(int(y), int(x))]
        prev: Optional[tuple[int, int]] = None
        cur = path[0]
        verdict = None
        while len(path) <= max_len:
            nbrs = [(yy, xx)
                    for yy in range(max(cur[0] - 1, 0), min(cur[0] + 2, h))
                    for xx in range(max(cur[1] - 1, 0), min(cur[1] + 2, w))
                    if (yy, xx) != cur and (yy, xx) != prev and skel[yy, xx]]
            if not nbrs:
                verdict = "keep"          # open end of a line or blob
                break
            if len(nbrs) > 1 or counts[nbrs[0]] >= 3:
                verdict = "spur"          # reached a junction
                break
            prev, cur = cur, nbrs[0]
            path.append(cur)
        if verdict == "spur":
            for (yy, xx) in path:
                skel[yy, xx] = False
            counts = _neighbor_count(skel)
    return skel


def _color_mask(pixels: np.ndarray, channel: int) -> np.ndarray:
    hi = pixels[:, :, channel] > 200
    lo = np.ones(pixels.shape[:2], dtype=bool)
    for c in range(3):
        if c != channel:
            lo &= pixels[:, :, c] < 60
    return hi & lo


def _marker_centroid(pixels: np.ndarray, channel: int) -> Optional[tuple[float, float]]:
    mask = _color_mask(pixels, channel)
    if int(mask.sum()) < MIN_MARKER_AREA_PX:
        return None
    ys, xs = np.nonzero(mask)
    return (float(xs.mean()), float(ys.mean()))


def _fit_direction(pts: np.ndarray) -> Optional[tuple[np.ndarray, np.ndarray]]:
    if len(pts) < 3:
        return None
    mean = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - mean)
    return mean, vt[0]


def _refine_corners(poly: np.ndarray, chain: np.ndarray) -> np.ndarray:
    """Sharpen interior vertices by intersecting line fits of the chain on
    either side; skeletonization rounds corners by about the stroke radius."""
    if len(poly) < 3 or len(chain) < 8:
        return poly
    out = poly.copy()
    for i in range(1, len(poly) - 1):
        j = int(np.argmin(((chain - poly[i]) ** 2).sum(axis=1)))
        before = chain[max(j - 9, 0):max(j - 2, 0)]
        after = chain[j + 3:j + 10]
        fa, fb = _fit_direction(before), _fit_direction(after)
        if fa is None or fb is None:
            continue
        (p1, d1), (p2, d2) = fa, fb
        cross = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(cross) < 0.25:   # near-collinear: intersection ill-conditioned
            continue
        t = ((p2[0] - p1[0]) * d2[1] - (p2[1] - p1[1]) * d2[0]) / cross
        corner = p1 + t * d1
        if float(np.hypot(*(corner - poly[i]))) <= 4.0:
            out[i] = corner
    return out


def extract_polyline(raster: PromptRaster, gap_px: float = INK_GAP_PX,
                     simplify_eps: float = SIMPLIFY_EPS_PX) -> ParsedPrompt:
    """Chain red trajectory ink from the green start disc to the blue goal
    disc and emit a simplified pixel polyline.

    Raises NoInkError when there is nothing to chain (style b, destroyed
    markers) and BrokenChainError when ink remains beyond ``gap_px`` of the
    traced chain; callers may retry with a relaxed gap for disc-style
    prompts.
    """
    start = _marker_centroid(raster.pixels, 1)
    goal = _marker_centroid(raster.pixels, 2)
    raw = _color_mask(raster.pixels, 0)
    skel = _prune_spurs(skeletonize(_dilate(raw)))
    coords = np.argwhere(skel)[:, ::-1].astype(np.int64)  # (n, 2) as (x, y)

    if len(coords) == 0:
        if start is not None and goal is not None:
            poly = np.array([start, goal], dtype=float)
            if np.hypot(*(poly[1] - poly[0])) < 1e-9:
                poly = poly[:1]
            return ParsedPrompt(poly, start, goal, 0.5)
        if start is not None or goal is not None:
            # single-tap prompt: one marker, no stroke
            point = goal if goal is not None else start
            return ParsedPrompt(np.array([point], dtype=float), point, point, 0.4)
        raise NoInkError("no trajectory ink or markers found")
    if start is None and goal is None:
        raise NoInkError("trajectory ink present but no ordering markers")

    reverse = False
    if start is not None:
        seed_ref = np.array(start)
        aim_ref = np.array(goal) if goal is not None else None
    else:
        reverse = True
        seed_ref = np.array(goal)
        aim_ref = None

    d2 = ((coords - seed_ref) ** 2).sum(axis=1)
    cur = int(np.argmin(d2))
    visited = np.zeros(len(coords), dtype=bool)
    chain = [coords[cur]]
    visited[cur] = True
    if aim_ref is not None:
        prev_dir = aim_ref - seed_ref
    else:
        prev_dir = np.zeros(2)

    gap2 = gap_px * gap_px
    while True:
        rel = coords - chain[-1]
        d2 = (rel ** 2).sum(axis=1)
        d2[visited] = np.iinfo(np.int64).max
        nxt = int(np.argmin(d2))
        if d2[nxt] > gap2:
            break
        # among equal-distance candidates prefer continuing straight
        ties = np.nonzero(d2 == d2[nxt])[0]
        if len(ties) > 1:
            dots = rel[ties] @ prev_dir
            nxt = int(ties[int(np.argmax(dots))])
        step = coords[nxt] - chain[-1]
        if step @ step > 0:
            prev_dir = step.astype(float)
        chain.append(coords[nxt])
        visited[nxt] = True

    stranded = 0
    leftover = coords[~visited]
    if len(leftover):
        pts = np.array(chain)
        d2 = ((leftover[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        stranded = int((d2 > RESIDUE_RADIUS_PX ** 2).sum())
        if stranded and gap_px <= INK_GAP_PX:
            raise BrokenChainError(
                f"ink gap exceeds {gap_px:.0f}px with {stranded} pixels stranded")

    chain_arr = np.array(chain, dtype=float)
    poly = chain_arr[::-1] if reverse else chain_arr
    head = [] if start is None else [np.array(start)]
    tail = [] if goal is None else [np.array(goal)]
    poly = np.vstack(head + [poly] + tail)
    poly = douglas_peucker(poly, simplify_eps)
    if gap_px <= INK_GAP_PX:
        poly = _refine_corners(poly, chain_arr[::-1] if reverse else chain_arr)
    keep = np.ones(len(poly), dtype=bool)
    keep[1:] = np.hypot(*(poly[1:] - poly[:-1]).T) > 1e-9
    poly = poly[keep]

    confidence = 1.0
    if start is None:
        confidence -= 0.3
    if goal is None:
        confidence -= 0.2
    if gap_px > INK_GAP_PX:
        confidence -= 0.3
    if stranded:
        confidence -= min(0.2, 0.02 * stranded)
    start_out = tuple(poly[0]) if start is None else start
    goal_out = tuple(poly[-1]) if goal is None else goal
    return ParsedPrompt(poly, start_out, goal_out, max(confidence, 0.05))


def rotation_hypotheses(raster: PromptRaster) -> list[AffineMap]:
    """Candidate pixel->world maps for the four unknown quarter turns."""
    base = raster.pre_rotation_affine()
    n = raster.pixels.shape[0]
    hyps = []
    aff = base
    for _ in range(4):
        hyps.append(aff)
        aff = aff.compose(_rot_map(n))
    return hyps


def register(parsed: ParsedPrompt, raster: PromptRaster,
             agent_start_world: Optional[tuple[float, float]] = None,
             mode: str = "known_transform") -> RegisteredPrompt:
    """Map a parsed polyline into world coordinates.

    ``known_transform`` applies the raster's full metadata. With
    ``unknown_rotation`` the quarter-turn is recovered by testing which
    hypothesis puts the parsed start nearest the agent's start position;
    contending hypotheses closer than 0.25 m are rejected as ambiguous.
    """
    if mode == "known_transform":
        reg = Registration(mode, raster.rotation_quarter_turns, raster.affine)
        return RegisteredPrompt(raster.affine.apply(parsed.polyline_px), reg, parsed.confidence)
    if mode != "unknown_rotation":
        raise ValueError(f"unknown registration mode: {mode}")
    if agent_start_world is None:
        raise ValueError("unknown_rotation registration needs agent_start_world")

    hyps = rotation_hypotheses(raster)
    pts = [np.array(h.apply_point(*parsed.start_px)) for h in hyps]
    ref = np.array(agent_start_world, dtype=float)
    dists = [float(np.hypot(*(p - ref))) for p in pts]
    order = sorted(range(4), key=lambda j: (dists[j], j))
    best, second = order[0], order[1]
    if float(np.hypot(*(pts[best] - pts[second]))) < AMBIGUITY_RADIUS_M:
        raise AmbiguousRegistrationError(
            f"rotation hypotheses {best} and {second} are {dists[best]:.2f} m "
            f"vs {dists[second]:.2f} m from the agent start")
    reg = Registration(mode, best, hyps[best])
    return RegisteredPrompt(hyps[best].apply(parsed.polyline_px), reg, parsed.confidence)


def map_center_world(raster: PromptRaster) -> tuple[float, float]:
    """World position of the raster center; rotation-invariant, so usable
    as a goal-region guess even when the quarter turn is unknown."""
    h, w = raster.pixels.shape[:2]
    base = raster.pre_rotation_affine()
    return base.apply_point((w - 1) / 2.0, (h - 1) / 2.0)
