"""Top-view raster maps and the visual-prompt construction pipeline.

Rendering happens at a fixed base resolution; a drawn trajectory is then
center-cropped to a square of max(bbox) + 60 px, tightened to the content
bounding box, and resampled to 224x224 with nearest-neighbor so ink colors
stay exact. Every raster carries an invertible pixel->world affine so the
full overlay->crop->resize->rotate chain stays registered.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .geometry import AffineMap
from .world import Scene

BASE_RES_M_PER_PX = 0.05
OUTPUT_SIZE = 224
CROP_MARGIN_PX = 60

INK_COLOR = (255, 0, 0)
START_COLOR = (0, 255, 0)
GOAL_COLOR = (0, 0, 255)
GLYPH_COLOR = (255, 150, 0)   # annotation, deliberately outside the ink channel
WALL_COLOR = (0, 0, 0)
FREE_COLOR = (255, 255, 255)

LINE_WIDTH_PX = 3
ARROW_ARM_PX = 4
DISC_RADIUS_PX = 4
WALL_WIDTH_PX = 2
GLYPH_OFFSET_PX = (6, -12)

GOAL_SEGMENT_ID = 1_000_000

_TINTS = [(255, 244, 235), (238, 248, 255), (240, 255, 240), (255, 240, 245),
          (245, 245, 230), (235, 255, 250), (250, 240, 255), (255, 250, 230)]

# 3x5 digit bitmaps for the style-(d) step-number glyphs.
_DIGITS = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
}


class PromptStyle(str, Enum):
    FULL_MAP = "a"          # trajectory on the uncropped map, no crop step
    MAP_ONLY = "b"          # cropped map without any trajectory ink
    WAYPOINT_DISCS = "c"    # waypoint discs, no connecting lines
    LINES_AND_TEXT = "d"    # lines + arrows + step-number glyphs
    LINES = "e"             # lines + arrows only


class NoiseKind(str, Enum):
    NONE = "none"
    SALT_PEPPER = "salt_pepper"
    DROP_FIRST_STEP = "drop_first_step"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = NoiseKind.NONE
    ratio: float = 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "ratio": self.ratio}

    @staticmethod
    def from_dict(doc: dict) -> "NoiseSpec":
        return NoiseSpec(NoiseKind(doc["kind"]), doc["ratio"])


class RasterError(ValueError):
    pass


@dataclass
class PromptRaster:
    """8-bit RGB top-view raster plus registration metadata.

    ``affine`` maps (col, row) pixel coordinates to world meters and
    reflects every crop/resize/rotation applied so far. ``segment_ids``
    tags ink pixels with the trajectory step that drew them (start marker
    counts as step 0, the goal marker gets GOAL_SEGMENT_ID).
    """

    pixels: np.ndarray
    affine: AffineMap
    floor_index: int
    trajectory_mask: np.ndarray
    segment_ids: np.ndarray
    base_pixels: np.ndarray
    style: Optional[PromptStyle] = None
    rotation_quarter_turns: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    meta: dict = field(default_factory=dict)

    @property
    def meters_per_pixel(self) -> float:
        return self.affine.max_scale

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    def world_to_pixel(self, pts: np.ndarray) -> np.ndarray:
        return self.affine.inverse().apply(pts)

    def pixel_to_world(self, pts: np.ndarray) -> np.ndarray:
        return self.affine.apply(pts)

    def pre_rotation_affine(self) -> AffineMap:
        """Affine of the raster before its quarter-turn rotation; the part
        of the metadata assumed known under unknown-rotation registration."""
        aff = self.affine
        n = self.pixels.shape[0]
        for _ in range(self.rotation_quarter_turns % 4):
            aff = aff.compose(_rot_map(n).inverse())
        return aff

    def copy(self) -> "PromptRaster":
        return replace(
            self,
            pixels=self.pixels.copy(),
            trajectory_mask=self.trajectory_mask.copy(),
            segment_ids=self.segment_ids.copy(),
            base_pixels=self.base_pixels.copy(),
            meta=dict(self.meta),
        )


def _rot_map(n: int) -> AffineMap:
    # output->input pixel map of one counter-clockwise np.rot90 on an n x n frame
    return AffineMap(0.0, -1.0, 1.0, 0.0, float(n - 1), 0.0)


# --------------------------------------------------------------------------
# numpy rasterization primitives (exact colors, windowed masks)

def _paint(raster: PromptRaster, mask: np.ndarray, color: tuple[int, int, int],
           seg_id: Optional[int]) -> None:
    raster.pixels[mask] = color
    if seg_id is not None:
        raster.trajectory_mask |= mask
        raster.segment_ids[mask] = seg_id


def _line_mask(shape: tuple[int, int], p0: np.ndarray, p1: np.ndarray, width: float) -> np.ndarray:
    h, w = shape
    r = width / 2.0
    x0 = int(math.floor(min(p0[0], p1[0]) - r - 1))
    x1 = int(math.ceil(max(p0[0], p1[0]) + r + 1))
    y0 = int(math.floor(min(p0[1], p1[1]) - r - 1))
    y1 = int(math.ceil(max(p0[1], p1[1]) + r + 1))
    x0, x1 = max(x0, 0), min(x1, w - 1)
    y0, y1 = max(y0, 0), min(y1, h - 1)
    mask = np.zeros(shape, dtype=bool)
    if x0 > x1 or y0 > y1:
        return mask
    gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    d = p1 - p0
    l2 = float(d @ d)
    if l2 < 1e-12:
        dist = np.hypot(gx - p0[0], gy - p0[1])
    else:
        t = np.clip(((gx - p0[0]) * d[0] + (gy - p0[1]) * d[1]) / l2, 0.0, 1.0)
        dist = np.hypot(gx - (p0[0] + t * d[0]), gy - (p0[1] + t * d[1]))
    mask[y0:y1 + 1, x0:x1 + 1] = dist <= r
    return mask


def _disc_mask(shape: tuple[int, int], center: np.ndarray, radius: float) -> np.ndarray:
    return _line_mask(shape, center, center, 2 * radius)


def _glyph_mask(shape: tuple[int, int], text: str, topleft: tuple[int, int], scale: int = 2) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    cx, cy = topleft
    for ch in text:
        rows = _DIGITS.get(ch)
        if rows is None:
            continue
        for j, row in enumerate(rows):
            for i, bit in enumerate(row):
                if bit == "1":
                    y0, x0 = cy + j * scale, cx + i * scale
                    mask[max(y0, 0):max(y0 + scale, 0), max(x0, 0):max(x0 + scale, 0)] = True
        cx += 4 * scale
    return mask[:shape[0], :shape[1]]


# --------------------------------------------------------------------------
# spec operations

def render_topview(scene: Scene, floor_index: int, tint: bool = False) -> PromptRaster:
    """Uncropped top view of one floor: free space white, walls and
    out-of-room area black, transform metadata populated."""
    if not 0 <= floor_index < len(scene.floors):
        raise RasterError(f"floor {floor_index} does not exist")
    floor = scene.floors[floor_index]
    x0, y0, x1, y1 = floor.bounds
    pad = 0.5
    res = BASE_RES_M_PER_PX
    w = int(math.ceil((x1 - x0 + 2 * pad) / res))
    h = int(math.ceil((y1 - y0 + 2 * pad) / res))
    ox, oy = x0 - pad, y0 - pad
    affine = AffineMap.scale_offset(res, res, ox + 0.5 * res, oy + 0.5 * res)
    inv = affine.inverse()

    pixels = np.zeros((h, w, 3), dtype=np.uint8)
    for ri, room in enumerate(floor.rooms):
        c0, r0 = inv.apply_point(room.x0, room.y0)
        c1, r1 = inv.apply_point(room.x1, room.y1)
        color = _TINTS[room.room_class % len(_TINTS)] if tint else FREE_COLOR
        pixels[int(round(r0)):int(round(r1)) + 1, int(round(c0)):int(round(c1)) + 1] = color
    raster = PromptRaster(
        pixels=pixels,
        affine=affine,
        floor_index=floor_index,
        trajectory_mask=np.zeros((h, w), dtype=bool),
        segment_ids=np.full((h, w), -1, dtype=np.int32),
        base_pixels=pixels,  # replaced below once walls are in
    )
    for seg in floor.wall_segments():
        p0 = np.array(inv.apply_point(seg[0], seg[1]))
        p1 = np.array(inv.apply_point(seg[2], seg[3]))
        _paint(raster, _line_mask((h, w), p0, p1, WALL_WIDTH_PX), WALL_COLOR, None)
    raster.base_pixels = raster.pixels.copy()
    return raster


def overlay_trajectory(raster: PromptRaster, gt_path_world: Sequence[tuple[float, float]],
                       style: PromptStyle) -> PromptRaster:
    """Draw the visual prompt for one floor's waypoint sequence.

    Styles: (a) full-map lines+arrows, (b) no ink, (c) waypoint discs only,
    (d) lines+arrows+step glyphs, (e) lines+arrows. The start waypoint gets
    a green disc and the last one a blue disc in every inked style.
    """
    out = raster.copy()
    out.style = style
    shape = out.shape
    pts = out.world_to_pixel(np.asarray(gt_path_world, dtype=float))
    h, w = shape
    if np.any((pts[:, 0] < 0) | (pts[:, 0] > w - 1) | (pts[:, 1] < 0) | (pts[:, 1] > h - 1)):
        raise RasterError("path-off-raster: a projected waypoint lies outside the frame")
    c0 = np.floor(pts.min(axis=0)).astype(int)
    c1 = np.ceil(pts.max(axis=0)).astype(int)
    out.meta["waypoint_bbox_px"] = [int(c0[0]), int(c0[1]), int(c1[0]), int(c1[1])]
    if style == PromptStyle.MAP_ONLY:
        return out

    if style == PromptStyle.WAYPOINT_DISCS:
        for j in range(1, len(pts) - 1):
            _paint(out, _disc_mask(shape, pts[j], DISC_RADIUS_PX), INK_COLOR, j)
    else:
        for j in range(len(pts) - 1):
            _paint(out, _line_mask(shape, pts[j], pts[j + 1], LINE_WIDTH_PX), INK_COLOR, j)
            _paint(out, _arrow_mask(shape, pts[j], pts[j + 1]), INK_COLOR, j)

    if style == PromptStyle.LINES_AND_TEXT:
        for j in range(1, len(pts)):
            tl = (int(round(pts[j][0])) + GLYPH_OFFSET_PX[0],
                  int(round(pts[j][1])) + GLYPH_OFFSET_PX[1])
            gm = _glyph_mask(shape, str(j), tl)
            out.pixels[gm] = GLYPH_COLOR   # annotation: not trajectory ink

    _paint(out, _disc_mask(shape, pts[0], DISC_RADIUS_PX), START_COLOR, 0)
    _paint(out, _disc_mask(shape, pts[-1], DISC_RADIUS_PX), GOAL_COLOR, GOAL_SEGMENT_ID)
    return out


def _arrow_mask(shape: tuple[int, int], p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    d = p1 - p0
    norm = float(np.hypot(*d))
    if norm < 1e-9:
        return np.zeros(shape, dtype=bool)
    u = d / norm
    tip = p0 + 0.58 * d
    ang = math.atan2(u[1], u[0])
    mask = np.zeros(shape, dtype=bool)
    for da in (math.radians(152), -math.radians(152)):
        arm = tip + ARROW_ARM_PX * np.array([math.cos(ang + da), math.sin(ang + da)])
        mask |= _line_mask(shape, tip, arm, 2.0)
    return mask


def crop_pipeline(raster: PromptRaster, traj_bbox_px: Optional[Sequence[int]] = None) -> PromptRaster:
    """Steps (c) and (d) of prompt construction plus the 224 resize.

    (c): square crop of side max(bbox_w, bbox_h) + 60 centered on the
    trajectory bounding box; (d): tighten to the bounding box of non-zero
    pixels; finally nearest-neighbor resample to 224x224.
    """
    out = raster.copy()
    if traj_bbox_px is None:
        if out.style == PromptStyle.MAP_ONLY:
            traj_bbox_px = out.meta.get("waypoint_bbox_px")
        elif out.trajectory_mask.any():
            ys, xs = np.nonzero(out.trajectory_mask)
            traj_bbox_px = [int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())]
    if traj_bbox_px is None:
        raise RasterError("no trajectory ink to crop around")
    bx0, by0, bx1, by1 = traj_bbox_px
    bw, bh = bx1 - bx0 + 1, by1 - by0 + 1
    side = max(bw, bh) + CROP_MARGIN_PX
    out.meta["step_c_side"] = int(side)
    cx, cy = (bx0 + bx1) // 2, (by0 + by1) // 2
    x0 = cx - side // 2
    y0 = cy - side // 2
    out = _crop(out, x0, y0, side, side)

    nz = np.nonzero(out.pixels.any(axis=2))
    if len(nz[0]) == 0:
        raise RasterError("empty-raster: all pixels zero")
    y0, y1 = int(nz[0].min()), int(nz[0].max())
    x0, x1 = int(nz[1].min()), int(nz[1].max())
    out = _crop(out, x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    return _resize(out, OUTPUT_SIZE, OUTPUT_SIZE)


def finalize_fullmap(raster: PromptRaster) -> PromptRaster:
    """Style-(a) finalization: no crop, just the 224 resize."""
    return _resize(raster.copy(), OUTPUT_SIZE, OUTPUT_SIZE)


def _crop(raster: PromptRaster, x0: int, y0: int, w: int, h: int) -> PromptRaster:
    src_h, src_w = raster.shape
    pixels = np.zeros((h, w, 3), dtype=np.uint8)
    base = np.zeros((h, w, 3), dtype=np.uint8)
    mask = np.zeros((h, w), dtype=bool)
    segs = np.full((h, w), -1, dtype=np.int32)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + w, src_w), min(y0 + h, src_h)
    if sx1 > sx0 and sy1 > sy0:
        dx, dy = sx0 - x0, sy0 - y0
        pixels[dy:dy + sy1 - sy0, dx:dx + sx1 - sx0] = raster.pixels[sy0:sy1, sx0:sx1]
        base[dy:dy + sy1 - sy0, dx:dx + sx1 - sx0] = raster.base_pixels[sy0:sy1, sx0:sx1]
        mask[dy:dy + sy1 - sy0, dx:dx + sx1 - sx0] = raster.trajectory_mask[sy0:sy1, sx0:sx1]
        segs[dy:dy + sy1 - sy0, dx:dx + sx1 - sx0] = raster.segment_ids[sy0:sy1, sx0:sx1]
    out = replace(raster, pixels=pixels, base_pixels=base, trajectory_mask=mask,
                  segment_ids=segs, meta=dict(raster.meta))
    out.affine = raster.affine.compose(AffineMap(1.0, 0.0, 0.0, 1.0, float(x0), float(y0)))
    return out


def _resize(raster: PromptRaster, out_w: int, out_h: int) -> PromptRaster:
    src_h, src_w = raster.shape
    fx, fy = src_w / out_w, src_h / out_h
    xi = np.minimum((np.arange(out_w) + 0.5) * fx, src_w - 1e-9).astype(int)
    yi = np.minimum((np.arange(out_h) + 0.5) * fy, src_h - 1e-9).astype(int)
    out = replace(
        raster,
        pixels=raster.pixels[np.ix_(yi, xi)],
        base_pixels=raster.base_pixels[np.ix_(yi, xi)],
        trajectory_mask=raster.trajectory_mask[np.ix_(yi, xi)],
        segment_ids=raster.segment_ids[np.ix_(yi, xi)],
        meta=dict(raster.meta),
    )
    out.affine = raster.affine.compose(
        AffineMap(fx, 0.0, 0.0, fy, 0.5 * fx - 0.5, 0.5 * fy - 0.5))
    return out


def rotate_prompt(raster: PromptRaster, k: int) -> PromptRaster:
    """Rotate a finalized square raster by k quarter turns (ccw)."""
    k = k % 4
    h, w = raster.shape
    if h != w:
        raise RasterError("rotate_prompt requires a square (finalized) raster")
    if k == 0:
        return raster.copy()
    out = replace(
        raster,
        pixels=np.ascontiguousarray(np.rot90(raster.pixels, k)),
        base_pixels=np.ascontiguousarray(np.rot90(raster.base_pixels, k)),
        trajectory_mask=np.ascontiguousarray(np.rot90(raster.trajectory_mask, k)),
        segment_ids=np.ascontiguousarray(np.rot90(raster.segment_ids, k)),
        meta=dict(raster.meta),
    )
    aff = raster.affine
    for _ in range(k):
        aff = aff.compose(_rot_map(w))
    out.affine = aff
    out.rotation_quarter_turns = (raster.rotation_quarter_turns + k) % 4
    return out


def apply_noise(raster: PromptRaster, spec: NoiseSpec, rng: np.random.Generator) -> PromptRaster:
    """Perturb a prompt: exact-count salt-and-pepper, or erase the ink of
    the first trajectory step back to the underlying map."""
    out = raster.copy()
    out.noise = spec
    if spec.kind == NoiseKind.NONE:
        return out
    h, w = out.shape
    if spec.kind == NoiseKind.SALT_PEPPER:
        count = int(round(spec.ratio * h * w))
        if count == 0:
            return out
        flat = rng.choice(h * w, size=count, replace=False)
        values = rng.integers(0, 2, size=count).astype(np.uint8) * 255
        ys, xs = np.divmod(flat, w)
        out.pixels[ys, xs] = values[:, None]
        out.meta["noise_pixel_count"] = count
        return out
    if spec.kind == NoiseKind.DROP_FIRST_STEP:
        drop = out.segment_ids == 0
        out.pixels[drop] = out.base_pixels[drop]
        out.trajectory_mask[drop] = False
        out.segment_ids[drop] = -1
        return out
    raise RasterError(f"unknown noise kind: {spec.kind}")


# --------------------------------------------------------------------------
# persistence

def raster_meta_dict(raster: PromptRaster) -> dict:
    a = raster.affine
    return {
        "affine": [a.a00, a.a01, a.a10, a.a11, a.b0, a.b1],
        "floor_index": raster.floor_index,
        "meters_per_pixel": raster.meters_per_pixel,
        "rotation_quarter_turns": raster.rotation_quarter_turns,
        "style": raster.style.value if raster.style else None,
        "noise": raster.noise.to_dict(),
        "step_c_side": raster.meta.get("step_c_side"),
    }


def save_raster(raster: PromptRaster, png_path: str | Path) -> None:
    png_path = Path(png_path)
    Image.fromarray(raster.pixels, mode="RGB").save(png_path, format="PNG")
    meta = raster_meta_dict(raster)
    png_path.with_suffix(".meta.json").write_text(
        json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")


def load_raster(png_path: str | Path) -> PromptRaster:
    png_path = Path(png_path)
    pixels = np.asarray(Image.open(png_path).convert("RGB"))
    meta = json.loads(png_path.with_suffix(".meta.json").read_text(encoding="utf-8"))
    a = meta["affine"]
    h, w = pixels.shape[:2]
    return PromptRaster(
        pixels=pixels.copy(),
        affine=AffineMap(*a),
        floor_index=meta["floor_index"],
        trajectory_mask=np.zeros((h, w), dtype=bool),
        segment_ids=np.full((h, w), -1, dtype=np.int32),
        base_pixels=pixels.copy(),
        style=PromptStyle(meta["style"]) if meta.get("style") else None,
        rotation_quarter_turns=meta.get("rotation_quarter_turns", 0),
        noise=NoiseSpec.from_dict(meta["noise"]),
        meta={k: v for k, v in meta.items() if k == "step_c_side" and v is not None},
    )
