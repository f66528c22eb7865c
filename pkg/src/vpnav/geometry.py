"""Small 2D geometry helpers shared by the world, raster, and parsing code."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_heading(theta: float) -> float:
    """Wrap an angle to [0, 2*pi).

    The fraction of a full turn is quantized to 1e-9 so that theta and
    theta + 2*pi produce bit-identical results despite rounding in the
    addition.
    """
    frac = (theta / TWO_PI) % 1.0
    q = int(round(frac * 1e9)) % 1_000_000_000
    return q / 1e9 * TWO_PI


@dataclass(frozen=True)
class AffineMap:
    """Invertible 2D affine transform ``world = A @ pixel + b``.

    Pixel coordinates are (col, row) floats where integer values address
    pixel centers. Used to carry world<->pixel metadata through the crop,
    resize, and rotation pipeline (compositions stay affine throughout).
    """

    a00: float
    a01: float
    a10: float
    a11: float
    b0: float
    b1: float

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        mat = np.array([[self.a00, self.a01], [self.a10, self.a11]])
        return pts @ mat.T + np.array([self.b0, self.b1])

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        return (
            self.a00 * x + self.a01 * y + self.b0,
            self.a10 * x + self.a11 * y + self.b1,
        )

    def inverse(self) -> "AffineMap":
        det = self.a00 * self.a11 - self.a01 * self.a10
        if abs(det) < 1e-15:
            raise ValueError("affine transform is not invertible")
        i00 = self.a11 / det
        i01 = -self.a01 / det
        i10 = -self.a10 / det
        i11 = self.a00 / det
        return AffineMap(
            i00, i01, i10, i11,
            -(i00 * self.b0 + i01 * self.b1),
            -(i10 * self.b0 + i11 * self.b1),
        )

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """Return self o inner (apply ``inner`` first)."""
        return AffineMap(
            self.a00 * inner.a00 + self.a01 * inner.a10,
            self.a00 * inner.a01 + self.a01 * inner.a11,
            self.a10 * inner.a00 + self.a11 * inner.a10,
            self.a10 * inner.a01 + self.a11 * inner.a11,
            self.a00 * inner.b0 + self.a01 * inner.b1 + self.b0,
            self.a10 * inner.b0 + self.a11 * inner.b1 + self.b1,
        )

    @property
    def max_scale(self) -> float:
        """Largest singular value; the effective meters-per-pixel for a
        world<-pixel map (exact for the axis-aligned/rotated maps we build)."""
        c0 = float(np.hypot(self.a00, self.a10))
        c1 = float(np.hypot(self.a01, self.a11))
        return max(c0, c1)

    @staticmethod
    def identity() -> "AffineMap":
        return AffineMap(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)

    @staticmethod
    def scale_offset(sx: float, sy: float, ox: float, oy: float) -> "AffineMap":
        return AffineMap(sx, 0.0, 0.0, sy, ox, oy)


def segments_cross(p0: np.ndarray, p1: np.ndarray, q0: np.ndarray, q1: np.ndarray,
                   eps: float = 1e-9) -> np.ndarray:
    """Vectorized proper-or-touching intersection test.

    ``p0``/``p1`` are (n, 2) sight segments, ``q0``/``q1`` are (m, 2) wall
    segments. Returns an (n, m) boolean array. Collinear overlap counts as
    an intersection; mere endpoint grazing within eps does not block.
    """
    p0 = np.asarray(p0, float)[:, None, :]
    p1 = np.asarray(p1, float)[:, None, :]
    q0 = np.asarray(q0, float)[None, :, :]
    q1 = np.asarray(q1, float)[None, :, :]

    d1 = p1 - p0
    d2 = q1 - q0
    denom = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    diff = q0 - p0

    t_num = diff[..., 0] * d2[..., 1] - diff[..., 1] * d2[..., 0]
    u_num = diff[..., 0] * d1[..., 1] - diff[..., 1] * d1[..., 0]

    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    nonparallel = np.abs(denom) > eps
    hit = nonparallel & (t > eps) & (t < 1 - eps) & (u > -eps) & (u < 1 + eps)

    # Collinear overlap: both cross products vanish and the projections of
    # the wall endpoints onto the sight segment overlap its interior.
    collinear = (~nonparallel) & (np.abs(t_num) <= eps) & (np.abs(u_num) <= eps)
    if np.any(collinear):
        len2 = np.maximum((d1 * d1).sum(-1), 1e-30)
        s0 = ((q0 - p0) * d1).sum(-1) / len2
        s1 = ((q1 - p0) * d1).sum(-1) / len2
        lo = np.minimum(s0, s1)
        hi = np.maximum(s0, s1)
        overlap = (hi > eps) & (lo < 1 - eps)
        hit |= collinear & overlap
    return hit


def polyline_arclengths(pts: np.ndarray) -> np.ndarray:
    """Cumulative arc length at each vertex of an (m, 2) polyline."""
    pts = np.asarray(pts, float)
    if len(pts) < 2:
        return np.zeros(len(pts))
    steps = np.hypot(*(pts[1:] - pts[:-1]).T)
    return np.concatenate([[0.0], np.cumsum(steps)])


def project_onto_polyline(points: np.ndarray, line: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project (n, 2) points onto an (m, 2) polyline.

    Returns (progress, deviation): arc length of the nearest point on the
    line and the perpendicular distance to it, both in the line's units.
    """
    points = np.atleast_2d(np.asarray(points, float))
    line = np.asarray(line, float)
    if len(line) == 1:
        d = np.hypot(*(points - line[0]).T)
        return np.zeros(len(points)), d
    a = line[:-1][None, :, :]
    b = line[1:][None, :, :]
    ab = b - a
    ab2 = np.maximum((ab * ab).sum(-1), 1e-30)
    t = ((points[:, None, :] - a) * ab).sum(-1) / ab2
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[..., None] * ab
    dist = np.hypot(*(points[:, None, :] - proj).transpose(2, 0, 1))
    seg = np.argmin(dist, axis=1)
    idx = np.arange(len(points))
    cum = polyline_arclengths(line)
    seglen = np.hypot(*(line[1:] - line[:-1]).T)
    progress = cum[seg] + t[idx, seg] * seglen[seg]
    return progress, dist[idx, seg]


def douglas_peucker(pts: np.ndarray, eps: float) -> np.ndarray:
    """Classic recursive polyline simplification with tolerance ``eps``."""
    pts = np.asarray(pts, float)
    if len(pts) < 3:
        return pts.copy()
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = pts[i], pts[j]
        ab = b - a
        ab2 = float(ab @ ab)
        chunk = pts[i + 1:j]
        if ab2 < 1e-30:
            d = np.hypot(*(chunk - a).T)
        else:
            t = np.clip((chunk - a) @ ab / ab2, 0.0, 1.0)
            proj = a + t[:, None] * ab
            d = np.hypot(*(chunk - proj).T)
        k = int(np.argmax(d))
        if d[k] > eps:
            keep[i + 1 + k] = True
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return pts[keep]
