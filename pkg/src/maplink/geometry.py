"""Polygon analytics: normalisation, resampling, oriented boxes, IoU.

All coordinates are image pixels with y pointing down, so a boundary that
runs clockwise on screen has a *positive* shoelace sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon as _ShapelyPolygon


class GeometryError(ValueError):
    pass


class Point(NamedTuple):
    x: float
    y: float


def as_points(poly) -> np.ndarray:
    """Coordinates of a Polygon, NormalizedPolygon or (m, 2) array-like as float64."""
    pts = getattr(poly, "points", poly)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GeometryError(f"expected (m, 2) coordinates, got shape {pts.shape}")
    return pts


def signed_area(poly) -> float:
    p = as_points(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def is_clockwise(poly) -> bool:
    return signed_area(poly) > 0


def orient_clockwise(pts: np.ndarray) -> np.ndarray:
    """Reverse traversal direction if needed, keeping the first vertex first."""
    pts = as_points(pts)
    if signed_area(pts) < 0:
        return np.concatenate([pts[:1], pts[:0:-1]])
    return pts


def rotate(poly, theta: float, origin=(0.0, 0.0)) -> np.ndarray:
    p = as_points(poly) - np.asarray(origin)
    c, s = math.cos(theta), math.sin(theta)
    return p @ np.array([[c, s], [-s, c]]) + np.asarray(origin)


# -- normalisation ------------------------------------------------------------

@dataclass(frozen=True)
class NormalizedPolygon:
    points: np.ndarray
    source_size: tuple[float, float]


def normalize(poly, tile=None, *, width: float | None = None, height: float | None = None) -> NormalizedPolygon:
    """Scale pixel coordinates into [0, 1] by the tile size, clamping overflow."""
    if tile is not None:
        width, height = tile.width, tile.height
    if not width or not height or width <= 0 or height <= 0:
        raise GeometryError(f"tile dimensions must be positive, got {width}x{height}")
    pts = as_points(poly) / np.array([width, height], dtype=np.float64)
    return NormalizedPolygon(np.clip(pts, 0.0, 1.0), (float(width), float(height)))


# -- resampling ---------------------------------------------------------------

def perimeter(poly) -> float:
    p = as_points(poly)
    return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())


def resample(poly, m: int = 16) -> np.ndarray:
    """``m`` points at equal arc length around the closed clockwise boundary,
    starting at the first vertex."""
    if m < 3:
        raise GeometryError("resample needs m >= 3")
    p = orient_clockwise(as_points(poly))
    closed = np.concatenate([p, p[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    total = seg.sum()
    if total <= 0:
        raise GeometryError("cannot resample a zero-perimeter polygon")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(m) * (total / m)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    # skip zero-length segments
    frac = np.divide(targets - cum[idx], seg[idx], out=np.zeros(m), where=seg[idx] > 0)
    return closed[idx] + frac[:, None] * (closed[idx + 1] - closed[idx])


# -- oriented boxes -----------------------------------------------------------

@dataclass(frozen=True)
class OrientedBox:
    center: Point
    width: float
    height: float
    angle: float

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = np.array([c, s]) * self.width / 2
        v = np.array([-s, c]) * self.height / 2
        ctr = np.array(self.center)
        return np.array([ctr - u - v, ctr + u - v, ctr + u + v, ctr - u + v])


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; collinear points dropped."""
    pts = np.unique(as_points(points), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for q in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    upper: list = []
    for q in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return np.array(lower[:-1] + upper[:-1])


def canonical_angle(theta: float) -> float:
    """Map an undirected line angle into (-pi/2, pi/2]."""
    a = math.fmod(theta, math.pi)
    if a <= -math.pi / 2:
        a += math.pi
    elif a > math.pi / 2:
        a -= math.pi
    return a


def _preferred(a: float, b: float) -> float:
    """Tie rule between two candidate long-side angles: smaller magnitude, then positive."""
    a, b = canonical_angle(a), canonical_angle(b)
    if abs(abs(a) - abs(b)) > 1e-12:
        return a if abs(a) < abs(b) else b
    return max(a, b)


def oriented_box(poly, rel_tol: float = 1e-9) -> OrientedBox:
    """Minimum-area enclosing rectangle by rotating calipers over hull edges.

    ``width`` is the long side and ``angle`` its direction in (-pi/2, pi/2].
    Collinear input yields a zero-height box along the segment.
    """
    hull = convex_hull(poly)
    if len(hull) == 1:
        return OrientedBox(Point(*hull[0]), 0.0, 0.0, 0.0)
    if len(hull) == 2:
        d = hull[1] - hull[0]
        ctr = hull.mean(axis=0)
        return OrientedBox(Point(*ctr), float(np.hypot(*d)), 0.0, canonical_angle(math.atan2(d[1], d[0])))

    best = None
    edges = np.roll(hull, -1, axis=0) - hull
    for e in edges:
        norm = math.hypot(e[0], e[1])
        if norm == 0:
            continue
        u = e / norm
        v = np.array([-u[1], u[0]])
        pu, pv = hull @ u, hull @ v
        lu, lv = pu.max() - pu.min(), pv.max() - pv.min()
        area = lu * lv
        if best is not None and area > best[0] * (1 - rel_tol):
            continue  # not strictly smaller: keep the first edge found
        ctr = u * (pu.max() + pu.min()) / 2 + v * (pv.max() + pv.min()) / 2
        best = (area, lu, lv, u, ctr)
    _, lu, lv, u, ctr = best
    theta_u = math.atan2(u[1], u[0])
    if abs(lu - lv) <= rel_tol * max(lu, lv):
        angle = _preferred(theta_u, theta_u + math.pi / 2)
        width, height = lu, lv
    elif lu > lv:
        angle, width, height = canonical_angle(theta_u), lu, lv
    else:
        angle, width, height = canonical_angle(theta_u + math.pi / 2), lv, lu
    return OrientedBox(Point(float(ctr[0]), float(ctr[1])), float(width), float(height), angle)


def min_rect_angle(poly) -> float:
    return oriented_box(poly).angle


# -- simple descriptors -------------------------------------------------------

def bbox(poly) -> tuple[float, float, float, float]:
    p = as_points(poly)
    x0, y0 = p.min(axis=0)
    x1, y1 = p.max(axis=0)
    return float(x0), float(y0), float(x1), float(y1)


def bbox_center(poly) -> Point:
    x0, y0, x1, y1 = bbox(poly)
    return Point((x0 + x1) / 2, (y0 + y1) / 2)


def first_last_distance(poly) -> float:
    p = as_points(poly)
    return float(np.hypot(*(p[-1] - p[0])))


def closest_indices(polys: Sequence) -> np.ndarray:
    """For every polygon, the index of the nearest other polygon by bbox-center
    distance (ties go to the lower index)."""
    if len(polys) < 2:
        raise GeometryError("closest polygon needs at least two polygons")
    centers = np.array([bbox_center(p) for p in polys])
    d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return np.argmin(d, axis=1)


def closest_polygon_index(polys: Sequence, i: int) -> int:
    return int(closest_indices(polys)[i])


# -- overlap and distance -----------------------------------------------------

def to_shapely(poly) -> _ShapelyPolygon:
    g = _ShapelyPolygon(as_points(poly))
    if not g.is_valid:
        g = shapely.make_valid(g)
    return g


def polygon_iou(a, b) -> float:
    ga, gb = to_shapely(a), to_shapely(b)
    union = ga.union(gb).area
    if union <= 0:
        return 0.0
    return float(min(1.0, ga.intersection(gb).area / union))


def box_distance(a: OrientedBox, b: OrientedBox) -> float:
    """Edge-to-edge distance between two oriented boxes (0 when they overlap)."""
    return float(to_shapely(a.corners()).distance(to_shapely(b.corners())))


def char_width(word) -> float:
    """Oriented-box width divided by the character count."""
    if not word.text:
        raise GeometryError(f"word {word.id} has no text; character width undefined")
    return oriented_box(word.polygon).width / len(word.text)
