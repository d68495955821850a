"""Planar polygon primitives used for coverage bookkeeping.

Boolean operations are delegated to shapely (GEOS); this module owns the
value types, view-trapezoid construction, vertex snapping and the area
contract.  All values are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import shapely
from shapely.geometry import MultiPolygon
from shapely.geometry import Polygon as _ShPolygon
from shapely.geometry.base import BaseGeometry

EPS_GEOM = 1e-9
EPS_AREA = 1e-6

_EMPTY = _ShPolygon()


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y})")


Ring = tuple[tuple[float, float], ...]


def _signed_area(ring: Sequence[tuple[float, float]]) -> float:
    s = 0.0
    n = len(ring)
    for k in range(n):
        x0, y0 = ring[k]
        x1, y1 = ring[(k + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def _clean_ring(ring: Iterable[Sequence[float]]) -> list[tuple[float, float]]:
    """Snap to EPS_GEOM, drop repeated and collinear vertices."""
    pts: list[tuple[float, float]] = []
    for x, y in ring:
        p = (_snap(float(x)), _snap(float(y)))
        if not pts or abs(p[0] - pts[-1][0]) > EPS_GEOM or abs(p[1] - pts[-1][1]) > EPS_GEOM:
            pts.append(p)
    if len(pts) > 1 and abs(pts[0][0] - pts[-1][0]) <= EPS_GEOM and abs(pts[0][1] - pts[-1][1]) <= EPS_GEOM:
        pts.pop()
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        n = len(pts)
        for k in range(n):
            a, b, c = pts[k - 1], pts[k], pts[(k + 1) % n]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if abs(cross) <= EPS_GEOM * EPS_GEOM * 10:
                del pts[k]
                changed = True
                break
    return pts


def _snap(v: float) -> float:
    r = round(v / EPS_GEOM) * EPS_GEOM
    # keep exact binary values (grid coordinates) untouched
    return v if abs(r - v) < 1e-15 else r


@dataclass(frozen=True)
class Polygon:
    """Outer ring (CCW) followed by zero or more holes (CW)."""

    rings: tuple[Ring, ...]

    def __post_init__(self):
        if not self.rings:
            raise GeometryError("polygon needs an outer ring")
        fixed = []
        for k, ring in enumerate(self.rings):
            pts = tuple((float(x), float(y)) for x, y in ring)
            if len(pts) < 3:
                raise GeometryError(f"ring {k} has {len(pts)} vertices, need >= 3")
            for x, y in pts:
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise GeometryError(f"ring {k} has a non-finite vertex")
            a = _signed_area(pts)
            if (k == 0 and a < 0) or (k > 0 and a > 0):
                pts = pts[::-1]
            fixed.append(pts)
        if _signed_area(fixed[0]) <= 0:
            raise GeometryError("outer ring has zero area")
        object.__setattr__(self, "rings", tuple(fixed))

    @classmethod
    def from_vertices(cls, vertices: Iterable[Sequence[float]]) -> "Polygon":
        return cls((tuple((float(x), float(y)) for x, y in vertices),))

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "Polygon":
        return cls.from_vertices([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @property
    def outer(self) -> Ring:
        return self.rings[0]

    @property
    def holes(self) -> tuple[Ring, ...]:
        return self.rings[1:]

    def area(self) -> float:
        return _signed_area(self.rings[0]) + sum(_signed_area(h) for h in self.rings[1:])

    def to_shapely(self) -> _ShPolygon:
        return _ShPolygon(self.rings[0], self.rings[1:])


def _polygons_of(geom: BaseGeometry) -> list[_ShPolygon]:
    if geom.is_empty:
        return []
    if isinstance(geom, _ShPolygon):
        return [geom]
    if isinstance(geom, MultiPolygon):
        return list(geom.geoms)
    # GeometryCollection from a boolean op: keep areal parts only
    out: list[_ShPolygon] = []
    for g in getattr(geom, "geoms", ()):
        out.extend(_polygons_of(g))
    return out


@dataclass(frozen=True, eq=False)
class Region:
    """A set of interior-disjoint polygons.  The empty region is valid."""

    _geom: BaseGeometry = field(default=_EMPTY, repr=False)

    @classmethod
    def empty(cls) -> "Region":
        return cls(_EMPTY)

    @classmethod
    def from_polygons(cls, polygons: Iterable[Polygon]) -> "Region":
        shp = [p.to_shapely() for p in polygons if p.area() > EPS_AREA]
        if not shp:
            return cls.empty()
        return cls._from_geom(shapely.union_all(shp))

    @classmethod
    def of(cls, polygon: Polygon) -> "Region":
        return cls.from_polygons([polygon])

    @classmethod
    def _from_geom(cls, geom: BaseGeometry) -> "Region":
        parts = [p for p in _polygons_of(geom) if p.area > 0.0]
        if not parts:
            return cls(_EMPTY)
        if len(parts) == 1:
            return cls(parts[0])
        return cls(MultiPolygon(parts))

    @property
    def polygons(self) -> tuple[Polygon, ...]:
        out = []
        for p in _polygons_of(self._geom):
            rings = [_clean_ring(p.exterior.coords)] + [_clean_ring(r.coords) for r in p.interiors]
            rings = [r for r in rings if len(r) >= 3]
            if rings and _signed_area(rings[0]) != 0:
                out.append(Polygon(tuple(tuple(r) for r in rings)))
        return tuple(out)

    @property
    def is_empty(self) -> bool:
        return self._geom.is_empty

    def area(self) -> float:
        return area(self)

    def contains_point(self, x: float, y: float) -> bool:
        return bool(shapely.intersects_xy(self._geom, x, y))

    def bounds(self) -> tuple[float, float, float, float]:
        return tuple(self._geom.bounds) if not self.is_empty else (0.0, 0.0, 0.0, 0.0)


def _as_geom(r: Region | Polygon) -> BaseGeometry:
    return r.to_shapely() if isinstance(r, Polygon) else r._geom


def union(a: Region | Polygon, b: Region | Polygon) -> Region:
    ga, gb = _as_geom(a), _as_geom(b)
    if ga.is_empty:
        return Region._from_geom(gb)
    if gb.is_empty:
        return Region._from_geom(ga)
    g = shapely.set_precision(shapely.union(ga, gb), EPS_GEOM)
    return Region._from_geom(g)


def intersect(a: Region | Polygon, b: Region | Polygon) -> Region:
    ga, gb = _as_geom(a), _as_geom(b)
    if ga.is_empty or gb.is_empty:
        return Region.empty()
    g = shapely.set_precision(shapely.intersection(ga, gb), EPS_GEOM)
    return Region._from_geom(g)


def area(r: Region | Polygon) -> float:
    """Shoelace area; holes count negative.  Always >= 0."""
    if isinstance(r, Polygon):
        return r.area()
    return max(0.0, float(r._geom.area))


@dataclass(frozen=True)
class ViewFrustum2D:
    apex: Point2
    heading: float  # degrees, 0 = +x, counter-clockwise
    near: float
    far: float
    half_angle: float = 45.0

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise GeometryError(f"need 0 < near < far, got near={self.near} far={self.far}")
        if not (0 < self.half_angle < 90):
            raise GeometryError(f"half angle must be in (0, 90), got {self.half_angle}")
        if not math.isfinite(self.heading):
            raise GeometryError("heading must be finite")

    def contains(self, x: float, y: float, tol: float = EPS_GEOM) -> bool:
        """Closed membership test in the frustum's own frame."""
        h = math.radians(self.heading)
        c, s = _cos_sin(h)
        dx, dy = x - self.apex.x, y - self.apex.y
        fwd = dx * c + dy * s
        lat = -dx * s + dy * c
        if fwd < self.near - tol or fwd > self.far + tol:
            return False
        return abs(lat) <= fwd * math.tan(math.radians(self.half_angle)) + tol


def _cos_sin(rad: float) -> tuple[float, float]:
    c, s = math.cos(rad), math.sin(rad)
    # exact values at right angles keep grid-aligned trapezoids exact
    if abs(c) < 1e-15:
        c = 0.0
    if abs(s) < 1e-15:
        s = 0.0
    if abs(abs(c) - 1.0) < 1e-15:
        c = math.copysign(1.0, c)
    if abs(abs(s) - 1.0) < 1e-15:
        s = math.copysign(1.0, s)
    return c, s


def trapezoid(frustum: ViewFrustum2D) -> Polygon:
    """Isosceles trapezoid cut from the view wedge between near and far."""
    c, s = _cos_sin(math.radians(frustum.heading))
    t = math.tan(math.radians(frustum.half_angle))
    if abs(t - 1.0) < 1e-15:
        t = 1.0
    ax, ay = frustum.apex.x, frustum.apex.y
    verts = []
    # near-left, near-right, far-right, far-left is CCW for any heading
    for d, side in ((frustum.near, 1.0), (frustum.near, -1.0), (frustum.far, -1.0), (frustum.far, 1.0)):
        w = side * d * t
        verts.append((ax + d * c - w * s, ay + d * s + w * c))
    return Polygon.from_vertices(verts)
