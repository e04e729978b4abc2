"""2D drawing primitives: lengths, bounding boxes, affine maps, point sampling.

Primitive kinds are fixed to lines, arcs, circles and polyline segments.
Angles are radians, counter-clockwise, normalized to [0, 2*pi). All values
are immutable; every operation returns a new value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

TAU = 2.0 * math.pi

# Absolute comparison tolerance in drawing units.
ABS_TOL = 1e-9

Point = tuple[float, float]


class GeometryError(ValueError):
    pass


class NonConformalOnCurve(GeometryError):
    """Transform with non-uniform scale applied to an arc or circle."""


class Kind(str, Enum):
    LINE = "line"
    ARC = "arc"
    CIRCLE = "circle"
    POLYSEG = "polyseg"


def normalize_angle(a: float) -> float:
    """Map an angle to [0, 2*pi)."""
    a = math.fmod(a, TAU)
    if a < 0.0:
        a += TAU
    return 0.0 if a >= TAU else a


@dataclass(frozen=True)
class Primitive:
    kind: Kind
    source_id: str
    p0: Point | None = None
    p1: Point | None = None
    center: Point | None = None
    radius: float | None = None
    start_angle: float | None = None
    end_angle: float | None = None

    def __post_init__(self):
        if self.kind in (Kind.LINE, Kind.POLYSEG):
            if self.p0 is None or self.p1 is None:
                raise GeometryError(f"{self.kind.value} needs two endpoints")
            if self.p0 == self.p1:
                raise GeometryError(f"{self.kind.value} endpoints must be distinct")
        elif self.kind is Kind.CIRCLE:
            if self.center is None or self.radius is None:
                raise GeometryError("circle needs center and radius")
            if not self.radius > 0.0:
                raise GeometryError("circle radius must be positive")
        elif self.kind is Kind.ARC:
            if self.center is None or self.radius is None:
                raise GeometryError("arc needs center and radius")
            if not self.radius > 0.0:
                raise GeometryError("arc radius must be positive")
            if self.start_angle is None or self.end_angle is None:
                raise GeometryError("arc needs start and end angles")
            a0 = normalize_angle(self.start_angle)
            a1 = normalize_angle(self.end_angle)
            if a0 == a1:
                raise GeometryError("arc sweep must be nonzero; use a circle for full turns")
            object.__setattr__(self, "start_angle", a0)
            object.__setattr__(self, "end_angle", a1)

    @property
    def sweep(self) -> float:
        """Counter-clockwise angular extent of an arc, in (0, 2*pi)."""
        if self.kind is not Kind.ARC:
            raise GeometryError("sweep is defined for arcs only")
        s = math.fmod(self.end_angle - self.start_angle, TAU)
        if s <= 0.0:
            s += TAU
        return s

    def with_source_id(self, source_id: str) -> "Primitive":
        return replace(self, source_id=source_id)


def line(p0: Point, p1: Point, source_id: str) -> Primitive:
    return Primitive(Kind.LINE, source_id, p0=p0, p1=p1)


def polyseg(p0: Point, p1: Point, source_id: str) -> Primitive:
    return Primitive(Kind.POLYSEG, source_id, p0=p0, p1=p1)


def arc(center: Point, radius: float, start_angle: float, end_angle: float,
        source_id: str) -> Primitive:
    return Primitive(Kind.ARC, source_id, center=center, radius=radius,
                     start_angle=start_angle, end_angle=end_angle)


def circle(center: Point, radius: float, source_id: str) -> Primitive:
    return Primitive(Kind.CIRCLE, source_id, center=center, radius=radius)


@dataclass(frozen=True)
class Rect:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise GeometryError("rect min must not exceed max")

    def expand(self, margin: float) -> "Rect":
        return Rect(self.min_x - margin, self.min_y - margin,
                    self.max_x + margin, self.max_y + margin)

    def union(self, other: "Rect") -> "Rect":
        return Rect(min(self.min_x, other.min_x), min(self.min_y, other.min_y),
                    max(self.max_x, other.max_x), max(self.max_y, other.max_y))

    def contains_point(self, p: Point) -> bool:
        return (self.min_x <= p[0] <= self.max_x
                and self.min_y <= p[1] <= self.max_y)

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y


@dataclass(frozen=True)
class Affine:
    """Row-major 2x3 matrix: (x, y) -> (a*x + b*y + tx, c*x + d*y + ty)."""

    a: float
    b: float
    tx: float
    c: float
    d: float
    ty: float

    @classmethod
    def identity(cls) -> "Affine":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Affine":
        return cls(1.0, 0.0, dx, 0.0, 1.0, dy)

    @classmethod
    def rotation(cls, theta: float) -> "Affine":
        c, s = math.cos(theta), math.sin(theta)
        return cls(c, -s, 0.0, s, c, 0.0)

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> "Affine":
        if sy is None:
            sy = sx
        return cls(sx, 0.0, 0.0, 0.0, sy, 0.0)

    def determinant(self) -> float:
        return self.a * self.d - self.b * self.c

    def is_invertible(self) -> bool:
        return self.determinant() != 0.0

    def is_conformal(self, rel_tol: float = 1e-12) -> bool:
        """True when the linear part is a similarity (uniform scale + rotation,
        reflections included)."""
        n1 = self.a * self.a + self.c * self.c
        n2 = self.b * self.b + self.d * self.d
        dot = self.a * self.b + self.c * self.d
        scale = max(n1, n2)
        if scale == 0.0:
            return False
        return abs(n1 - n2) <= rel_tol * scale and abs(dot) <= rel_tol * scale

    def uniform_scale(self) -> float:
        return math.sqrt(abs(self.determinant()))

    def apply(self, p: Point) -> Point:
        x, y = p
        return (self.a * x + self.b * y + self.tx,
                self.c * x + self.d * y + self.ty)

    def apply_vector(self, v: Point) -> Point:
        x, y = v
        return (self.a * x + self.b * y, self.c * x + self.d * y)

    def then(self, outer: "Affine") -> "Affine":
        """Composition: (self.then(outer))(p) == outer(self(p))."""
        return Affine(
            outer.a * self.a + outer.b * self.c,
            outer.a * self.b + outer.b * self.d,
            outer.a * self.tx + outer.b * self.ty + outer.tx,
            outer.c * self.a + outer.d * self.c,
            outer.c * self.b + outer.d * self.d,
            outer.c * self.tx + outer.d * self.ty + outer.ty,
        )


def primitive_length(p: Primitive) -> float:
    if p.kind in (Kind.LINE, Kind.POLYSEG):
        return math.hypot(p.p1[0] - p.p0[0], p.p1[1] - p.p0[1])
    if p.kind is Kind.CIRCLE:
        return TAU * p.radius
    return p.radius * p.sweep


def _angle_in_sweep(phi: float, start: float, sweep: float) -> bool:
    return (phi - start) % TAU <= sweep


def arc_point(center: Point, radius: float, angle: float) -> Point:
    return (center[0] + radius * math.cos(angle),
            center[1] + radius * math.sin(angle))


def primitive_aabb(p: Primitive) -> Rect:
    if p.kind in (Kind.LINE, Kind.POLYSEG):
        return Rect(min(p.p0[0], p.p1[0]), min(p.p0[1], p.p1[1]),
                    max(p.p0[0], p.p1[0]), max(p.p0[1], p.p1[1]))
    if p.kind is Kind.CIRCLE:
        cx, cy = p.center
        return Rect(cx - p.radius, cy - p.radius, cx + p.radius, cy + p.radius)
    # Arc: endpoints plus any axis extremum inside the angular span.
    pts = [arc_point(p.center, p.radius, p.start_angle),
           arc_point(p.center, p.radius, p.end_angle)]
    sweep = p.sweep
    for k in range(4):
        phi = k * (TAU / 4.0)
        if _angle_in_sweep(phi, p.start_angle, sweep):
            pts.append(arc_point(p.center, p.radius, phi))
    xs = [q[0] for q in pts]
    ys = [q[1] for q in pts]
    return Rect(min(xs), min(ys), max(xs), max(ys))


def apply_transform(p: Primitive, t: Affine, derived_id: str | None = None) -> Primitive:
    """Map a primitive through an affine transform.

    The result carries a derived source id; pass `derived_id` to control it.
    Arcs and circles reject non-conformal (non-uniform-scale) transforms.
    """
    if not t.is_invertible():
        raise GeometryError("transform must be invertible")
    new_id = derived_id if derived_id is not None else p.source_id + "~t"
    if p.kind in (Kind.LINE, Kind.POLYSEG):
        return Primitive(p.kind, new_id, p0=t.apply(p.p0), p1=t.apply(p.p1))
    if not t.is_conformal():
        raise NonConformalOnCurve(
            f"non-uniform scale on {p.kind.value} {p.source_id!r}")
    new_center = t.apply(p.center)
    new_radius = p.radius * t.uniform_scale()
    if p.kind is Kind.CIRCLE:
        return Primitive(Kind.CIRCLE, new_id, center=new_center, radius=new_radius)
    v0 = t.apply_vector((math.cos(p.start_angle), math.sin(p.start_angle)))
    v1 = t.apply_vector((math.cos(p.end_angle), math.sin(p.end_angle)))
    a0 = math.atan2(v0[1], v0[0])
    a1 = math.atan2(v1[1], v1[0])
    if t.determinant() < 0.0:
        a0, a1 = a1, a0  # reflection flips orientation; keep storage CCW
    return Primitive(Kind.ARC, new_id, center=new_center, radius=new_radius,
                     start_angle=a0, end_angle=a1)


def sample_points(p: Primitive, n: int) -> list[Point]:
    """n points equally spaced in arc length.

    Open curves include both endpoints; circles start at angle 0 and omit
    the duplicate closing point.
    """
    if n < 2:
        raise GeometryError("need at least two sample points")
    if p.kind in (Kind.LINE, Kind.POLYSEG):
        x0, y0 = p.p0
        x1, y1 = p.p1
        return [(x0 + (x1 - x0) * (i / (n - 1)), y0 + (y1 - y0) * (i / (n - 1)))
                for i in range(n)]
    if p.kind is Kind.CIRCLE:
        return [arc_point(p.center, p.radius, TAU * i / n) for i in range(n)]
    sweep = p.sweep
    return [arc_point(p.center, p.radius, p.start_angle + sweep * (i / (n - 1)))
            for i in range(n)]


def _segment_intersects_rect(p0: Point, p1: Point, r: Rect) -> bool:
    # Liang-Barsky clip against the closed box.
    x0, y0 = p0
    dx, dy = p1[0] - x0, p1[1] - y0
    t0, t1 = 0.0, 1.0
    for d, lo, hi in ((dx, r.min_x - x0, r.max_x - x0),
                      (dy, r.min_y - y0, r.max_y - y0)):
        if d == 0.0:
            if lo > 0.0 or hi < 0.0:
                return False
            continue
        ta, tb = lo / d, hi / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return False
    return True


def _circle_segment_angles(center: Point, radius: float, p0: Point, p1: Point) -> list[float]:
    """Angles at which the circle meets the segment p0-p1."""
    ox, oy = p0[0] - center[0], p0[1] - center[1]
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    a = dx * dx + dy * dy
    if a == 0.0:
        return []
    b = 2.0 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - radius * radius
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return []
    sq = math.sqrt(disc)
    out = []
    for t in ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)):
        if 0.0 <= t <= 1.0:
            out.append(math.atan2(oy + t * dy, ox + t * dx))
    return out


def _rect_edges(r: Rect) -> list[tuple[Point, Point]]:
    c = [(r.min_x, r.min_y), (r.max_x, r.min_y), (r.max_x, r.max_y), (r.min_x, r.max_y)]
    return [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]


def _circle_intersects_rect(center: Point, radius: float, r: Rect) -> bool:
    # The primitive is the ring, not the disk: the box must reach the ring.
    cx, cy = center
    nx = min(max(cx, r.min_x), r.max_x)
    ny = min(max(cy, r.min_y), r.max_y)
    d_near = math.hypot(cx - nx, cy - ny)
    fx = r.min_x if abs(cx - r.min_x) > abs(cx - r.max_x) else r.max_x
    fy = r.min_y if abs(cy - r.min_y) > abs(cy - r.max_y) else r.max_y
    d_far = math.hypot(cx - fx, cy - fy)
    return d_near <= radius <= d_far


def intersects_rect(p: Primitive, r: Rect) -> bool:
    """True when the primitive's curve meets the closed box."""
    if p.kind in (Kind.LINE, Kind.POLYSEG):
        return _segment_intersects_rect(p.p0, p.p1, r)
    if p.kind is Kind.CIRCLE:
        return _circle_intersects_rect(p.center, p.radius, r)
    if r.contains_point(arc_point(p.center, p.radius, p.start_angle)):
        return True
    if r.contains_point(arc_point(p.center, p.radius, p.end_angle)):
        return True
    sweep = p.sweep
    for e0, e1 in _rect_edges(r):
        for phi in _circle_segment_angles(p.center, p.radius, e0, e1):
            if _angle_in_sweep(normalize_angle(phi), p.start_angle, sweep):
                return True
    return False


def primitives_close(a: Primitive, b: Primitive, tol: float = ABS_TOL) -> bool:
    """Geometric equality within an absolute tolerance (ids ignored)."""
    if a.kind is not b.kind:
        return False

    def close(u: float, v: float) -> bool:
        return abs(u - v) <= tol

    if a.kind in (Kind.LINE, Kind.POLYSEG):
        return all(close(x, y) for x, y in zip(a.p0 + a.p1, b.p0 + b.p1))
    if not (close(a.center[0], b.center[0]) and close(a.center[1], b.center[1])
            and close(a.radius, b.radius)):
        return False
    if a.kind is Kind.CIRCLE:
        return True
    da = abs(normalize_angle(a.start_angle - b.start_angle))
    de = abs(normalize_angle(a.end_angle - b.end_angle))
    return min(da, TAU - da) <= tol and min(de, TAU - de) <= tol
