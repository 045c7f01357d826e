"""Convex polygon primitives in the plane.

Everything here is two-dimensional. Polygons are stored as ``(k, 2)`` float
arrays of counter-clockwise vertices in strictly convex position. Half-plane
intersections are computed by successive Sutherland-Hodgman clipping.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .quadrature import triangle_rule

DUPLICATE_TOL = 1e-12
AREA_TOL = 1e-14


class GeometryError(ValueError):
    pass


class Region(enum.Enum):
    """Non-polygon outcomes of a half-plane intersection."""

    EMPTY = "empty"
    UNBOUNDED = "unbounded"


EMPTY = Region.EMPTY
UNBOUNDED = Region.UNBOUNDED


@dataclass(frozen=True)
class HalfPlane:
    """The closed half-plane ``{p : normal . p >= offset}``."""

    normal: tuple[float, float]
    offset: float

    def __post_init__(self):
        nx, ny = (float(c) for c in self.normal)
        if nx == 0.0 and ny == 0.0:
            raise GeometryError("half-plane normal must be nonzero")
        object.__setattr__(self, "normal", (nx, ny))
        object.__setattr__(self, "offset", float(self.offset))

    def value(self, p) -> float:
        return self.normal[0] * p[0] + self.normal[1] * p[1] - self.offset

    def contains(self, p, tol=1e-12) -> bool:
        return self.value(p) >= -tol


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _clean(points, tol=DUPLICATE_TOL):
    """Drop repeated and collinear vertices from a convex CCW vertex loop."""
    pts = []
    for p in points:
        if not pts or abs(p[0] - pts[-1][0]) > tol or abs(p[1] - pts[-1][1]) > tol:
            pts.append((float(p[0]), float(p[1])))
    while len(pts) > 1 and abs(pts[0][0] - pts[-1][0]) <= tol and abs(pts[0][1] - pts[-1][1]) <= tol:
        pts.pop()
    if len(pts) < 3:
        return pts
    scale = max(max(abs(c) for p in pts for c in p), 1e-300)
    ext = max(
        max(p[0] for p in pts) - min(p[0] for p in pts),
        max(p[1] for p in pts) - min(p[1] for p in pts),
    )
    ctol = 1e-13 * max(ext, 1e-3 * scale) * ext
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        n = len(pts)
        for k in range(n):
            if _cross(pts[k - 1], pts[k], pts[(k + 1) % n]) <= ctol:
                del pts[k]
                changed = True
                break
    return pts


class Polygon:
    """A convex polygon with counter-clockwise vertices."""

    __slots__ = ("vertices", "_area", "_centroid")

    def __init__(self, vertices, *, check=True):
        v = np.asarray(vertices, dtype=float).reshape(-1, 2)
        if check:
            if v.shape[0] < 3:
                raise GeometryError(f"polygon needs at least 3 vertices, got {v.shape[0]}")
            n = v.shape[0]
            for k in range(n):
                d = v[(k + 1) % n] - v[k]
                if abs(d[0]) <= DUPLICATE_TOL and abs(d[1]) <= DUPLICATE_TOL:
                    raise GeometryError(f"consecutive vertices {k} and {(k + 1) % n} coincide")
            ext = float(np.ptp(v, axis=0).max())
            for k in range(n):
                if _cross(v[k - 1], v[k], v[(k + 1) % n]) <= 1e-14 * ext * ext:
                    raise GeometryError(
                        f"vertices are not in strictly convex counter-clockwise position (at vertex {k})"
                    )
        v.setflags(write=False)
        self.vertices = v
        self._area = None
        self._centroid = None

    @classmethod
    def box(cls, x0, y0, x1, y1):
        return cls([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        return cls(data)

    def to_json(self):
        return [[float(x), float(y)] for x, y in self.vertices]

    def __len__(self):
        return self.vertices.shape[0]

    def __iter__(self):
        return iter(map(tuple, self.vertices))

    def __repr__(self):
        pts = ", ".join(f"({x:.6g}, {y:.6g})" for x, y in self.vertices)
        return f"Polygon([{pts}])"

    @property
    def area(self) -> float:
        if self._area is None:
            self._moments()
        return self._area

    @property
    def centroid(self) -> np.ndarray:
        if self._centroid is None:
            self._moments()
        return self._centroid

    def _moments(self):
        v = self.vertices - self.vertices[0]
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cr = x * yn - xn * y
        a = 0.5 * cr.sum()
        cx = ((x + xn) * cr).sum() / (6.0 * a)
        cy = ((y + yn) * cr).sum() / (6.0 * a)
        self._area = float(a)
        self._centroid = np.array([cx, cy]) + self.vertices[0]

    def edges(self):
        v = self.vertices
        return np.roll(v, -1, axis=0) - v

    def halfplanes(self) -> list[HalfPlane]:
        """Edge constraints ``n . p >= c`` with inward normals."""
        out = []
        for p, d in zip(self.vertices, self.edges()):
            n = (-d[1], d[0])
            out.append(HalfPlane(n, n[0] * p[0] + n[1] * p[1]))
        return out

    def contains(self, point, tol=1e-12) -> bool:
        return all(hp.value(point) >= -tol * math.hypot(*hp.normal) for hp in self.halfplanes())

    def contains_polygon(self, other: "Polygon", tol=1e-12) -> bool:
        return all(self.contains(p, tol) for p in other.vertices)

    def translate(self, shift) -> "Polygon":
        return Polygon(self.vertices + np.asarray(shift, dtype=float), check=False)

    def dilate(self, factor, center=None) -> "Polygon":
        c = self.centroid if center is None else np.asarray(center, dtype=float)
        return Polygon(c + factor * (self.vertices - c), check=False)

    def bounding_box(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def same_as(self, other: "Polygon", tol=1e-10) -> bool:
        """Vertex-for-vertex equality up to cyclic rotation."""
        if len(self) != len(other):
            return False
        a, b = self.vertices, other.vertices
        for shift in range(len(b)):
            if np.all(np.abs(a - np.roll(b, -shift, axis=0)) <= tol):
                return True
        return False


def _clip(points, n, c):
    """Clip a convex vertex loop by ``n . p >= c`` (Sutherland-Hodgman)."""
    out = []
    m = len(points)
    if m == 0:
        return out
    nx, ny = n
    prev = points[-1]
    sp = nx * prev[0] + ny * prev[1] - c
    for cur in points:
        sc = nx * cur[0] + ny * cur[1] - c
        if sc >= 0.0:
            if sp < 0.0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            out.append(cur)
        elif sp >= 0.0:
            t = sp / (sp - sc)
            out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
        prev, sp = cur, sc
    return out


def _clip_all(points, constraints):
    for hp in constraints:
        points = _clip(points, hp.normal, hp.offset)
        if not points:
            break
    return points


def _loop_area(points):
    a = 0.0
    n = len(points)
    x0, y0 = points[0]
    for k in range(n):
        x1, y1 = points[k]
        x2, y2 = points[(k + 1) % n]
        a += (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    return 0.5 * a


def clip_polygon(poly: Polygon, constraints: Sequence[HalfPlane]) -> Polygon | Region:
    """Intersect a polygon with half-planes; ``EMPTY`` for measure-zero results."""
    pts = _clean(_clip_all([tuple(p) for p in poly.vertices], constraints))
    if len(pts) < 3 or _loop_area(pts) < AREA_TOL:
        return EMPTY
    return Polygon(pts, check=False)


def intersect_half_planes(constraints: Sequence[HalfPlane]) -> Polygon | Region:
    """Intersection of closed half-planes.

    Returns a :class:`Polygon`, or ``EMPTY`` when the region is infeasible or
    has area below ``1e-14``, or ``UNBOUNDED`` when it contains a ray.
    """
    constraints = list(constraints)
    if not constraints:
        raise GeometryError("need at least one half-plane")
    scale = 1.0
    for hp in constraints:
        scale = max(scale, abs(hp.offset) / math.hypot(*hp.normal))
    big = 1e8 * scale
    start = [(-big, -big), (big, -big), (big, big), (-big, big)]
    pts = _clip_all(start, constraints)
    if len(pts) < 3:
        return EMPTY
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    reach = max(max(abs(c) for c in xs), max(abs(c) for c in ys))
    if reach >= big * (1.0 - 1e-9):
        if _loop_area(pts) <= 0.0:
            return EMPTY
        return UNBOUNDED
    # second pass from a tight box keeps round-off relative to the region size
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    pad = 1e-6 * max(x1 - x0, y1 - y0) + 1e-12 * big
    start = [(x0 - pad, y0 - pad), (x1 + pad, y0 - pad), (x1 + pad, y1 + pad), (x0 - pad, y1 + pad)]
    pts = _clean(_clip_all(start, constraints))
    if len(pts) < 3 or _loop_area(pts) < AREA_TOL:
        return EMPTY
    return Polygon(pts, check=False)


def support_function(poly: Polygon, direction) -> float:
    """``max_{p in poly} direction . p``, attained at a vertex."""
    d = np.asarray(direction, dtype=float)
    if not np.any(d):
        raise GeometryError("support function direction must be nonzero")
    return float((poly.vertices @ d).max())


def polygon_area(poly: Polygon) -> float:
    return poly.area


def polygon_centroid(poly: Polygon) -> np.ndarray:
    return poly.centroid.copy()


@dataclass(frozen=True)
class Density:
    """A nonnegative density on a convex support polygon, zero outside it.

    ``coeffs[i][j]`` (when present) holds the coefficient of ``p1**i * p2**j``;
    polynomial densities can be integrated by the compiled kernels.
    """

    evaluator: Callable = field(repr=False)
    kind: str
    support: Polygon | None = None
    coeffs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("constant", "affine", "general"):
            raise ValueError(f"unknown density kind {self.kind!r}")

    def __call__(self, p):
        return self.evaluator(p)

    @classmethod
    def constant(cls, value, support=None):
        value = float(value)
        if value < 0:
            raise ValueError("density must be nonnegative")
        return cls(lambda p: value, "constant", support, np.array([[value]]))

    @classmethod
    def affine(cls, c0, c1, c2, support=None):
        c0, c1, c2 = float(c0), float(c1), float(c2)
        if c1 == 0.0 and c2 == 0.0:
            return cls.constant(c0, support)
        return cls(lambda p: c0 + c1 * p[0] + c2 * p[1], "affine", support,
                   np.array([[c0, c2], [c1, 0.0]]))

    @classmethod
    def polynomial(cls, coeffs, support=None):
        c = np.atleast_2d(np.asarray(coeffs, dtype=float))
        deg = max(i + j for i in range(c.shape[0]) for j in range(c.shape[1]) if c[i, j] != 0.0) \
            if np.any(c) else 0
        if deg == 0:
            return cls.constant(c[0, 0], support)
        if deg == 1:
            get = lambda i, j: c[i, j] if i < c.shape[0] and j < c.shape[1] else 0.0  # noqa: E731
            return cls.affine(get(0, 0), get(1, 0), get(0, 1), support)

        def ev(p):
            return float(np.polynomial.polynomial.polyval2d(p[0], p[1], c))

        return cls(ev, "general", support, c)

    @classmethod
    def general(cls, func, support=None):
        return cls(func, "general", support, None)

    @property
    def degree(self):
        if self.coeffs is None:
            return None
        c = self.coeffs
        return max((i + j for i in range(c.shape[0]) for j in range(c.shape[1]) if c[i, j] != 0.0),
                   default=0)

    def restricted(self, support):
        return Density(self.evaluator, self.kind, support, self.coeffs)


def integrate_density(poly: Polygon | Region, rho: Density, order=5) -> float:
    """Integral of ``rho`` over ``poly`` (clipped to the support of ``rho``)."""
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    if not isinstance(poly, Polygon):
        return 0.0
    if rho.support is not None:
        poly = clip_polygon(poly, rho.support.halfplanes())
        if not isinstance(poly, Polygon):
            return 0.0
    if rho.kind == "constant":
        return float(rho(poly.centroid)) * poly.area
    if rho.kind == "affine":
        return max(float(rho(poly.centroid)) * poly.area, 0.0)
    deg = rho.degree
    bary, w = triangle_rule(max(order, deg) if deg is not None else order)
    c = poly.centroid
    v = poly.vertices
    total = 0.0
    for k in range(len(v)):
        a, b = v[k], v[(k + 1) % len(v)]
        tri_area = 0.5 * ((a[0] - c[0]) * (b[1] - c[1]) - (b[0] - c[0]) * (a[1] - c[1]))
        pts = bary[:, :1] * c + bary[:, 1:2] * a + bary[:, 2:3] * b
        vals = np.array([rho(p) for p in pts], dtype=float)
        total += tri_area * float(w @ vals)
    return max(total, 0.0)


def point_polygon_distance(point, poly: Polygon) -> float:
    """Euclidean distance from a point to a (filled) convex polygon."""
    p = np.asarray(point, dtype=float)
    if poly.contains(p, tol=0.0):
        return 0.0
    best = math.inf
    v = poly.vertices
    for k in range(len(v)):
        a, b = v[k], v[(k + 1) % len(v)]
        d = b - a
        t = min(max(float((p - a) @ d) / float(d @ d), 0.0), 1.0)
        best = min(best, float(np.hypot(*(a + t * d - p))))
    return best


def hausdorff_distance(a: Polygon, b: Polygon) -> float:
    """Hausdorff distance between two convex polygons (as filled sets).

    The distance to a convex set is convex, so each one-sided sup is attained
    at a vertex.
    """
    ab = max(point_polygon_distance(p, b) for p in a.vertices)
    ba = max(point_polygon_distance(p, a) for p in b.vertices)
    return max(ab, ba)
