"""Computational lattice: interior points, boundary layer, stencil, partition."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from .geometry import EMPTY, Polygon, clip_polygon


# largest co-prime component accepted for a target edge direction
MAX_DENOMINATOR = 10**4


class EmptyGridError(ValueError):
    pass


class StencilError(ValueError):
    pass


class Grid:
    """Lattice ``h Z^2`` restricted to the open convex polygon ``domain``.

    Sites are stored as integer multi-indices ``(i, j)`` (real point
    ``(i h, j h)``) in lexicographic order; that order is the sweep order used
    everywhere.
    """

    def __init__(self, h: float, domain: Polygon, index: np.ndarray):
        self.h = float(h)
        self.domain = domain
        self.index = np.asarray(index, dtype=np.int64)
        self.index.setflags(write=False)
        self.slot = {(int(i), int(j)): k for k, (i, j) in enumerate(self.index)}
        mask = np.zeros(len(self.index), dtype=bool)
        for k, (i, j) in enumerate(self.index):
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                if (int(i) + di, int(j) + dj) not in self.slot:
                    mask[k] = True
                    break
        mask.setflags(write=False)
        self.boundary_mask = mask
        self._ext_masks = {}

    def __len__(self):
        return len(self.index)

    def __contains__(self, ij):
        return (int(ij[0]), int(ij[1])) in self.slot

    @property
    def points(self) -> np.ndarray:
        return self.index * self.h

    @property
    def interior_points(self) -> np.ndarray:
        return self.points

    @property
    def boundary_index(self) -> np.ndarray:
        return self.index[self.boundary_mask]

    @property
    def boundary_layer(self) -> np.ndarray:
        return self.boundary_index * self.h

    def point(self, ij) -> np.ndarray:
        return np.asarray(ij, dtype=float) * self.h

    def nearest_site(self, point) -> tuple[int, int]:
        """Grid site nearest to ``point``; ties go to the lexicographically smallest."""
        d = np.hypot(*(self.points - np.asarray(point, dtype=float)).T)
        k = int(np.flatnonzero(d <= d.min() + 1e-12)[0])
        return tuple(int(c) for c in self.index[k])

    def to_json(self):
        return {
            "h": self.h,
            "domain": self.domain.to_json(),
            "interior": self.index.tolist(),
            "boundary_layer": self.boundary_index.tolist(),
        }


def _strictly_inside(domain: Polygon, pts: np.ndarray, tol=1e-12) -> np.ndarray:
    ok = np.ones(len(pts), dtype=bool)
    for hp in domain.halfplanes():
        n = np.asarray(hp.normal)
        ok &= pts @ n - hp.offset > tol * float(np.hypot(*n))
    return ok


def build_grid(h: float, domain: Polygon | None = None) -> Grid:
    """Lattice points of ``h Z^2`` strictly inside ``domain`` (default ``(0,1)^2``)."""
    if not h > 0:
        raise ValueError("mesh size h must be positive")
    if domain is None:
        domain = Polygon.box(0.0, 0.0, 1.0, 1.0)
    x0, y0, x1, y1 = domain.bounding_box()
    i = np.arange(math.floor(x0 / h), math.ceil(x1 / h) + 1)
    j = np.arange(math.floor(y0 / h), math.ceil(y1 / h) + 1)
    ii, jj = np.meshgrid(i, j, indexing="ij")
    idx = np.column_stack([ii.ravel(), jj.ravel()])
    idx = idx[_strictly_inside(domain, idx * h)]
    if len(idx) == 0:
        raise EmptyGridError(f"mesh size h={h} leaves no lattice point inside the domain")
    return Grid(h, domain, idx)


@dataclass(frozen=True)
class Stencil:
    """Symmetric set of co-prime integer directions."""

    directions: np.ndarray
    radius: int

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.int64).reshape(-1, 2)
        d.setflags(write=False)
        object.__setattr__(self, "directions", d)

    def __len__(self):
        return len(self.directions)

    def __iter__(self):
        return iter(map(tuple, self.directions.tolist()))

    def __contains__(self, e):
        return tuple(int(c) for c in e) in set(self)

    @property
    def reach(self) -> int:
        return int(np.abs(self.directions).max())

    def to_json(self):
        return {"radius": self.radius, "directions": self.directions.tolist()}


def _integer_direction(d, tol=1e-12):
    """Reduce a real direction with rational slope to co-prime integer form."""
    dx, dy = float(d[0]), float(d[1])
    scale = max(abs(dx), abs(dy))
    if scale == 0.0:
        raise StencilError("degenerate edge")
    dx, dy = dx / scale, dy / scale
    if abs(dx) <= tol:
        return 0, int(math.copysign(1, dy))
    if abs(dy) <= tol:
        return int(math.copysign(1, dx)), 0
    if abs(dx) >= abs(dy):
        r = Fraction(dy / dx).limit_denominator(MAX_DENOMINATOR)
        a, b = r.denominator, r.numerator
        if abs(float(r) - dy / dx) > tol * (1 + abs(dy / dx)):
            raise StencilError("irrational slope")
        sign = 1 if dx > 0 else -1
        return sign * a, sign * b
    r = Fraction(dx / dy).limit_denominator(MAX_DENOMINATOR)
    if abs(float(r) - dx / dy) > tol * (1 + abs(dx / dy)):
        raise StencilError("irrational slope")
    sign = 1 if dy > 0 else -1
    return sign * r.numerator, sign * r.denominator


def edge_normals(target: Polygon) -> list[tuple[int, int]]:
    """Co-prime integer inward normals of the edges of ``target``."""
    out = []
    for d in target.edges():
        try:
            ex, ey = _integer_direction(d)
        except StencilError:
            raise StencilError(
                f"edge {d.tolist()} of the target polygon has an irrational slope; "
                "use a lattice polygon (integer vertices after rescaling)"
            ) from None
        n = (-ey, ex)
        g = math.gcd(abs(n[0]), abs(n[1]))
        out.append((n[0] // g, n[1] // g))
    return out


def extension_mask(grid: Grid, target: Polygon) -> np.ndarray:
    """Sites whose values enter the extension formula for ``target``.

    This is the boundary layer plus every site ``x`` with ``x + h n`` or
    ``x - h n`` outside the grid for an edge normal ``n`` of ``target``. With
    the canonical layer alone, a stencil step along a long normal can leave
    the grid from a site that is not in the layer, and the extension then
    fails to bound the increment by the support function.
    """
    try:
        normals = sorted(set(edge_normals(target)))
    except StencilError:
        normals = []
    key = tuple(normals)
    hit = grid._ext_masks.get(key)
    if hit is not None:
        return hit
    mask = grid.boundary_mask.copy()
    slot = grid.slot
    for k, (i, j) in enumerate(grid.index.tolist()):
        if mask[k]:
            continue
        for a, b in normals:
            if (i + a, j + b) not in slot or (i - a, j - b) not in slot:
                mask[k] = True
                break
    mask.setflags(write=False)
    grid._ext_masks[key] = mask
    return mask


def build_stencil(radius: int, target: Polygon | None = None) -> Stencil:
    """Co-prime vectors with infinity norm at most ``radius`` plus the edge normals of ``target``."""
    radius = int(radius)
    if radius < 1:
        raise ValueError("stencil radius must be >= 1")
    dirs = {
        (a, b)
        for a in range(-radius, radius + 1)
        for b in range(-radius, radius + 1)
        if (a, b) != (0, 0) and math.gcd(abs(a), abs(b)) == 1
    }
    if target is not None:
        for n in edge_normals(target):
            dirs.add(n)
            dirs.add((-n[0], -n[1]))
    ordered = sorted(dirs, key=lambda e: (math.atan2(e[1], e[0]) % (2 * math.pi), abs(e[0]) + abs(e[1])))
    return Stencil(np.array(ordered, dtype=np.int64), radius)


@dataclass(frozen=True)
class PartitionCell:
    """The region ``E_x`` attached to one site, as a union of convex pieces."""

    site: tuple[int, int]
    pieces: tuple[Polygon, ...]

    @property
    def area(self) -> float:
        return sum(p.area for p in self.pieces)

    @property
    def region(self) -> Polygon | None:
        """The cell as one polygon when it has a single piece."""
        return self.pieces[0] if len(self.pieces) == 1 else None


def build_partition(grid: Grid) -> list[PartitionCell]:
    """Boxes ``x + [-h/2, h/2]^2`` clipped to the domain; boundary slivers go to the nearest site."""
    h = grid.h
    domain = grid.domain
    hps = domain.halfplanes()
    x0, y0, x1, y1 = domain.bounding_box()
    pieces = {k: [] for k in grid.slot}
    pts = grid.points
    for i in range(math.floor(x0 / h) - 1, math.ceil(x1 / h) + 2):
        for j in range(math.floor(y0 / h) - 1, math.ceil(y1 / h) + 2):
            box = Polygon.box((i - 0.5) * h, (j - 0.5) * h, (i + 0.5) * h, (j + 0.5) * h)
            piece = clip_polygon(box, hps)
            if piece is EMPTY:
                continue
            if (i, j) in grid.slot:
                pieces[(i, j)].append(piece)
                continue
            d = np.hypot(*(pts - piece.centroid).T)
            k = int(np.flatnonzero(d <= d.min() + 1e-12)[0])
            owner = tuple(int(c) for c in grid.index[k])
            pieces[owner].append(piece)
    return [PartitionCell(site, tuple(pieces[site])) for site in map(tuple, grid.index.tolist())]


class Layout:
    """Padded index box around the grid, as used by the compiled kernels.

    ``pad_index(i, j)`` maps lattice indices to positions in a 2-D array that
    covers every point ``x - h e`` for ``x`` in the grid and ``e`` in the
    stencil.
    """

    def __init__(self, grid: Grid, stencil: Stencil):
        self.grid = grid
        self.stencil = stencil
        r = stencil.reach
        lo = grid.index.min(axis=0) - r
        hi = grid.index.max(axis=0) + r
        self.origin = lo
        self.shape = tuple(int(c) for c in hi - lo + 1)
        self.sites = np.ascontiguousarray(grid.index - lo, dtype=np.int64)
        inside = np.zeros(self.shape, dtype=bool)
        inside[self.sites[:, 0], self.sites[:, 1]] = True
        needed = np.zeros(self.shape, dtype=bool)
        for e in stencil.directions:
            q = self.sites - e
            needed[q[:, 0], q[:, 1]] = True
        needed &= ~inside
        self.inside = inside
        self.exterior = np.ascontiguousarray(np.argwhere(needed), dtype=np.int64)
        self.dirs = np.ascontiguousarray(stencil.directions, dtype=np.int64)

    def neighbours_of(self, k: int) -> np.ndarray:
        """Slots of sites whose cell constraints read the value at site ``k``."""
        slot = self.grid.slot
        i, j = (int(c) for c in self.grid.index[k])
        out = {k}
        for e in self.stencil.directions.tolist():
            s = slot.get((i + e[0], j + e[1]))
            if s is not None:
                out.add(s)
        return np.array(sorted(out), dtype=np.int64)

    @cached_property
    def touching_exterior(self) -> np.ndarray:
        """Slots of sites with at least one stencil neighbour outside the grid."""
        out = []
        for k, s in enumerate(self.sites):
            q = s - self.dirs
            if not np.all(self.inside[q[:, 0], q[:, 1]]):
                out.append(k)
        return np.array(out, dtype=np.int64)
