"""Mesh functions on the lattice and their asymptotic-cone extension.

Outside the grid a mesh function takes the value

    v(x) = min_{y in boundary layer} ( v(y) + max_j (x - y) . a_j )

where ``a_j`` are the vertices of the target polygon. The layer is the
canonical boundary layer widened by the sites that leave the grid in one
step along an edge normal of the target (see ``extension_mask``). Cached
extension values are dropped whenever a layer value changes.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import Polygon
from .lattice import Grid, Layout, Stencil, extension_mask

CONVEXITY_TOL = 1e-10


@dataclass(frozen=True)
class ConeFunction:
    """``k(x) = max_j (x - apex) . a_j + level`` for the vertices ``a_j`` of ``target``."""

    apex: tuple[float, float]
    level: float
    target: Polygon

    def __call__(self, x) -> float:
        return cone_value(self, x)


def cone_value(cone: ConeFunction, x) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(cone.apex, dtype=float)
    return float((cone.target.vertices @ d).max()) + float(cone.level)


class MeshFunction:
    """Values on the grid sites, extended to the whole lattice on demand."""

    def __init__(self, grid: Grid, values, target: Polygon):
        self.grid = grid
        self.target = target
        vals = np.array(values, dtype=float).reshape(-1)
        if vals.shape[0] != len(grid):
            raise ValueError(f"expected {len(grid)} values, got {vals.shape[0]}")
        self._values = vals
        self._ext_cache = {}
        self._padded = {}
        self.layer_mask = extension_mask(grid, target)

    @classmethod
    def from_function(cls, grid: Grid, target: Polygon, func) -> "MeshFunction":
        return cls(grid, [func(p) for p in grid.points], target)

    @property
    def values(self) -> np.ndarray:
        v = self._values.view()
        v.setflags(write=False)
        return v

    @values.setter
    def values(self, new):
        new = np.array(new, dtype=float).reshape(self._values.shape)
        if np.any(new[self.layer_mask] != self._values[self.layer_mask]):
            self._ext_cache.clear()
        self._values = new
        self._padded.clear()

    def set_value(self, ij, value):
        k = self.grid.slot[(int(ij[0]), int(ij[1]))]
        if self.layer_mask[k] and value != self._values[k]:
            self._ext_cache.clear()
        self._values[k] = float(value)
        self._padded.clear()

    def copy(self) -> "MeshFunction":
        return MeshFunction(self.grid, self._values.copy(), self.target)

    def with_values(self, values) -> "MeshFunction":
        return MeshFunction(self.grid, values, self.target)

    def __call__(self, ij) -> float:
        k = self.grid.slot.get((int(ij[0]), int(ij[1])))
        if k is not None:
            return float(self._values[k])
        return self._extend(ij)[0]

    def _extend(self, ij):
        key = (int(ij[0]), int(ij[1]))
        hit = self._ext_cache.get(key)
        if hit is not None:
            return hit
        g = self.grid
        bidx = np.flatnonzero(self.layer_mask)
        diff = (np.asarray(key) - g.index[bidx]) * g.h
        lin = diff @ self.target.vertices.T
        jmax = lin.argmax(axis=1)
        cand = self._values[bidx] + lin[np.arange(len(bidx)), jmax]
        b = int(cand.argmin())
        hit = (float(cand[b]), int(bidx[b]), int(jmax[b]))
        self._ext_cache[key] = hit
        return hit

    def extend_witness(self, ij):
        """``(value, boundary_slot, vertex_index)`` realising the extension at ``ij``."""
        return self._extend(ij)

    def padded(self, layout: Layout) -> np.ndarray:
        """Values on the layout's padded box (exterior entries hold extension values)."""
        key = id(layout)
        hit = self._padded.get(key)
        if hit is not None and hit[0] is layout:
            return hit[1]
        U = np.full(layout.shape, np.nan)
        U[layout.sites[:, 0], layout.sites[:, 1]] = self._values
        fill = _kernels.fill_exterior
        fill(U, layout.sites[self.layer_mask].copy(), layout.exterior,
             np.ascontiguousarray(self.target.vertices), self.grid.h)
        U.setflags(write=False)
        self._padded[key] = (layout, U)
        return U

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("i,j,value\n")
        for (i, j), v in zip(self.grid.index.tolist(), self._values):
            buf.write(f"{i},{j},{v:.17g}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "h": self.grid.h,
                "target": self.target.to_json(),
                "index": self.grid.index.tolist(),
                "values": [float(f"{v:.17g}") for v in self._values],
            }
        )


def extend(fn: MeshFunction, x) -> float:
    """Value of ``fn`` at the lattice index ``x`` (stored, or by the extension formula)."""
    return fn(x)


def second_difference(fn: MeshFunction, x, e, h=None) -> float:
    """``v(x + h e) - 2 v(x) + v(x - h e)`` at lattice index ``x``.

    ``h`` is implied by the grid; the argument is accepted for symmetry with
    the formula and must match it when given.
    """
    if h is not None and abs(h - fn.grid.h) > 1e-15:
        raise ValueError("h does not match the grid of the mesh function")
    i, j = int(x[0]), int(x[1])
    a, b = int(e[0]), int(e[1])
    return fn((i + a, j + b)) - 2.0 * fn((i, j)) + fn((i - a, j - b))


def second_differences(fn: MeshFunction, stencil: Stencil, layout: Layout | None = None) -> np.ndarray:
    """All second differences, shape ``(sites, directions)``."""
    layout = layout or Layout(fn.grid, stencil)
    U = fn.padded(layout)
    s = layout.sites
    out = np.empty((len(s), len(layout.dirs)))
    for k, e in enumerate(layout.dirs):
        out[:, k] = U[s[:, 0] + e[0], s[:, 1] + e[1]] - 2.0 * U[s[:, 0], s[:, 1]] + U[s[:, 0] - e[0], s[:, 1] - e[1]]
    return out


def is_discrete_convex(fn: MeshFunction, stencil: Stencil, tol=CONVEXITY_TOL, layout=None):
    """``(True, None)`` or ``(False, (site_index, direction))`` for the first violation.

    Sites are scanned in grid order, directions in stencil order.
    """
    d2 = second_differences(fn, stencil, layout)
    bad = np.argwhere(d2 < -tol)
    if len(bad) == 0:
        return True, None
    k, e = bad[0]
    return False, (tuple(int(c) for c in fn.grid.index[k]), tuple(int(c) for c in stencil.directions[e]))


def cone_samples(grid: Grid, target: Polygon, apex_index, level=0.0) -> MeshFunction:
    cone = ConeFunction(tuple(grid.point(apex_index)), float(level), target)
    return MeshFunction.from_function(grid, target, cone)
